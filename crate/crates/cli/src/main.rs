fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(smartbal_cli::cli_entry(args));
}
