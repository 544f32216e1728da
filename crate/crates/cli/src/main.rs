fn main() {
    std::process::exit(portrait_cli::cli_main(std::env::args_os()));
}
