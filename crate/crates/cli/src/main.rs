fn main() {
    std::process::exit(graphpick_cli::cli_main(std::env::args_os()));
}
