fn main() {
    std::process::exit(nns::cli::run_cli(std::env::args_os()));
}
