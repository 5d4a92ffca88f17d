fn main() {
    std::process::exit(labelce::cli::run_cli(std::env::args_os()));
}
