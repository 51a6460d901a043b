fn main() {
    std::process::exit(mire_cli::run_from(std::env::args_os()));
}
