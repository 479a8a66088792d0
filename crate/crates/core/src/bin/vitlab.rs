fn main() {
    std::process::exit(vitlab::cli::run_from_args(std::env::args_os()));
}
