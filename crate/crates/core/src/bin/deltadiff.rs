fn main() {
    std::process::exit(deltadiff::cli::run_from(std::env::args_os()));
}
