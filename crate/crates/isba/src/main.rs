fn main() {
    std::process::exit(isba::cli::run(std::env::args_os()));
}
