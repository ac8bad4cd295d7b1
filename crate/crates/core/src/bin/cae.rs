fn main() {
    std::process::exit(cae::cli::run(std::env::args_os()));
}
