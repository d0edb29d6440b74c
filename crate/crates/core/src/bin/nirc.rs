fn main() {
    std::process::exit(nircolor::cli::run(std::env::args_os()));
}
