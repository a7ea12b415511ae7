fn main() {
    std::process::exit(stfseb::cli::run(std::env::args_os()));
}
