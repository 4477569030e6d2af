fn main() {
    std::process::exit(lssl::cli::run(std::env::args_os()));
}
