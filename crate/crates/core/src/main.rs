fn main() {
    std::process::exit(mitosim::cli::run(std::env::args_os()));
}
