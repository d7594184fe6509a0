fn main() {
    std::process::exit(forgerykit::cli::run(std::env::args_os()));
}
