fn main() {
    std::process::exit(terrapose::cli::run(std::env::args_os()));
}
