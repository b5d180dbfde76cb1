fn main() {
    std::process::exit(fdlp::cli::run(std::env::args_os()));
}
