fn main() {
    std::process::exit(skeladapt::cli::run(std::env::args_os()));
}
