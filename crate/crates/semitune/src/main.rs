fn main() {
    std::process::exit(semitune::cli::run(std::env::args_os()));
}
