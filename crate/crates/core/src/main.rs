fn main() {
    std::process::exit(phaseflow::cli::run(std::env::args_os()));
}
