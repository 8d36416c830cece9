fn main() {
    std::process::exit(comet_core::cli::run(std::env::args_os()));
}
