fn main() {
    std::process::exit(vcdiff::cli::run_from(std::env::args_os()));
}
