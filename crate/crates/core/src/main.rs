fn main() {
    std::process::exit(pfcontrol::cli::run(std::env::args_os()));
}
