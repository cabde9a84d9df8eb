fn main() {
    std::process::exit(quadcam::cli::run(std::env::args_os()));
}
