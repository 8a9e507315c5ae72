fn main() {
    std::process::exit(stereo_cli::run(std::env::args_os()));
}
