fn main() {
    std::process::exit(styleprobe::cli::run(std::env::args_os()));
}
