fn main() {
    std::process::exit(ridgecraft::cli::run(std::env::args_os()));
}
