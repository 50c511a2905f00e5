fn main() {
    std::process::exit(structcox::cli::run(std::env::args_os()));
}
