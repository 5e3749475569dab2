fn main() {
    std::process::exit(readapt::cli::run(std::env::args_os()));
}
