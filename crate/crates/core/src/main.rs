fn main() {
    std::process::exit(minescan::cli::run(std::env::args_os()));
}
