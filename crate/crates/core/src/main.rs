fn main() {
    std::process::exit(lflow::cli::run(std::env::args_os()));
}
