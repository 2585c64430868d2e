fn main() {
    std::process::exit(tabimpute::cli::run(std::env::args_os()));
}
