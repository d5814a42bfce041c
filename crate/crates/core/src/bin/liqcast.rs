fn main() {
    std::process::exit(liqcast::cli::run(std::env::args_os()));
}
