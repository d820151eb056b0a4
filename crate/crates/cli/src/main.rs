fn main() {
    std::process::exit(kvclt_cli::run(std::env::args()));
}
