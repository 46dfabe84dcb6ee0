fn main() {
    std::process::exit(urbanwind::cli::run(std::env::args()));
}
