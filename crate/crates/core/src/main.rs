fn main() {
    std::process::exit(singset::cli::run(std::env::args()));
}
