fn main() {
    std::process::exit(normkit::cli::run());
}
