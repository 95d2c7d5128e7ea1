fn main() {
    std::process::exit(sparsekit::cli::run());
}
