fn main() {
    std::process::exit(aircal::cli::run());
}
