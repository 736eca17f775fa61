fn main() {
    std::process::exit(limbrl::cli::run());
}
