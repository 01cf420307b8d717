fn main() {
    std::process::exit(cosmovae::cli::main());
}
