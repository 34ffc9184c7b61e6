fn main() {
    std::process::exit(killing_lab::cli::run());
}
