fn main() {
    std::process::exit(spacemean_cli::run(std::env::args()));
}
