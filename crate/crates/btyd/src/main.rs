fn main() {
    std::process::exit(btyd::cli::run_cli(std::env::args()));
}
