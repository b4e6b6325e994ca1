fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(bridgelab::cli::parse_and_dispatch(&args));
}
