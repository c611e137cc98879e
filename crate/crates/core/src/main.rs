fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(mgrbm::cli::run(&argv));
}
