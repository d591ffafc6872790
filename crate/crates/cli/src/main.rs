fn main() {
    std::process::exit(axcgp_cli::run(std::env::args_os()));
}
