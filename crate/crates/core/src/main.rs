fn main() {
    std::process::exit(dmove::cli::run(std::env::args_os()));
}
