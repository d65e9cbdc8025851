fn main() {
    std::process::exit(binnet_cli::run(std::env::args_os()));
}
