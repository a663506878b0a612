fn main() {
    std::process::exit(sba_cli::run(std::env::args_os()));
}
