fn main() {
    std::process::exit(clb_cli::run(std::env::args_os()));
}
