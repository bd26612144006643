fn main() {
    std::process::exit(arco_cli::run(std::env::args_os()));
}
