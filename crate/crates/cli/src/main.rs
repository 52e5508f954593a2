fn main() {
    std::process::exit(enk_cli::run(std::env::args_os()));
}
