fn main() {
    std::process::exit(chebysfda_cli::run_cli(std::env::args_os()));
}
