fn main() {
    std::process::exit(tabhash_cli::run(std::env::args_os()));
}
