fn main() {
    std::process::exit(aba::cli::run(std::env::args_os()));
}
