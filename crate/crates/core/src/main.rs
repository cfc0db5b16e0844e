fn main() {
    std::process::exit(magweyl::cli::main_with_args(std::env::args_os()));
}
