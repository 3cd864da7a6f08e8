fn main() {
    std::process::exit(varbesov::cli::main_with_args(std::env::args_os()));
}
