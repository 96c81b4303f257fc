fn main() {
    std::process::exit(csmgan::cli::main_with_args(std::env::args_os()));
}
