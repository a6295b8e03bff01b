fn main() {
    std::process::exit(qrrnum::cli::main_with_args(std::env::args_os()));
}
