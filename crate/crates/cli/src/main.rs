fn main() {
    std::process::exit(ebmdiv_cli::main_with_args(std::env::args_os()));
}
