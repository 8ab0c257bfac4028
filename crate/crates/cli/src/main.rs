fn main() {
    std::process::exit(dialopre_cli::main_with_args(std::env::args_os()));
}
