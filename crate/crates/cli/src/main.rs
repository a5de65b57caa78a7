fn main() {
    std::process::exit(memrl_cli::main_with_args(std::env::args_os()));
}
