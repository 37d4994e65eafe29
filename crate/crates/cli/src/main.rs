fn main() {
    std::process::exit(tkfnet_cli::main_with_args(std::env::args_os()));
}
