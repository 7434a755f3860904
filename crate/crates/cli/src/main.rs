fn main() {
    std::process::exit(crossalign_cli::main_with_args(std::env::args_os()));
}
