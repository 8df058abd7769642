fn main() {
    std::process::exit(sixd_cli::main_with_args(std::env::args_os()));
}
