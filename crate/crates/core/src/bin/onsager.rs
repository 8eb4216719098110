fn main() {
    std::process::exit(onsager::cli::main_with_args(std::env::args_os()));
}
