fn main() {
    std::process::exit(formnet::cli::main_with_args(std::env::args_os()));
}
