fn main() {
    std::process::exit(fsmdi::cli::main_with_args(std::env::args_os()));
}
