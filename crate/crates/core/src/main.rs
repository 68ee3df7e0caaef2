fn main() {
    std::process::exit(synthgen::cli::main_with_args(std::env::args_os()));
}
