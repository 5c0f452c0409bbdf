fn main() {
    std::process::exit(edetect::cli::main_with_args(std::env::args_os()));
}
