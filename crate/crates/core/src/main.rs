fn main() {
    std::process::exit(homsim::cli::main_with_args(std::env::args_os()));
}
