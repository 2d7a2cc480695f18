fn main() {
    std::process::exit(arithdensity::cli::main_with_args(std::env::args_os()));
}
