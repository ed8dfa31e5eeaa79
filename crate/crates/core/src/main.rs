fn main() {
    std::process::exit(unbiased_iv::cli::main_with_args(std::env::args_os()));
}
