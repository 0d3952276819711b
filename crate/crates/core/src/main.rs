fn main() {
    std::process::exit(radpair::cli::main_with_args(std::env::args_os()));
}
