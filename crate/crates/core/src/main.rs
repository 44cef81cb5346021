fn main() {
    std::process::exit(anb::cli::main_with_args(std::env::args_os()));
}
