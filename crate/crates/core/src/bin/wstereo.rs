fn main() {
    std::process::exit(wstereo::cli::main_with_args(std::env::args_os()));
}
