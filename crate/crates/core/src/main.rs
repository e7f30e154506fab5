fn main() {
    std::process::exit(tcconf::cli::main_with_args(std::env::args_os()));
}
