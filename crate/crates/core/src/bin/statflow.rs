fn main() {
    std::process::exit(statflow::cli::main_with_args(std::env::args_os()));
}
