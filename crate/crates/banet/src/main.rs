fn main() {
    std::process::exit(banet::cli::main_with_args(std::env::args_os()));
}
