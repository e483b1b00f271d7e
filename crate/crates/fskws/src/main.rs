fn main() {
    std::process::exit(fskws::cli::main_with_args(std::env::args_os()));
}
