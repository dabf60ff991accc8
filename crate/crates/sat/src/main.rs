fn main() {
    std::process::exit(sat::cli::main_with(std::env::args_os()));
}
