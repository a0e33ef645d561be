fn main() {
    std::process::exit(mixtext::cli::main(std::env::args_os()));
}
