fn main() {
    std::process::exit(cardkernel::cli::run(std::env::args_os()));
}
