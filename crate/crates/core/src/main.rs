fn main() {
    std::process::exit(vsie::cli::run(std::env::args_os()));
}
