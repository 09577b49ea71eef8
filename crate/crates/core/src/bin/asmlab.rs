fn main() {
    std::process::exit(asmlab::cli::run(std::env::args_os()));
}
