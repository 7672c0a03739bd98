fn main() {
    std::process::exit(cnnrec::cli::run(std::env::args_os()));
}
