fn main() {
    std::process::exit(srla::cli::run(std::env::args_os()));
}
