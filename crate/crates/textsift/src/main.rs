fn main() {
    std::process::exit(textsift::cli::run(std::env::args_os()));
}
