fn main() {
    std::process::exit(texterase::cli::run(std::env::args_os()));
}
