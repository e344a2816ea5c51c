fn main() {
    std::process::exit(retrodet::cli::run(std::env::args_os()));
}
