fn main() {
    std::process::exit(fogroute::cli::run(std::env::args_os()));
}
