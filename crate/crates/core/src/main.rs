fn main() {
    std::process::exit(hybrid_cd::cli::run(std::env::args_os()));
}
