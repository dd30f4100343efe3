fn main() {
    std::process::exit(rnkn::toolkit::cli::run(std::env::args_os()));
}
