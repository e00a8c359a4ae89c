fn main() {
    std::process::exit(kvx2l::cli::run(std::env::args_os().collect()));
}
