fn main() {
    std::process::exit(linf_dist::cli::run(std::env::args_os()));
}
