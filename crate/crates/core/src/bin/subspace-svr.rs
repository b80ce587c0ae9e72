fn main() {
    std::process::exit(subspace_svr::cli::run(std::env::args_os()));
}
