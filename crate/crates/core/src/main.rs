fn main() {
    std::process::exit(gmres_cert::cli::run(std::env::args_os()));
}
