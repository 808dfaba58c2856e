fn main() {
    std::process::exit(gbfs::cli::run_from(std::env::args_os()));
}
