fn main() {
    std::process::exit(trajstat_core::cli::run(std::env::args_os()));
}
