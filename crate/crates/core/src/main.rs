fn main() {
    std::process::exit(defectdet::cli::run_cli(std::env::args_os()));
}
