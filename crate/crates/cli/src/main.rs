fn main() {
    std::process::exit(clusep_cli::run_cli(std::env::args_os()));
}
