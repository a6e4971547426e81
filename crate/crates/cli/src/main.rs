fn main() {
    std::process::exit(dmvc_cli::run_from(std::env::args_os()));
}
