fn main() {
    std::process::exit(panelshift_cli::run_cli(std::env::args_os()));
}
