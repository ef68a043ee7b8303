fn main() {
    std::process::exit(nara::cli::run_command(std::env::args_os()));
}
