fn main() {
    std::process::exit(ocstab::cli::run_command(std::env::args_os()));
}
