fn main() {
    std::process::exit(flowguard::cli::run(std::env::args_os().collect()));
}
