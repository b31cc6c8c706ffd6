fn main() {
    std::process::exit(ganforge_cli::run(std::env::args_os()));
}
