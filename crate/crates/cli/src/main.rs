fn main() {
    std::process::exit(vrlab_cli::run(std::env::args_os()));
}
