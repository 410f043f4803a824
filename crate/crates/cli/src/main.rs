fn main() {
    std::process::exit(grads_cli::run(std::env::args_os()));
}
