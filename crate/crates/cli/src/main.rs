fn main() {
    let code = vqd_cli::run(std::env::args_os());
    std::process::exit(code);
}
