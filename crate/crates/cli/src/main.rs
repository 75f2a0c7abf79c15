fn main() {
    std::process::exit(ddk_cli::run(std::env::args_os()));
}
