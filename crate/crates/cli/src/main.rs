fn main() {
    std::process::exit(fwdens_cli::run(std::env::args_os()));
}
