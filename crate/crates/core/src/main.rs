fn main() {
    std::process::exit(ssk::harness::cli::cli_main(std::env::args_os()));
}
