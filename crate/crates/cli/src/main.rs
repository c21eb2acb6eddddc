fn main() {
    std::process::exit(helideck_cli::run_cli(std::env::args_os()));
}
