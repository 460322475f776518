fn main() {
    std::process::exit(cogmap_cli::run(std::env::args_os()));
}
