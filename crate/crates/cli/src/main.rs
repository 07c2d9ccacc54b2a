fn main() {
    std::process::exit(spot_cli::main_with_args(std::env::args_os().collect()));
}
