fn main() {
    std::process::exit(lie_hmc::cli::main_with_args(std::env::args_os()));
}
