fn main() {
    std::process::exit(hompnp::cli::run_from_args(std::env::args_os()));
}
