fn main() {
    std::process::exit(scnp_cli::run(std::env::args_os()));
}
