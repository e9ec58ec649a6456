fn main() {
    std::process::exit(unbiased_sde::cli::run(std::env::args_os()));
}
