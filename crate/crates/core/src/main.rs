fn main() {
    std::process::exit(adnflex::cli::run(std::env::args_os()));
}
