fn main() {
    std::process::exit(mtrl_core::cli::run(std::env::args_os()));
}
