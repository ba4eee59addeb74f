fn main() {
    std::process::exit(elliptope::cli::run(std::env::args_os()));
}
