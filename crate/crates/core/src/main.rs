fn main() {
    std::process::exit(deid_eval::cli::run(std::env::args_os()));
}
