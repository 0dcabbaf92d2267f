fn main() {
    if let Err(e) = neurodissect_cli::run(std::env::args_os()) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
