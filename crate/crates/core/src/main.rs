fn main() {
    std::process::exit(levyhom::cli::run(std::env::args_os()));
}
