fn main() {
    std::process::exit(searchpix_cli::dispatch(std::env::args_os()));
}
