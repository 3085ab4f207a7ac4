fn main() {
    std::process::exit(stegocrack::cli::dispatch(std::env::args_os()));
}
