fn main() {
    std::process::exit(posthoc::cli::dispatch(std::env::args_os()));
}
