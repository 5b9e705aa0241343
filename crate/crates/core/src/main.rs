fn main() {
    std::process::exit(twostep_hash::cli::main_with_args(std::env::args_os()));
}
