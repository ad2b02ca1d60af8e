fn main() {
    std::process::exit(zeroshot_tta::cli::main_with_args(std::env::args_os()));
}
