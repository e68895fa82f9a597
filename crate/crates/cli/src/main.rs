fn main() {
    std::process::exit(biasmeta_cli::cli::main_with(std::env::args_os()));
}
