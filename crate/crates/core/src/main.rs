fn main() {
    std::process::exit(tmmf::cli::main_with(std::env::args_os()));
}
