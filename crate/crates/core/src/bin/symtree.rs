fn main() {
    std::process::exit(symtree_core::cli::run(std::env::args_os()));
}
