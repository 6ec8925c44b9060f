fn main() {
    std::process::exit(fbmlab_cli::run(std::env::args_os()));
}
