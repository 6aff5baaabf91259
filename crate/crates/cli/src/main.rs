fn main() {
    std::process::exit(probegeom_cli::run(std::env::args_os()));
}
