fn main() {
    std::process::exit(phase_manifold::cli::run(std::env::args_os()));
}
