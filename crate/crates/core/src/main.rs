fn main() {
    std::process::exit(nomad_mfe::cli::run(std::env::args_os()));
}
