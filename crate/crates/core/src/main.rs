fn main() {
    std::process::exit(spectral_frames::cli::main_with_args(std::env::args_os()));
}
