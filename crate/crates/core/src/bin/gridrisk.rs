fn main() {
    std::process::exit(gridrisk_core::cli::run(std::env::args_os()));
}
