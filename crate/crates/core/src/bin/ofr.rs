fn main() {
    std::process::exit(ofr_core::cli::run());
}
