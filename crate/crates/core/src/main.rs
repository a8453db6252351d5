fn main() {
    std::process::exit(gpvd::cli::main());
}
