fn main() {
    std::process::exit(bwscan::cli::main());
}
