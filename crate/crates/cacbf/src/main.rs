fn main() {
    std::process::exit(cacbf::run_cli());
}
