fn main() {
    std::process::exit(scrl::run_cli());
}
