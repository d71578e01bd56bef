fn main() {
    std::process::exit(so2frames::harness::main_with(std::env::args_os()));
}
