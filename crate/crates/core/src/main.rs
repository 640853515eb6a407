fn main() {
    std::process::exit(dpp_pinn::cli::main_entry(std::env::args_os()));
}
