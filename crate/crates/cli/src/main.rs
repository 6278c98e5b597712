fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(gp_pathwise_cli::main_with_args(&args));
}
