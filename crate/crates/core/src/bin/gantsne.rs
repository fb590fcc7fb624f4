fn main() {
    let mut stderr = std::io::stderr();
    let code = gantsne_core::cli::run(std::env::args_os(), Box::new(std::io::stdout()), &mut stderr);
    std::process::exit(code);
}
