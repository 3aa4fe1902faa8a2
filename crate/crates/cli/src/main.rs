fn main() {
    let code = madqrl_cli::run(std::env::args_os(), &mut std::io::stdout());
    std::process::exit(code);
}
