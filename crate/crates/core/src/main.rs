use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = uqr::cli::Cli::parse();
    if let Err(e) = uqr::cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(uqr::cli::exit_code(&e));
    }
}
