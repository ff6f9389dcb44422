use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = sigma_cli::Cli::parse();
    if let Err(err) = sigma_cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(sigma_cli::exit_code(&err));
    }
}
