use clap::Parser;
use haoi_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        let message = e.to_string().replace('\n', " ");
        eprintln!("error[{}]: {message}", e.code());
        std::process::exit(1);
    }
}
