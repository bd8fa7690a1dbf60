use clap::Parser;

fn main() {
    let cli = visagent_cli::Cli::parse();
    if let Err(e) = visagent_cli::run(cli) {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
