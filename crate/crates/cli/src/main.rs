use clap::Parser;

use guardrail_cli::args::Cli;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("GUARDRAIL_LOG", "error")).init();
    let cli = Cli::parse();
    if let Err(e) = guardrail_cli::run(cli.command) {
        let record = serde_json::json!({ "error": e.record() });
        eprintln!("{record}");
        std::process::exit(e.code());
    }
}
