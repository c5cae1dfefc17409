use clap::Parser;
use quotesource_cli::args::Cli;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    quotesource_cli::commands::dispatch(Cli::parse()).await
}
