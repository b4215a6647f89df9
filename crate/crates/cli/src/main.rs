use clap::Parser;

use skinsplat_cli::args::{Cli, Command};
use skinsplat_cli::{commands, configure_threads};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    configure_threads()?;
    let cli = Cli::parse();
    match cli.command {
        Command::Bake(a) => commands::bake(&a),
        Command::Align(a) => commands::align(&a),
        Command::Render(a) => commands::render(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Serve(a) => commands::serve(&a),
        Command::Play(a) => commands::play(&a),
        Command::Synth(a) => commands::synth(&a),
    }
}
