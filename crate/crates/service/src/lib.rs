//! Command-line pipeline and the read-only query API behind the explorer.

pub mod api;
pub mod commands;
pub mod config;
pub mod error;
pub mod server;

use std::net::SocketAddr;

use commands::{Cli, Command};
use config::PipelineConfig;
use error::{CliError, CliResult};

pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = PipelineConfig::load(cli.config.as_deref())?;
    let seed = cli.seed;
    match cli.command {
        Command::GenData { out } => commands::gen_data(&cfg, seed, &out),
        Command::TrainMc { data, out, dropout } => commands::train_mc(&cfg, seed, &data, &out, dropout),
        Command::TrainEnsemble { data, out, k } => commands::train_ensemble_cmd(&cfg, seed, &data, &out, k),
        Command::Sweep(args) => commands::sweep_cmd(&cfg, seed, &args),
        Command::Study(args) => commands::study_cmd(&cfg, seed, &args),
        Command::Demo1d { out } => commands::demo1d_cmd(&cfg, seed, &out),
        Command::Serve(args) => {
            if !args.root.is_dir() {
                return Err(CliError::Usage(format!("sweep root {} is not a directory", args.root.display())));
            }
            let addr: SocketAddr = format!("{}:{}", args.host, args.port)
                .parse()
                .map_err(|e| CliError::Usage(format!("listen address: {e}")))?;
            let api = api::Api::new(args.root, args.demo1d);
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .map_err(|e| CliError::Usage(format!("runtime: {e}")))?;
            rt.block_on(server::serve(addr, api, args.static_dir))
                .map_err(|e| CliError::Usage(format!("serve on {addr}: {e}")))
        }
    }
}
