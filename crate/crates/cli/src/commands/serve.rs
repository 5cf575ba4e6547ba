use std::path::PathBuf;

use triage_core::scorers::replay_server::ReplayServer;
use triage_core::scorers::ReplayOracle;

use super::GlobalArgs;
use crate::error::Failure;

#[derive(Debug, Clone, clap::Args)]
pub struct ServeArgs {
    /// Oracle fixtures (JSONL); defaults to --replay.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8787")]
    pub addr: String,
}

/// Serve recorded oracle answers over HTTP until killed.
pub fn execute(globals: &GlobalArgs, args: &ServeArgs) -> Result<(), Failure> {
    let path = args
        .fixtures
        .clone()
        .or_else(|| globals.replay.clone())
        .ok_or_else(|| Failure::config("serve-replay needs --fixtures or --replay"))?;
    let oracle = ReplayOracle::load(&path)
        .map_err(|e| Failure::Data(anyhow::Error::new(e).context(format!("loading {}", path.display()))))?;
    let n = oracle.responses().len();
    let server = ReplayServer::oracle(&args.addr, oracle.responses().clone())
        .map_err(|e| Failure::Other(anyhow::Error::new(e).context(format!("binding {}", args.addr))))?;
    println!("serving {n} fixtures at {}", server.url());
    loop {
        std::thread::park();
    }
}
