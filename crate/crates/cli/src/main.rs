use std::process::ExitCode;

use anyhow::Context as _;
use clap::Parser as _;
use distortkd_cli::cli::{execute, Cli};
use distortkd_cli::CliError;

fn try_main(cli: &Cli) -> anyhow::Result<()> {
    let value = execute(cli).with_context(|| format!("{:?} failed", cli.command))?;
    println!("{}", serde_json::to_string(&value)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match try_main(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let body = match err.chain().find_map(|e| e.downcast_ref::<CliError>()) {
                Some(cli_err) => {
                    let mut v = cli_err.to_json();
                    v["error"]["context"] = format!("{err}").into();
                    v
                }
                None => serde_json::json!({ "error": { "kind": "internal", "message": format!("{err:#}") } }),
            };
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
