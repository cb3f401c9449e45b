//! `neumann-ocp`: meshes, boundary value solves, control solves, convergence
//! studies and coercivity checks from a JSON configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::Value;
use thiserror::Error;

use config::{apply_override, Command, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] neumann_ocp::Error),

    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("acceptance miss: {0}")]
    Acceptance(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        fn core(e: &neumann_ocp::Error) -> u8 {
            match e {
                neumann_ocp::Error::InvalidDomain(_) | neumann_ocp::Error::InvalidParameter(_) => 1,
                neumann_ocp::Error::AtLevel { source, .. } => core(source),
                _ => 2,
            }
        }
        match self {
            CliError::Config(_) => 1,
            CliError::Core(e) => core(e),
            CliError::Io { .. } => 2,
            CliError::Acceptance(_) => 3,
        }
    }
}

/// Any other setting can be given as `--key=value`, with dotted keys for
/// nested sections (`--solver.method=gmres`, `--ocp.u_min=-inf`).
#[derive(Debug, Parser)]
#[command(name = "neumann-ocp", version, about = "Neumann boundary control of non-coercive elliptic equations")]
struct Cli {
    /// Falls back to the `command` entry of the config file.
    #[arg(value_enum)]
    command: Option<Command>,
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for CSV files and dumps.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Level range `a..b`, or a single level.
    #[arg(long)]
    levels: Option<String>,
    /// Grading parameter for the singular corners, or a comma list with one value per corner.
    #[arg(long)]
    mu: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    nu: Option<String>,
    #[arg(long)]
    quiet: bool,
    /// Fail with exit code 3 when study orders miss the expected ones.
    #[arg(long)]
    assert: bool,
}

const CLAP_FLAGS: [&str; 11] =
    ["config", "out", "levels", "mu", "delta", "alpha", "nu", "quiet", "assert", "help", "version"];

/// Splits `--key=value` settings that clap does not know from the rest.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        if let Some((k, v)) = a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            if !CLAP_FLAGS.contains(&k) {
                overrides.push((k.to_string(), v.to_string()));
                continue;
            }
        }
        rest.push(a);
    }
    (rest, overrides)
}

fn load(cli: &Cli, overrides: &[(String, String)]) -> Result<(Command, RunConfig), CliError> {
    let mut root = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => Value::Object(Default::default()),
    };
    if !root.is_object() {
        return Err(CliError::Config("config file must hold a JSON object".into()));
    }
    for (k, v) in overrides {
        apply_override(&mut root, k, v)?;
    }
    let flags = [
        ("levels", &cli.levels),
        ("mu", &cli.mu),
        ("delta", &cli.delta),
        ("alpha", &cli.alpha),
        ("nu", &cli.nu),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            root[k] = Value::String(v.clone());
        }
    }
    if let Some(out) = &cli.out {
        root["out"] = Value::String(out.display().to_string());
    }
    if cli.quiet {
        root["quiet"] = Value::Bool(true);
    }
    if cli.assert {
        root["assert"] = Value::Bool(true);
    }
    let cfg = RunConfig::from_value(root)?;
    let cmd = cli
        .command
        .or(cfg.command)
        .ok_or_else(|| CliError::Config("no command given (mesh, solve-bvp, solve-ocp, study, check-coercivity)".into()))?;
    Ok((cmd, cfg))
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = load(&cli, &overrides).and_then(|(cmd, cfg)| commands::Runner { cfg, cmd }.run());
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let mut msg = e.to_string();
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                if !msg.contains(&s.to_string()) {
                    msg.push_str(&format!(": {s}"));
                }
                src = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_long_settings_become_overrides() {
        let args = ["bin", "study", "--delta=3", "--solver.method=gmres", "--quiet", "--ocp.u_min=-inf"]
            .map(String::from)
            .to_vec();
        let (rest, ov) = split_overrides(args);
        assert_eq!(rest, ["bin", "study", "--delta=3", "--quiet"]);
        assert_eq!(
            ov,
            [("solver.method".to_string(), "gmres".to_string()), ("ocp.u_min".into(), "-inf".into())]
        );
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 1);
        let inner = neumann_ocp::Error::InvalidParameter("mu".into()).at_level(3);
        assert_eq!(CliError::Core(inner).exit_code(), 1);
        let num = neumann_ocp::Error::NotPositiveDefinite("m".into()).at_level(3);
        assert_eq!(CliError::Core(num).exit_code(), 2);
        assert_eq!(CliError::Acceptance("x".into()).exit_code(), 3);
    }
}
