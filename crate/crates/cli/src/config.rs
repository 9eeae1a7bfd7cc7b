use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use photon_dfa_core::trace::config_hash;

use crate::error::{CliError, Result};

#[derive(Args, Clone, Debug, Default)]
pub struct GlobalArgs {
    /// JSON settings file; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Suppress progress and result lines on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
}

/// Settings of one command after file values and flags are merged.
#[derive(Clone, Debug)]
pub struct RunConfig<T> {
    pub command: &'static str,
    pub seed: u64,
    pub out: PathBuf,
    pub settings: T,
    /// Hash of command, seed and settings. The output directory is left out
    /// so the same run in two places produces identical artifacts.
    pub hash: String,
}

// Keys every settings file may carry besides the command's own.
const SHARED_KEYS: [&str; 3] = ["seed", "out", "config_hash"];

/// Builds the run configuration: defaults, then the file, then `overrides`
/// (the command's flags), then the global `--seed` and `--out` flags.
/// Unknown keys in the file are rejected.
pub fn resolve<T>(command: &'static str, global: &GlobalArgs, overrides: impl FnOnce(&mut T)) -> Result<RunConfig<T>>
where
    T: Serialize + DeserializeOwned,
{
    let mut map = match &global.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(map)) => map,
                Ok(_) => return Err(CliError::Config(format!("{}: settings must be a JSON object", path.display()))),
                Err(e) => return Err(CliError::Config(format!("{}: {e}", path.display()))),
            }
        }
        None => Map::new(),
    };
    let mut seed = 0;
    let mut out = PathBuf::from("out");
    for key in SHARED_KEYS {
        if let Some(v) = map.remove(key) {
            match key {
                "seed" => seed = serde_json::from_value(v).map_err(|e| CliError::Config(format!("seed: {e}")))?,
                "out" => out = serde_json::from_value(v).map_err(|e| CliError::Config(format!("out: {e}")))?,
                _ => {}
            }
        }
    }
    let mut settings: T = serde_json::from_value(Value::Object(map)).map_err(|e| CliError::Config(e.to_string()))?;
    overrides(&mut settings);
    if let Some(s) = global.seed {
        seed = s;
    }
    if let Some(o) = &global.out {
        out = o.clone();
    }
    let hash = config_hash(&serde_json::json!({ "command": command, "seed": seed, "settings": settings }))?;
    Ok(RunConfig {
        command,
        seed,
        out,
        settings,
        hash,
    })
}

impl<T: Serialize> RunConfig<T> {
    /// The resolved settings as a flat object that `--config` accepts back.
    pub fn echo(&self) -> Result<Value> {
        let mut map = match serde_json::to_value(&self.settings).map_err(|e| CliError::Config(e.to_string()))? {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        map.insert("seed".into(), self.seed.into());
        map.insert("out".into(), self.out.display().to_string().into());
        map.insert("config_hash".into(), self.hash.clone().into());
        Ok(Value::Object(map))
    }

    pub fn prepare_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        write_json(&self.out.join("config.json"), &self.echo()?)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Sidecar holding everything that varies between identical runs.
pub fn write_run_log(out: &Path, command: &str, hash: &str, wall_seconds: f64) -> Result<()> {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_text(
        &out.join("run.log"),
        &format!("command={command}\nconfig_hash={hash}\nfinished_unix={stamp}\nwall_seconds={wall_seconds:.3}\n"),
    )
}

/// Parses a snake_case enum name the same way settings files spell it.
pub fn parse_name<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Alias keeps clap from treating the flag as repeatable.
pub type UsizeList = Vec<usize>;

/// Comma-separated positive integers, e.g. `784,100,10`.
pub fn parse_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect()
}

/// Upper bound on worker threads from `PHOTON_DFA_THREADS`, default 1.
pub fn thread_cap() -> Result<usize> {
    match std::env::var("PHOTON_DFA_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Config(format!("PHOTON_DFA_THREADS={v:?} is not a positive integer"))),
        },
        Err(_) => Ok(1),
    }
}
