use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use photon_dfa_core::metrics::{evaluate_fields, GridField, MetricReport, DEFAULT_ALPHA};

use crate::config::{resolve, GlobalArgs};
use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSettings {
    pub pred: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub alpha: f64,
}

impl Default for MetricsSettings {
    fn default() -> Self {
        Self {
            pred: None,
            target: None,
            alpha: DEFAULT_ALPHA,
        }
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct MetricsArgs {
    /// Prediction field: `.csv`, or raw binary with a `<path>.json` shape sidecar.
    #[arg(long, value_name = "PATH")]
    pub pred: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub target: Option<PathBuf>,
    /// Weight of the global term in the total.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsOutput {
    pub config_hash: String,
    #[serde(flatten)]
    pub report: MetricReport,
}

/// Reads a field by extension: CSV text, or binary data plus a JSON sidecar.
pub fn read_field(path: &Path) -> Result<GridField> {
    let fail = |e: photon_dfa_core::Error| CliError::Data(format!("{}: {e}", path.display()));
    if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")) {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        GridField::from_csv(&text).map_err(fail)
    } else {
        let mut sidecar = path.as_os_str().to_owned();
        sidecar.push(".json");
        GridField::read_binary(path, PathBuf::from(sidecar)).map_err(fail)
    }
}

/// Prints Spatial, Global, Total and RMSE as one JSON line.
pub fn cmd_metrics(global: &GlobalArgs, args: &MetricsArgs) -> Result<MetricsOutput> {
    let run = resolve::<MetricsSettings>("metrics", global, |s| {
        if args.pred.is_some() {
            s.pred = args.pred.clone();
        }
        if args.target.is_some() {
            s.target = args.target.clone();
        }
        if let Some(a) = args.alpha {
            s.alpha = a;
        }
    })?;
    let s = &run.settings;
    if !s.alpha.is_finite() {
        return Err(CliError::Config(format!("alpha {} must be finite", s.alpha)));
    }
    let (Some(pred), Some(target)) = (&s.pred, &s.target) else {
        return Err(CliError::Config("metrics needs --pred and --target".into()));
    };
    let (p, t) = (read_field(pred)?, read_field(target)?);
    if p.shape() != t.shape() {
        return Err(CliError::Config(format!("shape mismatch: {:?} vs {:?}", p.shape(), t.shape())));
    }
    let output = MetricsOutput {
        config_hash: run.hash.clone(),
        report: evaluate_fields(&p, &t, s.alpha)?,
    };
    if !global.quiet {
        println!("{}", serde_json::to_string(&output).map_err(|e| CliError::Numerical(e.to_string()))?);
    }
    Ok(output)
}
