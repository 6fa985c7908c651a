//! Deterministic artifact rendering: CSV with `#` metadata lines, JSON
//! reports, plot-script stubs. Floats carry nine significant digits.

use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};

/// Nine significant digits in scientific notation; `nan`, `inf`, `-inf` otherwise.
pub fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.8e}")
    }
}

/// Round to nine significant digits (the value `fmt_f` prints).
pub fn round_sig(x: f64) -> f64 {
    if x.is_finite() {
        fmt_f(x).parse().unwrap_or(x)
    } else {
        x
    }
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if n.is_f64() {
                if let Some(x) = n.as_f64() {
                    *v = json!(round_sig(x));
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

/// SHA-256 of the canonical JSON form of the resolved configuration.
pub fn config_hash(cfg: &RunConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Artifact {
    pub name: String,
    pub contents: String,
}

pub struct Csv {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self, cfg: &RunConfig) -> String {
        let mut s = String::new();
        s.push_str(&format!("# experiment: {}\n", cfg.experiment.name));
        s.push_str(&format!("# config_sha256: {}\n", config_hash(cfg)));
        s.push_str(&format!("# config: {}\n", serde_json::to_string(cfg).expect("config serializes")));
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// Pretty JSON with the config hash and parameter echo in front of `results`.
pub fn json_report<T: Serialize>(cfg: &RunConfig, results: &T) -> Result<String> {
    let mut r = serde_json::to_value(results).map_err(|e| Error::Io(e.to_string()))?;
    round_value(&mut r);
    let mut c = serde_json::to_value(cfg).map_err(|e| Error::Io(e.to_string()))?;
    round_value(&mut c);
    let doc = json!({
        "experiment": cfg.experiment.name,
        "config_sha256": config_hash(cfg),
        "config": c,
        "results": r,
    });
    let mut s = serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Machine-readable record of a failed run.
pub fn error_record(experiment: &str, err: &Error) -> String {
    let kind = match err {
        Error::Domain(_) => "domain",
        Error::Solver(_) => "solver",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
    };
    let doc = json!({
        "experiment": experiment,
        "status": "error",
        "kind": kind,
        "exit_code": err.exit_code(),
        "message": err.to_string(),
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("plain json");
    s.push('\n');
    s
}

/// Plotting script that loads every CSV of the run; no plotting library is
/// required by the simulator itself.
pub fn plot_stub(experiment: &str, csv_names: &[&str]) -> String {
    let mut s = String::new();
    s.push_str(&format!("# Plot the {experiment} data. Requires numpy and matplotlib.\n"));
    s.push_str("import numpy as np\nimport matplotlib.pyplot as plt\n\n");
    s.push_str("def load(name):\n    return np.genfromtxt(name, delimiter=\",\", names=True, comments=\"#\")\n\n");
    for n in csv_names {
        s.push_str(&format!("d = load(\"{n}\")\n"));
        s.push_str("cols = d.dtype.names\n");
        s.push_str("fig, ax = plt.subplots()\n");
        s.push_str("for c in cols[1:]:\n    try:\n        ax.plot(d[cols[0]], d[c], \".\", ms=2, label=c)\n    except (TypeError, ValueError):\n        pass\n");
        s.push_str(&format!("ax.set_xlabel(cols[0])\nax.legend()\nfig.savefig(\"{}.png\")\n\n", n.trim_end_matches(".csv")));
    }
    s
}

/// Write artifacts in order, creating the directory if needed.
pub fn write_all(dir: &Path, artifacts: &[Artifact]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for a in artifacts {
        std::fs::write(dir.join(&a.name), &a.contents)?;
    }
    Ok(())
}
