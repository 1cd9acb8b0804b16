//! Result files: ROC CSVs, summary JSON, training history and checkpoints.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::config::{Emit, ExperimentConfig};
use crate::runner::ResultBundle;

pub const ROC_HEADER: &str = "detector,architecture,threshold,fpr,tpr";
pub const HISTORY_HEADER: &str = "round,heldout_bce";

#[derive(Debug, Error)]
#[error("cannot write {path}: {source}")]
pub struct EmitError {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

/// `%.9g`-style formatting: 9 significant digits, trailing zeros trimmed.
pub fn fmt_sig9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.8e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn roc_csv(bundle: &ResultBundle, index: usize) -> String {
    let det = &bundle.detectors[index];
    let mut out = String::from(ROC_HEADER);
    out.push('\n');
    for p in &det.roc.points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            det.detector.name(),
            bundle.architecture.name(),
            fmt_sig9(p.threshold),
            fmt_sig9(p.fpr),
            fmt_sig9(p.tpr)
        ));
    }
    out
}

pub fn history_csv(history: &fedact_core::federation::TrainingHistory) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    out.push_str(&format!("0,{}\n", fmt_sig9(history.initial_heldout_bce)));
    for (r, bce) in history.heldout_bce.iter().enumerate() {
        out.push_str(&format!("{},{}\n", r + 1, fmt_sig9(*bce)));
    }
    out
}

pub fn summary_json(bundle: &ResultBundle, record_runtime: bool) -> Value {
    let mut root = Map::new();
    for det in &bundle.detectors {
        root.insert(
            det.detector.name().to_string(),
            json!({
                "auc": det.roc.auc,
                "macs_complex1": det.macs_complex1,
                "macs_real4": det.macs_real4,
                "iters": det.iters,
                "runtime_s": if record_runtime { json!(det.runtime_s) } else { Value::Null },
            }),
        );
    }
    root.insert(
        "config_echo".into(),
        serde_json::to_value(&bundle.config_echo).expect("config serializes"),
    );
    root.insert("seed".into(), json!(bundle.seed));
    root.insert("version".into(), json!(bundle.version));
    Value::Object(root)
}

fn write(path: PathBuf, contents: &[u8], written: &mut Vec<PathBuf>) -> Result<(), EmitError> {
    fs::write(&path, contents).map_err(|source| EmitError {
        path: path.clone(),
        source,
    })?;
    written.push(path);
    Ok(())
}

/// Write every selected output into `dir`, returning the files written.
pub fn emit_results(bundle: &ResultBundle, config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>, EmitError> {
    fs::create_dir_all(dir).map_err(|source| EmitError {
        path: dir.to_path_buf(),
        source,
    })?;
    let arch = bundle.architecture.name();
    let mut written = Vec::new();
    if config.emits(Emit::RocCsv) {
        for (i, det) in bundle.detectors.iter().enumerate() {
            let path = dir.join(format!("roc_{}_{}.csv", det.detector.name(), arch));
            write(path, roc_csv(bundle, i).as_bytes(), &mut written)?;
        }
    }
    if config.emits(Emit::SummaryJson) {
        let mut text = serde_json::to_string_pretty(&summary_json(bundle, config.record_runtime)).expect("json");
        text.push('\n');
        write(dir.join(format!("summary_{arch}.json")), text.as_bytes(), &mut written)?;
    }
    if config.emits(Emit::HistoryCsv) {
        if let Some(history) = &bundle.history {
            write(dir.join(format!("history_{arch}.csv")), history_csv(history).as_bytes(), &mut written)?;
        }
    }
    if config.emits(Emit::Checkpoints) {
        if let Some(bytes) = &bundle.checkpoint {
            write(dir.join(format!("checkpoint_{arch}.bin")), bytes, &mut written)?;
        }
    }
    Ok(written)
}
