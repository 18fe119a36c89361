use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use gafi::pipeline::{GafiReport, PointOutcome, SweepCurve};
use serde::Serialize;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("writing {}", path.display()))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// `value,cas_mean,cas_seed_0..` with empty score cells for failed points.
pub fn curve_csv(curve: &SweepCurve) -> Result<Vec<u8>> {
    let seeds = curve
        .points
        .iter()
        .filter_map(|p| p.cas())
        .map(|c| c.cas_per_seed.len())
        .max()
        .unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["value".to_string(), "cas_mean".to_string()];
    header.extend((0..seeds).map(|i| format!("cas_seed_{i}")));
    w.write_record(&header)?;
    for p in &curve.points {
        let mut row = vec![p.value.to_string()];
        match &p.outcome {
            PointOutcome::Scored(cas) => {
                row.push(cas.cas_mean.to_string());
                row.extend(cas.cas_per_seed.iter().map(f64::to_string));
            }
            PointOutcome::Failed { .. } => row.push(String::new()),
        }
        row.resize(seeds + 2, String::new());
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))
}

pub fn write_curve(dir: &Path, curve: &SweepCurve, suffix: &str) -> Result<()> {
    let path = dir.join(format!("curve_{}{suffix}.csv", curve.axis));
    write_atomic(&path, &curve_csv(curve)?)
}

fn pct(x: f64) -> String {
    format!("{:>7.2}%", 100.0 * x)
}

pub fn summary(report: &GafiReport) -> String {
    let g = &report.gap;
    let k = report.ensembles.last().map_or(1, |e| e.k);
    let mut s = String::new();
    let rows = [
        ("real accuracy".to_string(), g.real_accuracy),
        ("baseline CAS".to_string(), g.baseline_cas),
        (format!("GaFi CAS (K={k})"), g.gafi_cas),
        ("gap before".to_string(), g.gap_before),
        ("gap after".to_string(), g.gap_after),
    ];
    for (label, value) in rows {
        s.push_str(&format!("{label:<20} {}\n", pct(value)));
    }
    s.push('\n');
    for rep in &report.repetitions {
        let c = &rep.chosen;
        let t = c.threshold.map_or("off".to_string(), |t| format!("{t:.2}"));
        s.push_str(&format!(
            "repetition {}: checkpoint {} stddev {:.2} threshold {t} CAS {}\n",
            rep.index,
            c.checkpoint_epoch,
            c.stddev,
            pct(rep.accurate.cas_mean)
        ));
    }
    for e in &report.ensembles {
        s.push_str(&format!("ensemble K={}: CAS {}\n", e.k, pct(e.cas.cas_mean)));
    }
    s
}
