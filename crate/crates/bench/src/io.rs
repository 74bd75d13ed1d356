//! Artifact files under the output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::compare::compare_methods;
use crate::error::Result;
use crate::experiment::{DensityDump, ExperimentOutput, FoldCheckpoint, Tuned};
use crate::results::{write_results, write_timings};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    use std::io::Write;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_tuned(path: &Path) -> Result<Tuned> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn checkpoint_path(dir: &Path, fold: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("fold-{fold}.json"))
}

pub fn write_checkpoint(dir: &Path, ckpt: &FoldCheckpoint) -> Result<PathBuf> {
    let path = checkpoint_path(dir, ckpt.fold);
    fs::create_dir_all(path.parent().unwrap_or(dir))?;
    fs::write(&path, serde_json::to_string(ckpt)?)?;
    Ok(path)
}

pub fn read_checkpoint(path: &Path) -> Result<FoldCheckpoint> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn write_dump(dir: &Path, d: &DensityDump) -> Result<()> {
    let path = dir.join(format!("{}_arm{}_fold{}.csv", d.method, d.arm, d.fold));
    let mut w = csv::Writer::from_path(path)?;
    let dy = d.points.cols();
    let mut header: Vec<String> = (1..=dy)
        .map(|j| if dy == 1 { "y".into() } else { format!("y{j}") })
        .collect();
    header.push("density".into());
    w.write_record(&header)?;
    for (i, dens) in d.density.iter().enumerate() {
        let mut rec: Vec<String> = d
            .points
            .row_slice(i)
            .iter()
            .map(|v| v.to_string())
            .collect();
        rec.push(dens.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `results.csv` (deterministic), `timings.csv`, `tuned.json`,
/// `summary.json`, `audit.json` and, if present, `densities/*.csv`.
pub fn write_outputs(dir: &Path, out: &ExperimentOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_results(File::create(dir.join("results.csv"))?, &out.rows)?;
    write_timings(File::create(dir.join("timings.csv"))?, &out.rows)?;
    write_json(&dir.join("tuned.json"), &out.tuned)?;
    write_json(&dir.join("summary.json"), &compare_methods(&out.rows)?)?;
    write_json(&dir.join("audit.json"), &out.audits)?;
    if !out.dumps.is_empty() {
        let ddir = dir.join("densities");
        fs::create_dir_all(&ddir)?;
        for d in &out.dumps {
            write_dump(&ddir, d)?;
        }
    }
    Ok(())
}
