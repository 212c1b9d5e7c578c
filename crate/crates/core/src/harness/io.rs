//! Files a recipe reads and writes: control logs, manifests, summaries, plot
//! scripts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::hex;
use crate::error::{Error, Result};
use crate::history::ControlRecord;
use crate::plant::{Action, SystemState};

/// Control log as CSV; floats are written in shortest round-trip form so a
/// reread log is bit-identical.
pub fn write_log_csv(path: &Path, records: &[ControlRecord]) -> Result<()> {
    let n = records.first().map_or(0, |r| r.state.zones());
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["step", "minute", "day", "t_out", "sun", "cost"].map(String::from).to_vec();
    for prefix in ["t_in", "sensed", "level"] {
        header.extend((0..n).map(|z| format!("{prefix}_{z}")));
    }
    w.write_record(&header)?;
    for r in records {
        let s = &r.state;
        let mut row = vec![
            s.step.to_string(),
            s.minute.to_string(),
            s.day.to_string(),
            s.t_out.to_string(),
            s.sun.to_string(),
            r.cost.to_string(),
        ];
        row.extend(s.t_in.iter().map(f64::to_string));
        row.extend(r.sensed.iter().map(f64::to_string));
        row.extend(r.action.levels.iter().map(usize::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log_csv(path: &Path) -> Result<Vec<ControlRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    let width = rd.headers()?.len();
    if width < 6 || (width - 6) % 3 != 0 {
        return Err(Error::input(1, format!("{}: unexpected log header", path.display())));
    }
    let n = (width - 6) / 3;
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let f = |j: usize| -> Result<f64> {
            rec[j].parse().map_err(|_| Error::input(line, format!("bad number `{}`", &rec[j])))
        };
        let u = |j: usize| -> Result<u64> {
            rec[j].parse().map_err(|_| Error::input(line, format!("bad integer `{}`", &rec[j])))
        };
        out.push(ControlRecord {
            state: SystemState {
                step: u(0)?,
                minute: u(1)? as u32,
                day: u(2)? as u32,
                t_out: f(3)?,
                sun: f(4)?,
                t_in: (0..n).map(|z| f(6 + z)).collect::<Result<_>>()?,
            },
            cost: f(5)?,
            sensed: (0..n).map(|z| f(6 + n + z)).collect::<Result<_>>()?,
            action: Action::new((0..n).map(|z| u(6 + 2 * n + z).map(|v| v as usize)).collect::<Result<_>>()?),
        });
    }
    Ok(out)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(fs::read(path)?)))
}

/// Provenance of one recipe run: every emitted file traces back to the
/// config hash, the seeds and the hashes of the inputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub recipe: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(recipe: &str, config_sha256: String, seed: u64) -> Self {
        Self {
            recipe: recipe.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256,
            seed,
            ..Self::default()
        }
    }

    pub fn seed(&mut self, label: &str, value: u64) -> u64 {
        self.seeds.insert(label.into(), value);
        value
    }

    pub fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.inputs.insert(name.into(), sha256_file(path)?);
        Ok(())
    }

    /// Hash every regular file in `dir` except the manifest itself.
    pub fn record_outputs(&mut self, dir: &Path) -> Result<()> {
        let mut names: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_ok_and(|t| t.is_file()))
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n != MANIFEST)
            .collect();
        names.sort();
        for name in names {
            let h = sha256_file(&dir.join(&name))?;
            self.outputs.insert(name, h);
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST), text)?;
        Ok(())
    }
}

pub const MANIFEST: &str = "manifest.json";

/// Gnuplot script drawing columns of a CSV against its first column.
pub fn write_plot_script(path: &Path, csv_name: &str, title: &str, ylabel: &str, columns: &[(usize, &str)]) -> Result<()> {
    let mut s = String::new();
    s.push_str("set datafile separator ','\nset key outside\nset grid\n");
    s.push_str(&format!("set title '{title}'\nset ylabel '{ylabel}'\n"));
    s.push_str(&format!("set terminal pngcairo size 900,500\nset output '{}.png'\n", csv_name.trim_end_matches(".csv")));
    let plots: Vec<String> = columns
        .iter()
        .map(|(c, label)| format!("'{csv_name}' using 1:{c} skip 1 with linespoints title '{label}'"))
        .collect();
    s.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    fs::write(path, s)?;
    Ok(())
}
