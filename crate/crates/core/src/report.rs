//! Output files. Every CSV starts with `# key=value` lines holding the exact
//! configuration that produced it; JSON files carry it under `"config"`.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::duality::DirectionSpectrum;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::trainer::EpochRecord;

pub type ConfigPairs = Vec<(String, String)>;

pub fn pairs<K: ToString, V: ToString>(items: impl IntoIterator<Item = (K, V)>) -> ConfigPairs {
    items.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn header(config: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in config {
        let _ = writeln!(out, "# {k}={v}");
    }
    out
}

/// Writes a CSV with the config header, a column row, then `rows`.
pub fn write_csv(path: &Path, config: &[(String, String)], columns: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut out = header(config);
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// JSON object `{"config": {..}, <key>: <value>}`.
pub fn write_json<S: Serialize>(path: &Path, config: &[(String, String)], key: &str, value: &S) -> Result<()> {
    let mut map = serde_json::Map::new();
    let cfg: serde_json::Map<String, serde_json::Value> = config
        .iter()
        .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
        .collect();
    map.insert("config".into(), serde_json::Value::Object(cfg));
    map.insert(key.into(), serde_json::to_value(value)?);
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(map))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_history_csv(path: &Path, config: &[(String, String)], history: &[EpochRecord], spread: Option<&[f64]>) -> Result<()> {
    let mut columns = vec!["epoch", "train_loss", "train_err", "test_loss", "test_err"];
    if spread.is_some() {
        columns.push("spread");
    }
    let rows = history.iter().enumerate().map(|(i, h)| {
        let mut row = vec![
            h.epoch.to_string(),
            h.train_loss.to_string(),
            h.train_error.to_string(),
            h.test_loss.to_string(),
            h.test_error.to_string(),
        ];
        if let Some(s) = spread {
            row.push(s[i].to_string());
        }
        row
    });
    write_csv(path, config, &columns, rows)
}

/// One row per direction in descending-`sigma_g` order.
pub fn write_spectrum_csv<T: Real>(path: &Path, config: &[(String, String)], spectrum: &DirectionSpectrum<T>) -> Result<()> {
    let columns = [
        "rank", "eig_index", "H_n", "sigma_g", "sigma_w", "mu_g", "mu_w", "c", "dL_n", "S_w_cum",
    ];
    let rows = spectrum.rank.iter().enumerate().map(|(r, &n)| {
        vec![
            (r + 1).to_string(),
            (n + 1).to_string(),
            spectrum.h[n].to_string(),
            spectrum.sigma_g[n].to_string(),
            spectrum.sigma_w[n].to_string(),
            spectrum.mu_g[n].to_string(),
            spectrum.mu_w[n].to_string(),
            spectrum.c[n].to_string(),
            spectrum.dl[n].to_string(),
            spectrum.s_w_cumulative[r].to_string(),
        ]
    });
    write_csv(path, config, &columns, rows)
}

pub fn write_noise_csv<T: Real>(path: &Path, config: &[(String, String)], h: &[T], ssgd: &[T], dpsgd: &[T]) -> Result<()> {
    let rows = (0..h.len()).map(|n| {
        vec![
            (n + 1).to_string(),
            h[n].to_string(),
            ssgd[n].to_string(),
            dpsgd[n].to_string(),
        ]
    });
    write_csv(path, config, &["n", "H_n", "delta_n_ssgd", "delta_n_dpsgd"], rows)
}
