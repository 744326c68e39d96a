//! CSV tables, JSON verdicts and flat binary field dumps.

use std::fs;
use std::path::{Path, PathBuf};

use kefam_core::ma_solver::grid::SliceGrid;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// One named comparison inside a verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    #[serde(with = "lenient_f64")]
    pub value: f64,
    #[serde(with = "lenient_f64")]
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            pass: value >= threshold,
        }
    }
}

/// `f64` that survives JSON when non-finite: infinities and NaN are
/// written as the strings `"inf"`, `"-inf"` and `"NaN"`.
mod lenient_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("NaN")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Outcome of one subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub command: String,
    pub family: String,
    pub pass: bool,
    pub checks: Vec<Check>,
    /// Command-specific numbers.
    pub details: serde_json::Value,
    /// Files written by the command, relative to the output directory.
    pub files: Vec<String>,
}

impl Verdict {
    pub fn new(command: &str, family: &str, checks: Vec<Check>, details: serde_json::Value, files: Vec<String>) -> Self {
        Verdict {
            command: command.to_string(),
            family: family.to_string(),
            pass: checks.iter().all(|c| c.pass),
            checks,
            details,
            files,
        }
    }

    pub fn file_name(command: &str) -> String {
        format!("{command}.verdict.json")
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// A CSV table built in memory and written in one go.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Sidecar describing a flat little-endian `f64` dump of a grid field.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DumpSidecar {
    pub field: String,
    pub dtype: String,
    /// Node counts per real axis, fastest-varying first.
    pub shape: Vec<usize>,
    pub lo: Vec<f64>,
    pub spacing: Vec<f64>,
    pub n: usize,
    pub s: [f64; 2],
    /// Value stored at nodes outside the solver's mask.
    pub fill: String,
}

/// Write `values` (one per grid node) to `<stem>.bin` and its sidecar to
/// `<stem>.json`. Returns the two file names.
pub fn dump_field(dir: &Path, stem: &str, field: &str, grid: &SliceGrid, values: &[f64]) -> Result<Vec<String>> {
    let bin = format!("{stem}.bin");
    let side = format!("{stem}.json");
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let path: PathBuf = dir.join(&bin);
    fs::write(&path, bytes).map_err(|source| CliError::Io { path, source })?;
    write_json(
        &dir.join(&side),
        &DumpSidecar {
            field: field.to_string(),
            dtype: "f64le".into(),
            shape: vec![grid.res; grid.dims()],
            lo: grid.lo.clone(),
            spacing: grid.spacing.clone(),
            n: grid.n,
            s: [grid.s.re, grid.s.im],
            fill: "NaN".into(),
        },
    )?;
    Ok(vec![bin, side])
}

/// Read back a dump written by [`dump_field`].
pub fn read_dump(dir: &Path, stem: &str) -> Result<(DumpSidecar, Vec<f64>)> {
    let side: DumpSidecar = read_json(&dir.join(format!("{stem}.json")))?;
    let path = dir.join(format!("{stem}.bin"));
    let bytes = fs::read(&path).map_err(|source| CliError::Io { path, source })?;
    let vals = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((side, vals))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_check_values_round_trip() {
        for x in [f64::INFINITY, f64::NEG_INFINITY, 1.5e-7] {
            let c = Check::at_least("c", x, 0.7);
            let back: Check = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
            assert_eq!(back, c);
        }
        let c = Check::at_most("c", f64::NAN, 1.0);
        let back: Check = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert!(back.value.is_nan() && !back.pass);
    }
}
