//! Converged slice solutions keyed by a content hash of everything that
//! determines them. A hit warm-starts the solver, which then returns
//! without a Newton step.

use std::fs;
use std::path::{Path, PathBuf};

use kefam_core::ma_solver::SolverOptions;
use kefam_core::FamilyParams;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::output::{ensure_dir, read_json, write_json};

/// Everything a slice solution depends on.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SliceKey {
    pub family: String,
    pub params: FamilyParams,
    /// `s` as raw bit patterns so the hash is exact.
    pub s_bits: [u64; 2],
    pub resolution: usize,
    pub level: usize,
    pub delta0_bits: Option<u64>,
    pub lo_bits: Vec<u64>,
    pub hi_bits: Vec<u64>,
    pub newton_tol_bits: u64,
}

impl SliceKey {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        family: &str,
        params: &FamilyParams,
        s: Complex64,
        resolution: usize,
        level: usize,
        delta0: Option<f64>,
        lo: &[f64],
        hi: &[f64],
        opts: &SolverOptions,
    ) -> Self {
        SliceKey {
            family: family.to_string(),
            params: params.clone(),
            s_bits: [s.re.to_bits(), s.im.to_bits()],
            resolution,
            level,
            delta0_bits: delta0.map(f64::to_bits),
            lo_bits: lo.iter().map(|x| x.to_bits()).collect(),
            hi_bits: hi.iter().map(|x| x.to_bits()).collect(),
            newton_tol_bits: opts.tol.to_bits(),
        }
    }

    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("key serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: SliceKey,
    len: usize,
}

/// Directory of `<digest>.bin` / `<digest>.json` pairs.
#[derive(Clone, Debug)]
pub struct SliceCache {
    dir: PathBuf,
}

impl SliceCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        SliceCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Cached `u` (one value per grid node) if present and of length `len`.
    pub fn load(&self, key: &SliceKey, len: usize) -> Option<Vec<f64>> {
        let d = key.digest();
        let entry: Entry = read_json(&self.dir.join(format!("{d}.json"))).ok()?;
        if entry.len != len || serde_json::to_string(&entry.key).ok()? != serde_json::to_string(key).ok()? {
            return None;
        }
        let bytes = fs::read(self.dir.join(format!("{d}.bin"))).ok()?;
        if bytes.len() != 8 * len {
            return None;
        }
        Some(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
        )
    }

    pub fn store(&self, key: &SliceKey, u: &[f64]) -> Result<()> {
        ensure_dir(&self.dir)?;
        let d = key.digest();
        let bytes: Vec<u8> = u.iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = self.dir.join(format!("{d}.bin"));
        fs::write(&path, bytes).map_err(|source| crate::error::CliError::Io { path, source })?;
        write_json(
            &self.dir.join(format!("{d}.json")),
            &Entry {
                key: key.clone(),
                len: u.len(),
            },
        )
    }
}
