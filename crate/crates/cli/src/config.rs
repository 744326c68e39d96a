//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "family": "ellipsoid_family",
//!   "params": { "n": 1, "a": [2.5], "q": [-1.5] },
//!   "resolutions": [65],
//!   "base_samples": [[0.0, 0.0], [0.2, 0.1]],
//!   "level": 2,
//!   "tolerances": { "newton": 1e-9 },
//!   "samples": 24,
//!   "output_dir": "out",
//!   "seed": 7,
//!   "source": "numeric"
//! }
//! ```
//!
//! Every field except `family` has a default.

use std::path::{Path, PathBuf};

use kefam_core::ma_solver::SolverOptions;
use kefam_core::triviality::FlowOptions;
use kefam_core::{catalog_instantiate, FamilyDefinition, FamilyParams, CATALOG};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Context, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: String,
    #[serde(default)]
    pub params: FamilyParams,
    /// Slice grid resolutions; commands that need one use the first.
    #[serde(default = "default_resolutions")]
    pub resolutions: Vec<usize>,
    /// Base points `s` as `[re, im]`.
    #[serde(default = "default_base_samples")]
    pub base_samples: Vec<[f64; 2]>,
    /// Fefferman level of the background; defaults to `n + 1`.
    #[serde(default)]
    pub level: Option<usize>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Interior sample points per base sample.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Offset into the quasi-random sample sequence.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub source: SourceKind,
    /// Base step of the numeric `s`-derivatives of `h`.
    #[serde(default = "default_base_step")]
    pub base_step: f64,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub exhaustion: ExhaustionConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Newton stopping tolerance on the sup-norm residual.
    pub newton: f64,
    pub krylov: f64,
    /// Per-step flow integration tolerance.
    pub flow: f64,
    /// Bound on `|c(H)|` and `|∂̄v_H|²` for trivial families.
    pub curvature: f64,
    /// Allowed negative part of Hessian eigenvalues.
    pub psh: f64,
    /// Allowed negative gap between successive exhaustion potentials.
    pub monotonicity: f64,
    /// Bound on the holomorphy defect for trivial families.
    pub defect: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            newton: 1e-9,
            krylov: 1e-10,
            flow: 1e-8,
            curvature: 5e-3,
            psh: 1e-8,
            monotonicity: 1e-8,
            defect: 1e-6,
        }
    }
}

/// Where `h` comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    /// The closed form when the family has one, numeric otherwise.
    #[default]
    Auto,
    Oracle,
    Numeric,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    /// Start points `r·e₁` on the central fiber.
    pub start_radii: Vec<f64>,
    /// Flow targets `s*` as `[re, im]`.
    pub targets: Vec<[f64; 2]>,
    /// Envelope constant; the largest fitted constant is used when absent.
    pub envelope_c: Option<f64>,
    /// Base samples at which the holomorphy defect is evaluated.
    pub defect_samples: Vec<[f64; 2]>,
    /// Base step of the defect differences.
    pub defect_step: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            start_radii: vec![0.0, 0.3],
            targets: vec![[0.2, 0.0]],
            envelope_c: None,
            defect_samples: vec![[0.2, 0.1]],
            defect_step: 1e-2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExhaustionConfig {
    /// Exhaustion parameters `N`, sublevel `{φ < −e^{−N}}`.
    pub levels: Vec<f64>,
}

impl Default for ExhaustionConfig {
    fn default() -> Self {
        ExhaustionConfig {
            levels: vec![1.0, 2.0, 4.0],
        }
    }
}

fn default_resolutions() -> Vec<usize> {
    vec![33]
}
fn default_base_samples() -> Vec<[f64; 2]> {
    vec![[0.0, 0.0]]
}
fn default_samples() -> usize {
    24
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_base_step() -> f64 {
    0.02
}

/// Supported slice resolutions per slice dimension `n`.
pub fn resolution_range(n: usize) -> (usize, usize) {
    match n {
        1 => (9, 1025),
        2 => (7, 41),
        _ => (5, 13),
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub resolution: Option<usize>,
    pub level: Option<usize>,
    pub tol: Option<f64>,
}

impl ExperimentConfig {
    /// A configuration with defaults for everything but the family.
    pub fn for_family(family: &str, params: FamilyParams) -> Self {
        serde_json::from_value(serde_json::json!({ "family": family, "params": params }))
            .expect("default configuration")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parse JSON. Type errors are reported as `ConfigInvalid` with the
    /// location given by the parser.
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.contains("field"))
                .unwrap_or("<root>")
                .to_string();
            CliError::invalid(field, msg)
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(res) = o.resolution {
            self.resolutions = vec![res];
        }
        if let Some(level) = o.level {
            self.level = Some(level);
        }
        if let Some(tol) = o.tol {
            self.tolerances.newton = tol;
        }
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn level(&self) -> usize {
        self.level.unwrap_or(self.n() + 1)
    }

    pub fn resolution(&self) -> usize {
        self.resolutions[0]
    }

    pub fn base_points(&self) -> Vec<Complex64> {
        self.base_samples.iter().map(|&[a, b]| Complex64::new(a, b)).collect()
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tolerances.newton,
            krylov_tol: self.tolerances.krylov,
            ..SolverOptions::default()
        }
    }

    pub fn flow_options(&self) -> FlowOptions {
        FlowOptions {
            tol: self.tolerances.flow,
            ..FlowOptions::default()
        }
    }

    /// Check every field; the first violation is reported with its path.
    pub fn validate(&self) -> Result<()> {
        if !CATALOG.contains(&self.family.as_str()) {
            return Err(CliError::invalid(
                "family",
                format!("unknown family `{}` (expected one of {CATALOG:?})", self.family),
            ));
        }
        let n = self.n();
        if !(1..=3).contains(&n) {
            return Err(CliError::invalid("params.n", format!("{n} not in 1..=3")));
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("newton", t.newton),
            ("krylov", t.krylov),
            ("flow", t.flow),
            ("curvature", t.curvature),
            ("psh", t.psh),
            ("monotonicity", t.monotonicity),
            ("defect", t.defect),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CliError::invalid(
                    format!("tolerances.{name}"),
                    format!("{v} is not a positive number"),
                ));
            }
        }
        if self.resolutions.is_empty() {
            return Err(CliError::invalid("resolutions", "empty"));
        }
        let (lo, hi) = resolution_range(n);
        for (k, &r) in self.resolutions.iter().enumerate() {
            if !(lo..=hi).contains(&r) {
                return Err(CliError::invalid(
                    format!("resolutions[{k}]"),
                    format!("{r} outside {lo}..={hi} for n = {n}"),
                ));
            }
        }
        let level = self.level();
        if !(1..=n + 1).contains(&level) {
            return Err(CliError::invalid("level", format!("{level} not in 1..={}", n + 1)));
        }
        if self.samples == 0 {
            return Err(CliError::invalid("samples", "must be positive"));
        }
        if !(self.base_step.is_finite() && self.base_step > 0.0) {
            return Err(CliError::invalid("base_step", "must be positive"));
        }
        let radius = self.params.base_radius;
        let check_base = |field: String, s: &[f64; 2]| -> Result<()> {
            let r = Complex64::new(s[0], s[1]).norm();
            if !(r < radius) {
                return Err(CliError::invalid(field, format!("|s| = {r} outside the base disc of radius {radius}")));
            }
            Ok(())
        };
        if self.base_samples.is_empty() {
            return Err(CliError::invalid("base_samples", "empty"));
        }
        for (k, s) in self.base_samples.iter().enumerate() {
            check_base(format!("base_samples[{k}]"), s)?;
        }
        for (k, s) in self.flow.targets.iter().enumerate() {
            check_base(format!("flow.targets[{k}]"), s)?;
        }
        for (k, s) in self.flow.defect_samples.iter().enumerate() {
            check_base(format!("flow.defect_samples[{k}]"), s)?;
        }
        if let Some(c) = self.flow.envelope_c {
            if !(c.is_finite() && c > 0.0) {
                return Err(CliError::invalid("flow.envelope_c", "must be positive"));
            }
        }
        if !(self.flow.defect_step.is_finite() && self.flow.defect_step > 0.0) {
            return Err(CliError::invalid("flow.defect_step", "must be positive"));
        }
        for (k, r) in self.flow.start_radii.iter().enumerate() {
            if !(r.is_finite() && *r >= 0.0 && *r < 1.0) {
                return Err(CliError::invalid(format!("flow.start_radii[{k}]"), "must lie in [0, 1)"));
            }
        }
        for (k, l) in self.exhaustion.levels.iter().enumerate() {
            if !(l.is_finite() && *l > 0.0) {
                return Err(CliError::invalid(format!("exhaustion.levels[{k}]"), "must be positive"));
            }
        }
        self.family_definition().map(|_| ())
    }

    pub fn family_definition(&self) -> Result<FamilyDefinition> {
        catalog_instantiate(&self.family, &self.params).context(|| format!("family `{}`", self.family))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_tolerance_names_the_field() {
        let mut c = ExperimentConfig::for_family("ball_family", FamilyParams::with_n(1));
        c.tolerances.flow = -1.0;
        match c.validate() {
            Err(CliError::ConfigInvalid { field, .. }) => assert_eq!(field, "tolerances.flow"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_field_is_rejected() {
        let err = ExperimentConfig::parse(r#"{"family": "ball_family", "resolution": 3}"#).unwrap_err();
        match err {
            CliError::ConfigInvalid { field, .. } => assert_eq!(field, "resolution"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn defaults_validate() {
        for name in CATALOG {
            ExperimentConfig::for_family(name, FamilyParams::with_n(1)).validate().unwrap();
        }
    }
}
