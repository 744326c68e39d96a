//! Flows of the horizontal lift `v_H` over base segments, the exponential
//! envelope of `φ` along them, and the holomorphy defect of the resulting
//! map `D₀ × U → D`.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domains::FamilyDefinition;
use crate::error::{Error, Result};
use crate::family_geom::{FormField, NumericH};
use crate::fefferman::{background_pair, background_pair_fixed};
use crate::ma_solver::{build_slice_grid_in, solve_on_grid, MASolution, SliceBackground, SolverOptions};
use crate::wirtinger::CPoint;

/// Spacing of the base lattice of numeric lift stations.
pub const STATION_SPACING: f64 = 0.02;

/// Slice components of `v_H` at points of the total space.
pub trait LiftSource: Send + Sync {
    fn lift(&self, p: &CPoint) -> Result<Vec<Complex64>>;
}

/// Lift from a closed-form potential.
pub struct OracleLift(pub FormField);

impl LiftSource for OracleLift {
    fn lift(&self, p: &CPoint) -> Result<Vec<Complex64>> {
        self.0.blocks(p)?.lift(p)
    }
}

/// Lift from slice solutions on a square lattice of base points with
/// spacing [`STATION_SPACING`], interpolated bilinearly in `s`. Each
/// lattice point is solved once and shared by the base stencils of its
/// neighbours.
pub struct NumericLift {
    family: Arc<FamilyDefinition>,
    res: usize,
    level: usize,
    opts: SolverOptions,
    delta0: Option<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    slices: Mutex<BTreeMap<(i64, i64), MASolution>>,
    stations: Mutex<BTreeMap<(i64, i64), Arc<NumericH>>>,
}

impl NumericLift {
    /// Lift over the base disc `|s| ≤ radius`.
    pub fn new(
        fam: &Arc<FamilyDefinition>,
        radius: f64,
        res: usize,
        level: usize,
        opts: &SolverOptions,
    ) -> Result<NumericLift> {
        let center = background_pair(fam, Complex64::new(0.0, 0.0), level, None)?;
        let d = 2 * fam.n;
        let (mut lo, mut hi) = (vec![f64::INFINITY; d], vec![f64::NEG_INFINITY; d]);
        let reach = radius + 3.0 * STATION_SPACING;
        let mut probes = vec![Complex64::new(0.0, 0.0)];
        for k in 0..32 {
            for r in [0.5 * reach, reach] {
                probes.push(Complex64::from_polar(r, k as f64 * std::f64::consts::TAU / 32.0));
            }
        }
        for s in probes {
            let (l, h) = fam.slice_box(s);
            for k in 0..d {
                lo[k] = lo[k].min(l[k]);
                hi[k] = hi[k].max(h[k]);
            }
        }
        Ok(NumericLift {
            family: fam.clone(),
            res,
            level,
            opts: opts.clone(),
            delta0: center.delta0,
            lo,
            hi,
            slices: Mutex::new(BTreeMap::new()),
            stations: Mutex::new(BTreeMap::new()),
        })
    }

    fn lattice_s(key: (i64, i64)) -> Complex64 {
        Complex64::new(key.0 as f64, key.1 as f64) * STATION_SPACING
    }

    fn slice(&self, key: (i64, i64)) -> Result<MASolution> {
        if let Some(s) = self.slices.lock().expect("slice cache").get(&key) {
            return Ok(s.clone());
        }
        let s = Self::lattice_s(key);
        let pair = background_pair_fixed(&self.family, s, self.level, self.delta0)?;
        let grid = Arc::new(build_slice_grid_in(&self.family, s, &self.lo, &self.hi, self.res, None)?);
        let bg = SliceBackground::sample(&grid, &pair)?;
        let sol = solve_on_grid(grid, bg, &self.opts).map_err(|e| Error::SliceSolveFailed {
            s,
            source: Box::new(e),
        })?;
        self.slices.lock().expect("slice cache").insert(key, sol.clone());
        Ok(sol)
    }

    fn station(&self, key: (i64, i64)) -> Result<Arc<NumericH>> {
        if let Some(st) = self.stations.lock().expect("station cache").get(&key) {
            return Ok(st.clone());
        }
        let s = Self::lattice_s(key);
        let background = background_pair_fixed(&self.family, s, self.level, self.delta0)?;
        let slices = crate::family_geom::BASE_STENCIL
            .iter()
            .map(|&(a, b)| self.slice((key.0 + a as i64, key.1 + b as i64)))
            .collect::<Result<Vec<_>>>()?;
        let st = Arc::new(NumericH::from_slices(
            &self.family,
            s,
            STATION_SPACING,
            background,
            slices,
        )?);
        self.stations.lock().expect("station cache").insert(key, st.clone());
        Ok(st)
    }
}

impl LiftSource for NumericLift {
    fn lift(&self, p: &CPoint) -> Result<Vec<Complex64>> {
        let x = p.s.re / STATION_SPACING;
        let y = p.s.im / STATION_SPACING;
        let (i, j) = (x.floor() as i64, y.floor() as i64);
        let (fx, fy) = (x - i as f64, y - j as f64);
        let mut acc = vec![Complex64::new(0.0, 0.0); p.n()];
        for (di, dj, w) in [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            if w < 1e-14 {
                continue;
            }
            let key = (i + di, j + dj);
            let st = self.station(key)?;
            let q = CPoint::new(p.z.clone(), Self::lattice_s(key));
            let v = st.blocks_at(&q)?.0.lift(&q)?;
            for (a, b) in acc.iter_mut().zip(v) {
                *a += b * w;
            }
        }
        Ok(acc)
    }
}

/// Integration controls.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowOptions {
    /// Per-step absolute error tolerance.
    pub tol: f64,
    /// Minimal number of accepted steps along a path.
    pub min_steps: usize,
    pub max_steps: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            tol: 1e-8,
            min_steps: 20,
            max_steps: 100_000,
        }
    }
}

/// Trajectory of the lift flow over the segment from `start.s` to `target`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowPath {
    pub start: CPoint,
    pub target: Complex64,
    /// Arc length along the base segment.
    pub t: Vec<f64>,
    pub points: Vec<CPoint>,
    pub phi: Vec<f64>,
}

impl FlowPath {
    pub fn end(&self) -> &CPoint {
        self.points.last().expect("nonempty path")
    }
}

// Dormand–Prince 5(4) tableau
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrate `dz/dt = e·v_H(z, s(t))` with `s(t) = start.s + t·e` from
/// `t = 0` to `|target − start.s|`, `e` the unit base direction.
pub fn integrate_flow(
    fam: &FamilyDefinition,
    source: &dyn LiftSource,
    start: &CPoint,
    target: Complex64,
    opts: &FlowOptions,
) -> Result<FlowPath> {
    let s0 = start.s;
    let len = (target - s0).norm();
    let mut path = FlowPath {
        start: start.clone(),
        target,
        t: vec![0.0],
        points: vec![start.clone()],
        phi: vec![fam.phi_value(start)],
    };
    if len == 0.0 {
        return Ok(path);
    }
    let e = (target - s0) / len;
    let n = start.n();
    let base = |t: f64| if t >= len { target } else { s0 + e * t };
    let rhs = |t: f64, z: &[Complex64]| -> Result<Vec<Complex64>> {
        let p = CPoint::new(z.to_vec(), base(t));
        match source.lift(&p) {
            Ok(v) => Ok(v.into_iter().map(|x| x * e).collect()),
            Err(err) => {
                let phi = fam.phi_value(&p);
                if phi >= 0.0 {
                    Err(Error::LeftDomain { t, point: p, phi })
                } else {
                    Err(err)
                }
            }
        }
    };
    let h_max = len / opts.min_steps as f64;
    let mut h = h_max.min(len);
    let mut t = 0.0;
    let mut z = start.z.clone();
    let mut steps = 0;
    while t < len {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::NoConvergence { trace: vec![t, len] });
        }
        h = h.min(len - t);
        let mut k: Vec<Vec<Complex64>> = Vec::with_capacity(7);
        for stage in 0..7 {
            let zs: Vec<Complex64> = (0..n)
                .map(|a| z[a] + (0..stage).map(|j| k[j][a] * (A[stage][j] * h)).sum::<Complex64>())
                .collect();
            k.push(rhs(t + C[stage] * h, &zs)?);
        }
        let z5: Vec<Complex64> = (0..n)
            .map(|a| z[a] + (0..7).map(|j| k[j][a] * (B5[j] * h)).sum::<Complex64>())
            .collect();
        let err = (0..n)
            .map(|a| (0..7).map(|j| k[j][a] * ((B5[j] - B4[j]) * h)).sum::<Complex64>().norm())
            .fold(0.0, f64::max);
        if err <= opts.tol {
            t = if len - t - h < 1e-15 * len { len } else { t + h };
            z = z5;
            let p = CPoint::new(z.clone(), base(t));
            let phi = fam.phi_value(&p);
            if phi >= 0.0 {
                return Err(Error::LeftDomain { t, point: p, phi });
            }
            path.t.push(t);
            path.points.push(p);
            path.phi.push(phi);
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * (opts.tol / err).powf(0.2)).clamp(0.2, 5.0)
        };
        h = (h * factor).min(h_max);
        if h < 1e-14 * len {
            return Err(Error::NoConvergence { trace: vec![t, err] });
        }
    }
    Ok(path)
}

/// Outcome of the exponential envelope test on `f(τ) = φ(α(τ))`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeVerdict {
    /// `e^{−cτ} < |f(τ)/f(0)| < e^{cτ}` at every sample with `τ > 0`.
    pub holds: bool,
    /// Smallest `c` for which the (non-strict) bound holds.
    pub minimal_c: f64,
}

pub fn envelope_check(path: &FlowPath, c: f64) -> Result<EnvelopeVerdict> {
    let f0 = path.phi[0];
    if path.t.len() < 10 || !(f0 < 0.0) {
        return Err(Error::InvariantViolated {
            condition: "envelope check needs at least 10 samples and f(0) < 0",
            point: path.start.clone(),
        });
    }
    let mut minimal_c: f64 = 0.0;
    let mut holds = true;
    for (&tau, &f) in path.t.iter().zip(&path.phi).skip(1) {
        if tau <= 0.0 {
            continue;
        }
        let log_ratio = (f / f0).abs().ln();
        minimal_c = minimal_c.max(log_ratio.abs() / tau);
        if !(log_ratio.abs() < c * tau) {
            holds = false;
        }
    }
    Ok(EnvelopeVerdict { holds, minimal_c })
}

/// Holomorphy defect of `Φ(p, s) = flow endpoint`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrivializationDefect {
    /// `sup |∂Φ/∂s̄|` over the net.
    pub defect: f64,
    /// Defect at each (start, base sample) pair, start-major.
    pub samples: Vec<f64>,
}

/// Base offsets `k` and weights of the fourth-order first difference.
const D1: [(f64, f64); 4] = [(-2.0, 1.0 / 12.0), (-1.0, -8.0 / 12.0), (1.0, 8.0 / 12.0), (2.0, -1.0 / 12.0)];

/// `sup |∂Φ/∂s̄|` with `∂_{s̄} = (∂_σ + i∂_τ)/2` by fourth-order central
/// differences of step `delta` around each base sample. Flows start on
/// `D₀` and follow straight base segments.
pub fn trivialization_residual(
    fam: &FamilyDefinition,
    source: &dyn LiftSource,
    starts: &[CPoint],
    base: &[Complex64],
    delta: f64,
    opts: &FlowOptions,
) -> Result<TrivializationDefect> {
    let tasks: Vec<(usize, usize)> = (0..starts.len())
        .flat_map(|i| (0..base.len()).map(move |j| (i, j)))
        .collect();
    let samples: Vec<f64> = tasks
        .par_iter()
        .map(|&(i, j)| -> Result<f64> {
            let p = &starts[i];
            let sb = base[j];
            let n = p.n();
            let mut dsig = vec![Complex64::new(0.0, 0.0); n];
            let mut dtau = vec![Complex64::new(0.0, 0.0); n];
            for &(k, w) in &D1 {
                let e_re = integrate_flow(fam, source, p, sb + Complex64::new(k * delta, 0.0), opts)?;
                let e_im = integrate_flow(fam, source, p, sb + Complex64::new(0.0, k * delta), opts)?;
                for a in 0..n {
                    dsig[a] += e_re.end().z[a] * (w / delta);
                    dtau[a] += e_im.end().z[a] * (w / delta);
                }
            }
            let i_unit = Complex64::new(0.0, 1.0);
            Ok((0..n)
                .map(|a| ((dsig[a] + i_unit * dtau[a]) * 0.5).norm_sqr())
                .sum::<f64>()
                .sqrt())
        })
        .collect::<Result<_>>()?;
    Ok(TrivializationDefect {
        defect: samples.iter().cloned().fold(0.0, f64::max),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{catalog_instantiate, FamilyParams};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn oracle(name: &str, n: usize) -> (FamilyDefinition, OracleLift) {
        let fam = catalog_instantiate(name, &FamilyParams::with_n(n)).unwrap();
        let h = FormField::new("H", fam.oracle_h.as_ref().unwrap()).unwrap();
        (fam, OracleLift(h))
    }

    #[test]
    fn translated_ball_flow_is_a_translation() {
        let (fam, src) = oracle("translated_ball", 1);
        let path = integrate_flow(&fam, &src, &CPoint::origin(1), c(0.4, 0.0), &FlowOptions::default()).unwrap();
        let end = path.end();
        assert!((end.z[0] - c(0.2, 0.0)).norm() < 1e-7);
        assert!((end.s - c(0.4, 0.0)).norm() < 1e-10);
        let v = envelope_check(&path, 1e-6).unwrap();
        assert!(v.minimal_c < 1e-6, "{v:?}");
    }

    #[test]
    fn hartogs_flow_scales_and_satisfies_the_envelope() {
        let (fam, src) = oracle("hartogs_radius", 1);
        let p = CPoint::on_axis(1, 0.3, c(0.0, 0.0));
        let path = integrate_flow(&fam, &src, &p, c(0.2, 0.0), &FlowOptions::default()).unwrap();
        assert!((path.end().z[0] - c(0.3 * 0.2f64.exp(), 0.0)).norm() < 1e-6);
        assert!(envelope_check(&path, 2.0 + 0.1).unwrap().holds);
        // reversibility
        let back = integrate_flow(&fam, &src, path.end(), c(0.0, 0.0), &FlowOptions::default()).unwrap();
        assert!((back.end().z[0] - p.z[0]).norm() < 1e-6);
    }

    #[test]
    fn synthetic_exponential_path_violates_the_envelope() {
        let t: Vec<f64> = (0..20).map(|k| k as f64 * 0.05).collect();
        let path = FlowPath {
            start: CPoint::origin(1),
            target: c(1.0, 0.0),
            phi: t.iter().map(|t| -0.5 * (3.0 * t).exp()).collect(),
            points: t.iter().map(|_| CPoint::origin(1)).collect(),
            t,
        };
        let v = envelope_check(&path, 2.0).unwrap();
        assert!(!v.holds && (v.minimal_c - 3.0).abs() < 1e-9);
    }

    #[test]
    fn holomorphy_defect_separates_trivial_and_ball_families() {
        let opts = FlowOptions::default();
        let starts = [CPoint::on_axis(1, 0.3, c(0.0, 0.0))];
        for name in ["translated_ball", "hartogs_radius"] {
            let (fam, src) = oracle(name, 1);
            let d = trivialization_residual(&fam, &src, &starts, &[c(0.2, 0.1)], 1e-2, &opts).unwrap();
            assert!(d.defect <= 1e-6, "{name}: {d:?}");
        }
        let (fam, src) = oracle("ball_family", 1);
        let d = trivialization_residual(&fam, &src, &starts, &[c(0.3, 0.0)], 1e-2, &opts).unwrap();
        assert!(d.defect >= 1e-2, "{d:?}");
    }

    #[test]
    fn ball_axis_flow_stays_on_the_axis() {
        let (fam, src) = oracle("ball_family", 2);
        let path = integrate_flow(&fam, &src, &CPoint::origin(2), c(0.3, 0.2), &FlowOptions::default()).unwrap();
        assert!(path.end().z.iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn numeric_lift_flow_matches_ball_closed_form() {
        let fam = Arc::new(catalog_instantiate("ball_family", &FamilyParams::with_n(1)).unwrap());
        let src = NumericLift::new(&fam, 0.1, 33, 1, &SolverOptions::default()).unwrap();
        let p = CPoint::on_axis(1, 0.3, c(0.0, 0.0));
        let path = integrate_flow(&fam, &src, &p, c(0.1, 0.0), &FlowOptions::default()).unwrap();
        let want = 0.3 * (1.0f64 - 0.01).sqrt();
        assert!((path.end().z[0] - c(want, 0.0)).norm() < 1e-4, "{:?}", path.end());
    }
}
