//! The bordered-Hessian functional `J`, Fefferman's approximate solutions
//! of `J(ζ) = 1`, boundary vanishing-order fits and the background pair
//! `(w, F)` used by the slice solver.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::domains::{min_eigenvalue, BoundaryRay, FamilyDefinition};
use crate::error::{Error, Result};
use crate::util::linear_fit;
use crate::wirtinger::taylor::det;
use crate::wirtinger::{jet, var_z, var_zbar, CPoint, ClosedForm, Jet, LayoutKey, ScalarField, Vars};

/// Values with `|f|` at or below this are treated as exact zeros by the
/// order fitter.
pub const ZERO_FLOOR: f64 = 1e-14;

/// Size of the quasi-random net used to certify the background.
pub const CERTIFY_POINTS: usize = 1000;

/// `J(ζ) = (−1)ⁿ det [[ζ, ζ_β̄], [ζ_α, ζ_αβ̄]]` as a jet; the slice
/// truncation drops by two.
pub fn j_functional_jet(zeta: &Jet) -> Jet {
    let n = zeta.key().n as usize;
    let first: Vec<Jet> = (0..n).map(|a| zeta.d(var_z(n, a))).collect();
    let mut m: Vec<Vec<Jet>> = Vec::with_capacity(n + 1);
    let mut row0 = vec![zeta.clone()];
    row0.extend((0..n).map(|b| zeta.d(var_zbar(n, b))));
    m.push(row0);
    for za in &first {
        let mut row = vec![za.clone()];
        row.extend((0..n).map(|b| za.d(var_zbar(n, b))));
        m.push(row);
    }
    let d = det(&m);
    if n % 2 == 1 {
        -d
    } else {
        d
    }
}

/// `J(ζ)` at a point from an order-2 Wirtinger jet of `ζ`.
pub fn j_functional(zeta: &ScalarField, p: &CPoint) -> Result<f64> {
    let j = jet(zeta, p, 2)?;
    let n = j.n();
    let mut m = DMatrix::<Complex64>::zeros(n + 1, n + 1);
    m[(0, 0)] = j.value;
    for a in 0..n {
        m[(0, a + 1)] = j.grad_zbar[a];
        m[(a + 1, 0)] = j.grad_z[a];
        for b in 0..n {
            m[(a + 1, b + 1)] = j.hess_zzbar[(a, b)];
        }
    }
    let d = m.determinant();
    Ok(if n % 2 == 1 { -d.re } else { d.re })
}

/// `η` and `ρˡ = −ηρ` at truncation `vars.key()` for the defining function
/// `ρ = phi`.
pub fn fefferman_jets(phi: &dyn ClosedForm, vars: &Vars<'_>, level: usize) -> Result<(Jet, Jet)> {
    let n = vars.n();
    let rho = phi.eval(&vars.raised(2 * level))?;
    let j0 = j_functional_jet(&rho.scale(-1.0));
    let j0v = j0.value().re;
    if !(j0v > 0.0) {
        return Err(Error::NonpositiveJ {
            point: vars.point().clone(),
            value: j0v,
        });
    }
    let mut eta = j0.powf(-1.0 / (n as f64 + 1.0));
    let mut rho_l = &rho.scale(-1.0) * &eta;
    for l in 2..=level {
        let jl = j_functional_jet(&rho_l);
        let denom = ((n + 2 - l) * l) as f64;
        let factor = jl.scale(-1.0 / denom).add_const(1.0 + 1.0 / denom);
        eta = &eta * &factor;
        rho_l = &rho_l * &factor;
    }
    Ok((eta.restrict(vars.key()), rho_l.restrict(vars.key())))
}

#[derive(Clone, Copy, Debug)]
enum SeqOutput {
    Rho,
    Eta,
    JOfRho,
}

struct SequenceField {
    phi: Arc<dyn ClosedForm>,
    level: usize,
    out: SeqOutput,
}

impl ClosedForm for SequenceField {
    fn dim(&self) -> usize {
        self.phi.dim()
    }

    fn eval(&self, v: &Vars<'_>) -> Result<Jet> {
        match self.out {
            SeqOutput::Rho => Ok(fefferman_jets(self.phi.as_ref(), v, self.level)?.1),
            SeqOutput::Eta => Ok(fefferman_jets(self.phi.as_ref(), v, self.level)?.0),
            SeqOutput::JOfRho => {
                let (_, rho) = fefferman_jets(self.phi.as_ref(), &v.raised(2), self.level)?;
                Ok(j_functional_jet(&rho))
            }
        }
    }
}

/// Fefferman's approximate solutions `ρ¹..ρˡ` of `J = 1` for one family.
#[derive(Clone)]
pub struct ApproxDefiningSequence {
    pub s: Complex64,
    pub level: usize,
    /// `rho[k]` is `ρ^{k+1}`.
    pub rho: Vec<ScalarField>,
    /// `j_of_rho[k]` is `J(ρ^{k+1})`.
    pub j_of_rho: Vec<ScalarField>,
    /// `η` with `−ρˡ = ηρ`.
    pub eta: ScalarField,
}

fn sequence_field(fam: &FamilyDefinition, level: usize, out: SeqOutput) -> ScalarField {
    ScalarField::Closed(Arc::new(SequenceField {
        phi: fam.phi_closed().clone(),
        level,
        out,
    }))
}

/// Build `ρ¹..ρˡ` after checking `J(−ρ) > 0` on a net of the closure of
/// `D_s`.
pub fn fefferman_sequence(fam: &FamilyDefinition, s: Complex64, level: usize) -> Result<ApproxDefiningSequence> {
    let max = fam.n + 1;
    if !(1..=max).contains(&level) {
        return Err(Error::LevelOutOfRange { level, max });
    }
    let neg_rho = ScalarField::Closed(Arc::new(Negated(fam.phi_closed().clone())));
    let mut net = fam.interior_net(s, 200, 0);
    net.extend(fam.boundary_net(s, 50, 0)?);
    for p in &net {
        let v = j_functional(&neg_rho, p)?;
        if !(v > 0.0) {
            return Err(Error::NonpositiveJ {
                point: p.clone(),
                value: v,
            });
        }
    }
    Ok(ApproxDefiningSequence {
        s,
        level,
        rho: (1..=level).map(|l| sequence_field(fam, l, SeqOutput::Rho)).collect(),
        j_of_rho: (1..=level).map(|l| sequence_field(fam, l, SeqOutput::JOfRho)).collect(),
        eta: sequence_field(fam, level, SeqOutput::Eta),
    })
}

struct Negated(Arc<dyn ClosedForm>);

impl ClosedForm for Negated {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn eval(&self, v: &Vars<'_>) -> Result<Jet> {
        Ok(self.0.eval(v)?.scale(-1.0))
    }
}

/// Least-squares exponent of `|f| ~ C|φ|^k`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrderFit {
    /// Fitted `k`; `+∞` when `f` vanishes at every sample.
    pub exponent: f64,
    pub log_constant: f64,
    /// RMS residual of the log-log fit.
    pub residual: f64,
    pub used: usize,
}

/// Fit `log|f|` against `log|φ|`. Samples with `|f| ≤ ZERO_FLOOR` are
/// dropped; the usable ones must span `min_decades` decades of `|φ|`.
pub fn fit_order(abs_phi: &[f64], values: &[f64], min_decades: f64) -> Result<OrderFit> {
    let usable: Vec<(f64, f64)> = abs_phi
        .iter()
        .zip(values)
        .filter(|(p, f)| f.is_finite() && f.abs() > ZERO_FLOOR && **p > 0.0)
        .map(|(p, f)| (p.ln(), f.abs().ln()))
        .collect();
    if usable.is_empty() && values.iter().all(|f| f.abs() <= ZERO_FLOOR) {
        return Ok(OrderFit {
            exponent: f64::INFINITY,
            log_constant: f64::NEG_INFINITY,
            residual: 0.0,
            used: 0,
        });
    }
    let (x, y): (Vec<f64>, Vec<f64>) = usable.into_iter().unzip();
    let decades = if x.is_empty() {
        0.0
    } else {
        let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        (hi - lo) / std::f64::consts::LN_10
    };
    if x.len() < 3 || decades < min_decades - 1e-9 {
        return Err(Error::DegenerateRay {
            usable: x.len(),
            decades,
        });
    }
    let (slope, icpt, rms) = linear_fit(&x, &y);
    Ok(OrderFit {
        exponent: slope,
        log_constant: icpt,
        residual: rms,
        used: x.len(),
    })
}

/// Vanishing order of `f` along a boundary ray (at least two decades of
/// `|φ|` required).
pub fn vanishing_order_fit(f: &ScalarField, ray: &BoundaryRay) -> Result<OrderFit> {
    let vals = ray
        .points
        .iter()
        .map(|p| Ok(jet(f, p, 0)?.value.re))
        .collect::<Result<Vec<f64>>>()?;
    let abs_phi: Vec<f64> = ray.phi.iter().map(|p| p.abs()).collect();
    fit_order(&abs_phi, &vals, 2.0)
}

/// `C²` quintic step: 0 for `x ≤ 0`, 1 for `x ≥ 1`; returns the value
/// and its derivatives in `x`.
fn smoothstep_derivs(x: f64) -> [f64; 6] {
    if x <= 0.0 {
        return [0.0; 6];
    }
    if x >= 1.0 {
        return [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    }
    let (x2, x3) = (x * x, x * x * x);
    [
        10.0 * x3 - 15.0 * x3 * x + 6.0 * x3 * x2,
        30.0 * x2 - 60.0 * x3 + 30.0 * x2 * x2,
        60.0 * x - 180.0 * x2 + 120.0 * x3,
        60.0 - 360.0 * x + 360.0 * x2,
        -360.0 + 720.0 * x,
        720.0,
    ]
}

/// `χ(φ)`: 1 on `{φ > −δ₀/2}`, 0 on `{φ < −δ₀}`.
fn cutoff(phi: &Jet, delta0: f64) -> Jet {
    let a = 2.0 / delta0;
    let x = phi.re() * a + 2.0;
    let d = smoothstep_derivs(x);
    let derivs: Vec<f64> = d.iter().enumerate().map(|(k, v)| v * a.powi(k as i32)).collect();
    phi.apply_real(&derivs)
}

#[derive(Clone, Copy, Debug)]
enum BgOutput {
    W,
    F,
    Psi,
}

struct BackgroundField {
    phi: Arc<dyn ClosedForm>,
    level: usize,
    delta0: Option<f64>,
    out: BgOutput,
}

impl BackgroundField {
    fn w_jet(&self, v: &Vars<'_>) -> Result<Jet> {
        let (eta, _) = fefferman_jets(self.phi.as_ref(), v, self.level)?;
        let phi = self.phi.eval(v)?;
        let eta = match self.delta0 {
            Some(d) => (&cutoff(&phi, d) * &eta.add_const(-1.0)).add_const(1.0),
            None => eta,
        };
        Ok(-((&eta * &phi).scale(-1.0).ln()))
    }
}

/// `F = (n+1)w − log det(w_αβ̄)` from a jet of `w` with two spare slice
/// orders.
fn f_from_w(w: &Jet) -> Jet {
    let n = w.key().n as usize;
    let m: Vec<Vec<Jet>> = (0..n)
        .map(|a| {
            let wa = w.d(var_z(n, a));
            (0..n).map(|b| wa.d(var_zbar(n, b))).collect()
        })
        .collect();
    &w.scale(n as f64 + 1.0) - &det(&m).ln()
}

impl ClosedForm for BackgroundField {
    fn dim(&self) -> usize {
        self.phi.dim()
    }

    fn eval(&self, v: &Vars<'_>) -> Result<Jet> {
        match self.out {
            BgOutput::W => self.w_jet(v),
            BgOutput::Psi => Ok(self.w_jet(v)?.scale(-1.0).exp().scale(-1.0)),
            BgOutput::F => Ok(f_from_w(&self.w_jet(&v.raised(2))?).restrict(v.key())),
        }
    }
}

/// Background potential `w` and defect `F` with
/// `det(w_αβ̄) = e^{(n+1)w} e^{−F}` on slices of a family.
#[derive(Clone)]
pub struct BackgroundPair {
    pub family: Arc<FamilyDefinition>,
    pub s: Complex64,
    pub level: usize,
    /// Blend radius; `None` when the unblended Fefferman potential is used.
    pub delta0: Option<f64>,
    pub w: ScalarField,
    pub f: ScalarField,
    /// `ψ = −e^{−w}` (equal to `ηφ` wherever no blend is active).
    pub psi: ScalarField,
    /// Smallest eigenvalue of `(w_αβ̄)` seen during certification.
    pub min_eig: f64,
    w_closed: Arc<dyn ClosedForm>,
    f_closed: Arc<dyn ClosedForm>,
}

/// Background data at one slice point.
#[derive(Clone, Debug)]
pub struct NodeBackground {
    pub w: f64,
    /// `w_αβ̄` indexed `[(α, β)]`.
    pub hess: DMatrix<Complex64>,
    pub f: f64,
}

impl BackgroundPair {
    pub fn w_closed(&self) -> &Arc<dyn ClosedForm> {
        &self.w_closed
    }

    pub fn f_closed(&self) -> &Arc<dyn ClosedForm> {
        &self.f_closed
    }

    /// `w`, `(w_αβ̄)` and `F` at a point of the slice, from one jet.
    pub fn node_data(&self, p: &CPoint) -> Result<NodeBackground> {
        let n = self.family.n;
        let w = self.w_closed.jet_at(p, LayoutKey::new(n, false, 2, 0))?;
        let hess = DMatrix::from_fn(n, n, |a, b| {
            let mut e = [0u8; 2 * 3];
            e[a] += 1;
            e[n + b] += 1;
            w.coeff(&e[..2 * n])
        });
        let f = (n as f64 + 1.0) * w.re() - hess.determinant().re.ln();
        Ok(NodeBackground { w: w.re(), hess, f })
    }
}

fn make_pair(fam: &Arc<FamilyDefinition>, s: Complex64, level: usize, delta0: Option<f64>) -> BackgroundPair {
    let field = |out| -> Arc<dyn ClosedForm> {
        Arc::new(BackgroundField {
            phi: fam.phi_closed().clone(),
            level,
            delta0,
            out,
        })
    };
    let w_closed = field(BgOutput::W);
    let f_closed = field(BgOutput::F);
    BackgroundPair {
        family: fam.clone(),
        s,
        level,
        delta0,
        w: ScalarField::Closed(w_closed.clone()),
        f: ScalarField::Closed(f_closed.clone()),
        psi: ScalarField::Closed(field(BgOutput::Psi)),
        min_eig: f64::NAN,
        w_closed,
        f_closed,
    }
}

/// Smallest eigenvalue of `(w_αβ̄)` over the net, with its location.
fn certify(pair: &BackgroundPair, net: &[CPoint]) -> (f64, Option<CPoint>) {
    use rayon::prelude::*;
    let eigs: Vec<f64> = net
        .par_iter()
        .map(|p| match pair.node_data(p) {
            Ok(d) if d.w.is_finite() => min_eigenvalue(&d.hess),
            _ => f64::NAN,
        })
        .collect();
    let mut worst = (f64::INFINITY, None);
    for (e, p) in eigs.iter().zip(net) {
        if e.is_nan() || *e < worst.0 {
            worst = (if e.is_nan() { f64::NEG_INFINITY } else { *e }, Some(p.clone()));
            if e.is_nan() {
                break;
            }
        }
    }
    worst
}

/// Construct `(w, F)` on the slice `D_s` from the level-`l` Fefferman
/// solution. With `delta0 = None` the unblended potential is tried first
/// and the blend radius `0.3·sup|φ|` is used if positivity fails;
/// `Some(δ₀)` forces that blend radius.
pub fn background_pair(
    fam: &Arc<FamilyDefinition>,
    s: Complex64,
    level: usize,
    delta0: Option<f64>,
) -> Result<BackgroundPair> {
    let net = fam.interior_net(s, CERTIFY_POINTS, 11);
    let candidates: Vec<Option<f64>> = match delta0 {
        Some(d) => vec![Some(d)],
        None => {
            let sup = net.iter().map(|p| fam.phi_value(p).abs()).fold(0.0, f64::max);
            vec![None, Some(0.3 * sup)]
        }
    };
    certified_pair(fam, s, level, &net, candidates)
}

/// As [`background_pair`] with exactly the given blend choice (`None`
/// meaning unblended), so neighbouring slices can share one background.
pub fn background_pair_fixed(
    fam: &Arc<FamilyDefinition>,
    s: Complex64,
    level: usize,
    delta0: Option<f64>,
) -> Result<BackgroundPair> {
    let net = fam.interior_net(s, CERTIFY_POINTS, 11);
    certified_pair(fam, s, level, &net, vec![delta0])
}

fn certified_pair(
    fam: &Arc<FamilyDefinition>,
    s: Complex64,
    level: usize,
    net: &[CPoint],
    candidates: Vec<Option<f64>>,
) -> Result<BackgroundPair> {
    fefferman_sequence(fam, s, level)?;
    let mut last = (f64::NEG_INFINITY, None);
    for d in candidates {
        let mut pair = make_pair(fam, s, level, d);
        let (min_eig, at) = certify(&pair, net);
        if min_eig > 0.0 {
            log::debug!("background for {} at s={s}: delta0={d:?}, min eig {min_eig:e}", fam.name);
            pair.min_eig = min_eig;
            return Ok(pair);
        }
        last = (min_eig, at);
    }
    Err(Error::BlendFailed {
        point: last.1.unwrap_or_else(|| fam.slice_center(s)),
        min_eig: last.0,
    })
}
