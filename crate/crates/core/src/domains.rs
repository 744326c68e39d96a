//! Catalog of families `D = {φ(z, s) < 0} ⊂ ℂⁿ × ℂ` of strongly pseudoconvex
//! slices, with exact defining-function jets, closed-form Kähler–Einstein
//! potentials where known, and boundary geometry queries.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::Halton;
use crate::wirtinger::{jet, CPoint, ClosedForm, Jet, ScalarField, Vars};

/// `|φ|` below which a point counts as lying on the boundary.
pub const BOUNDARY_TOL: f64 = 1e-9;

/// Number of points in the invariant audit run at instantiation.
pub const AUDIT_POINTS: usize = 100;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Exponent of the bump `(1 − t)^p` used by `perturbed_ball`. With the
/// default radius the support covers the closed domain, so the bump is a
/// polynomial there and its high derivatives stay moderate.
const BUMP_POWER: i32 = 4;

// ---------------------------------------------------------------------------
// Polynomials in s

/// A complex polynomial in `s`, coefficients in increasing degree.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly(pub Vec<Complex64>);

impl Poly {
    fn constant(c: Complex64) -> Poly {
        Poly(vec![c])
    }

    fn trim(mut self) -> Poly {
        while self.0.len() > 1 && *self.0.last().unwrap() == ZERO {
            self.0.pop();
        }
        self
    }

    fn add(&self, o: &Poly, sign: f64) -> Poly {
        let m = self.0.len().max(o.0.len());
        Poly(
            (0..m)
                .map(|k| self.0.get(k).copied().unwrap_or(ZERO) + o.0.get(k).copied().unwrap_or(ZERO) * sign)
                .collect(),
        )
        .trim()
    }

    fn mul(&self, o: &Poly) -> Poly {
        let mut c = vec![ZERO; self.0.len() + o.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in o.0.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Poly(c).trim()
    }

    pub fn degree(&self) -> usize {
        self.0.len() - 1
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.0.iter().rev().fold(ZERO, |acc, c| acc * s + c)
    }

    pub fn derivative(&self) -> Poly {
        if self.0.len() == 1 {
            return Poly::constant(ZERO);
        }
        Poly(self.0.iter().enumerate().skip(1).map(|(k, c)| c * k as f64).collect())
    }

    /// Horner evaluation on a jet.
    pub fn eval_jet(&self, s: &Jet) -> Jet {
        let mut acc = Jet::constant(s.key(), *self.0.last().unwrap());
        for c in self.0.iter().rev().skip(1) {
            acc = (&acc * s).add_const(*c);
        }
        acc
    }

    /// Parse an expression in `s` built from numbers, `i`, `+ - * /`,
    /// non-negative integer powers `^` and parentheses. Division is only by
    /// constants.
    pub fn parse(src: &str) -> std::result::Result<Poly, String> {
        let toks: Vec<char> = src.chars().filter(|c| !c.is_whitespace()).collect();
        let mut p = PolyParser { toks: &toks, pos: 0 };
        let out = p.expr()?;
        if p.pos != toks.len() {
            return Err(format!("unexpected `{}` at offset {}", toks[p.pos], p.pos));
        }
        Ok(out)
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<String> = self
            .0
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != ZERO)
            .map(|(k, c)| format!("({}{:+}i)*s^{k}", c.re, c.im))
            .collect();
        if terms.is_empty() {
            write!(f, "0")
        } else {
            write!(f, "{}", terms.join(" + "))
        }
    }
}

struct PolyParser<'a> {
    toks: &'a [char],
    pos: usize,
}

impl PolyParser<'_> {
    fn peek(&self) -> Option<char> {
        self.toks.get(self.pos).copied()
    }

    fn expr(&mut self) -> std::result::Result<Poly, String> {
        let mut acc = self.term()?;
        while let Some(c @ ('+' | '-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = acc.add(&rhs, if c == '+' { 1.0 } else { -1.0 });
        }
        Ok(acc)
    }

    fn term(&mut self) -> std::result::Result<Poly, String> {
        let mut acc = self.unary()?;
        while let Some(c @ ('*' | '/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            acc = if c == '*' {
                acc.mul(&rhs)
            } else {
                if rhs.degree() > 0 || rhs.0[0] == ZERO {
                    return Err("division only by nonzero constants".into());
                }
                acc.mul(&Poly::constant(rhs.0[0].inv()))
            };
        }
        Ok(acc)
    }

    fn unary(&mut self) -> std::result::Result<Poly, String> {
        match self.peek() {
            Some('-') => {
                self.pos += 1;
                Ok(self.unary()?.mul(&Poly::constant(Complex64::new(-1.0, 0.0))))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> std::result::Result<Poly, String> {
        let base = self.atom()?;
        if self.peek() != Some('^') {
            return Ok(base);
        }
        self.pos += 1;
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        let e: u32 = self.toks[start..self.pos]
            .iter()
            .collect::<String>()
            .parse()
            .map_err(|_| format!("expected integer exponent at offset {start}"))?;
        let mut out = Poly::constant(Complex64::new(1.0, 0.0));
        for _ in 0..e {
            out = out.mul(&base);
        }
        Ok(out)
    }

    fn atom(&mut self) -> std::result::Result<Poly, String> {
        match self.peek() {
            Some('s') => {
                self.pos += 1;
                Ok(Poly(vec![ZERO, Complex64::new(1.0, 0.0)]))
            }
            Some('i') => {
                self.pos += 1;
                Ok(Poly::constant(Complex64::new(0.0, 1.0)))
            }
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(')') {
                    return Err(format!("missing `)` at offset {}", self.pos));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => {
                let start = self.pos;
                while matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == '.') {
                    self.pos += 1;
                }
                let txt: String = self.toks[start..self.pos].iter().collect();
                let v: f64 = txt.parse().map_err(|_| format!("bad number `{txt}`"))?;
                Ok(Poly::constant(Complex64::new(v, 0.0)))
            }
            Some(c) => Err(format!("unexpected `{c}` at offset {}", self.pos)),
            None => Err("unexpected end of expression".into()),
        }
    }
}

// ---------------------------------------------------------------------------
// Parameters and family kinds

fn default_n() -> usize {
    1
}
fn default_c() -> String {
    "s/2".into()
}
fn default_kappa() -> f64 {
    1.0
}
fn default_epsilon() -> f64 {
    0.05
}
fn default_bump_radius() -> f64 {
    1.5
}
fn default_base_radius() -> f64 {
    0.5
}

/// Plain-data family parameters, as read from configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyParams {
    #[serde(default = "default_n")]
    pub n: usize,
    /// Ellipsoid coefficients of `|z^α|²` (default all 1).
    #[serde(default)]
    pub a: Vec<f64>,
    /// Ellipsoid coefficients of `Re (z^α)²` (default all 0).
    #[serde(default)]
    pub q: Vec<f64>,
    /// Holomorphic translation `c(s)` of `translated_ball`.
    #[serde(default = "default_c")]
    pub c: String,
    /// Exponential rate of `hartogs_radius`.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Bump amplitude of `perturbed_ball`.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Bump center (real parts of `z`, default `(0.3, 0, …)`).
    #[serde(default)]
    pub center: Vec<f64>,
    #[serde(default = "default_bump_radius")]
    pub bump_radius: f64,
    /// Radius of the base disc `U`.
    #[serde(default = "default_base_radius")]
    pub base_radius: f64,
}

impl Default for FamilyParams {
    fn default() -> Self {
        FamilyParams {
            n: default_n(),
            a: Vec::new(),
            q: Vec::new(),
            c: default_c(),
            kappa: default_kappa(),
            epsilon: default_epsilon(),
            center: Vec::new(),
            bump_radius: default_bump_radius(),
            base_radius: default_base_radius(),
        }
    }
}

impl FamilyParams {
    pub fn with_n(n: usize) -> Self {
        FamilyParams {
            n,
            ..FamilyParams::default()
        }
    }
}

/// The catalog entries.
#[derive(Clone, Debug)]
pub enum FamilyKind {
    /// `|z|² + |s|² < 1`.
    Ball,
    /// `|z − c(s)e₁|² < 1`.
    TranslatedBall { c: Poly },
    /// `|z| < |e^{κs}|`.
    HartogsRadius { kappa: f64 },
    /// `Σ a_α|z^α|² + Re(q_α (z^α)²) + |s|² < 1`.
    Ellipsoid { a: Vec<f64>, q: Vec<f64> },
    /// `|z|² + |s|² − 1 + ε·(1 − |z−p₀|²/r²)₊^p < 0`.
    PerturbedBall {
        epsilon: f64,
        center: Vec<Complex64>,
        radius: f64,
    },
}

pub const CATALOG: [&str; 5] = [
    "ball_family",
    "translated_ball",
    "hartogs_radius",
    "ellipsoid_family",
    "perturbed_ball",
];

/// Defining function of a catalog family, optionally shifted by a
/// constant (sublevel sets `{φ < −σ}` are families of the same kind).
struct PhiField {
    n: usize,
    kind: FamilyKind,
    shift: f64,
}

impl ClosedForm for PhiField {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, v: &Vars<'_>) -> Result<Jet> {
        let n = self.n;
        let one = Complex64::new(1.0, 0.0);
        let out = match &self.kind {
            FamilyKind::Ball => (&v.z_norm_sqr() + &v.s_norm_sqr()).add_const(-1.0),
            FamilyKind::TranslatedBall { c } => {
                let cs = c.eval_jet(&v.s());
                // conj(c(s)) is the conjugate polynomial evaluated at s̄
                let cbar = conj_poly(c).eval_jet(&v.sbar());
                let d1 = &v.z(0) - &cs;
                let d1b = &v.zbar(0) - &cbar;
                let mut acc = &d1 * &d1b;
                for a in 1..n {
                    acc = &acc + &(&v.z(a) * &v.zbar(a));
                }
                acc.add_const(-1.0)
            }
            FamilyKind::HartogsRadius { kappa } => {
                let e = (&v.s() + &v.sbar()).scale(-kappa).exp();
                (&v.z_norm_sqr() * &e).add_const(-1.0)
            }
            FamilyKind::Ellipsoid { a, q } => {
                let mut acc = v.s_norm_sqr().add_const(-1.0);
                for k in 0..n {
                    let (z, zb) = (v.z(k), v.zbar(k));
                    acc = &acc + &(&z * &zb).scale(a[k]);
                    if q[k] != 0.0 {
                        acc = &acc + &(&(&z * &z) + &(&zb * &zb)).scale(0.5 * q[k]);
                    }
                }
                acc
            }
            FamilyKind::PerturbedBall {
                epsilon,
                center,
                radius,
            } => {
                let base = (&v.z_norm_sqr() + &v.s_norm_sqr()).add_const(-1.0);
                let mut t = v.constant(0.0);
                for k in 0..n {
                    let d = v.z(k).add_const(-center[k]);
                    let db = v.zbar(k).add_const(-center[k].conj());
                    t = &t + &(&d * &db);
                }
                let t = t.scale(1.0 / (radius * radius));
                if t.re() < 1.0 {
                    let m = t.scale(-one).add_const(1.0);
                    let mut p = v.constant(1.0);
                    for _ in 0..BUMP_POWER {
                        p = &p * &m;
                    }
                    &base + &p.scale(*epsilon)
                } else {
                    base
                }
            }
        };
        Ok(out.add_const(self.shift))
    }
}

fn conj_poly(p: &Poly) -> Poly {
    Poly(p.0.iter().map(|c| c.conj()).collect())
}

/// Closed-form Kähler–Einstein potentials `h = (1/(n+1)) log det(h_{αβ̄})`.
struct OracleH {
    n: usize,
    kind: FamilyKind,
}

impl ClosedForm for OracleH {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, v: &Vars<'_>) -> Result<Jet> {
        let inv = 1.0 / (self.n as f64 + 1.0);
        let neg_log = |x: Jet| -> Jet { -x.ln() };
        match &self.kind {
            FamilyKind::Ball => {
                let r2 = v.s_norm_sqr().scale(-1.0).add_const(1.0);
                let d = &r2 - &v.z_norm_sqr();
                Ok(&r2.ln().scale(inv) + &neg_log(d))
            }
            FamilyKind::TranslatedBall { c } => {
                let cs = c.eval_jet(&v.s());
                let cbar = conj_poly(c).eval_jet(&v.sbar());
                let mut acc = &(&v.z(0) - &cs) * &(&v.zbar(0) - &cbar);
                for a in 1..self.n {
                    acc = &acc + &(&v.z(a) * &v.zbar(a));
                }
                Ok(neg_log(acc.scale(-1.0).add_const(1.0)))
            }
            FamilyKind::HartogsRadius { kappa } => {
                let lin = (&v.s() + &v.sbar()).scale(*kappa);
                let r2 = lin.exp();
                Ok(&lin.scale(inv) + &neg_log(&r2 - &v.z_norm_sqr()))
            }
            _ => unreachable!("no closed-form potential"),
        }
    }
}

/// Holomorphic fiber-preserving map `D → D₀ × U` of a trivial family.
#[derive(Clone, Debug)]
pub enum Trivialization {
    /// `(z, s) ↦ (z − c(s)e₁, s)`.
    Translation(Poly),
    /// `(z, s) ↦ (z e^{−κs}, s)`.
    Scaling(f64),
}

impl Trivialization {
    /// Image of `p` in the central fiber coordinates.
    pub fn to_central(&self, p: &CPoint) -> CPoint {
        match self {
            Trivialization::Translation(c) => {
                let mut z = p.z.clone();
                z[0] -= c.eval(p.s) - c.eval(ZERO);
                CPoint::new(z, ZERO)
            }
            Trivialization::Scaling(k) => {
                let f = (-(p.s) * *k).exp();
                CPoint::new(p.z.iter().map(|z| z * f).collect(), ZERO)
            }
        }
    }

    /// Point of the fiber over `s` corresponding to `z0` in the central fiber.
    pub fn from_central(&self, z0: &[Complex64], s: Complex64) -> CPoint {
        match self {
            Trivialization::Translation(c) => {
                let mut z = z0.to_vec();
                z[0] += c.eval(s) - c.eval(ZERO);
                CPoint::new(z, s)
            }
            Trivialization::Scaling(k) => {
                let f = (s * *k).exp();
                CPoint::new(z0.iter().map(|z| z * f).collect(), s)
            }
        }
    }

    /// Slice components of the holomorphic lift of `∂/∂s` at `p`.
    pub fn lift(&self, p: &CPoint) -> Vec<Complex64> {
        match self {
            Trivialization::Translation(c) => {
                let mut v = vec![ZERO; p.n()];
                v[0] = c.derivative().eval(p.s);
                v
            }
            Trivialization::Scaling(k) => p.z.iter().map(|z| z * *k).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Family definitions

/// A family of domains with exact defining-function jets.
#[derive(Clone)]
pub struct FamilyDefinition {
    pub name: String,
    pub n: usize,
    pub kind: FamilyKind,
    pub params: FamilyParams,
    /// Defining function, negative inside.
    pub phi: ScalarField,
    phi_closed: Arc<dyn ClosedForm>,
    /// Constant added to the catalog defining function.
    pub shift: f64,
    /// Radius of the base disc.
    pub base_radius: f64,
    pub oracle_h: Option<ScalarField>,
    pub trivialization: Option<Trivialization>,
}

impl fmt::Debug for FamilyDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FamilyDefinition")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("kind", &self.kind)
            .field("shift", &self.shift)
            .field("base_radius", &self.base_radius)
            .finish()
    }
}

fn bad(family: &str, reason: impl Into<String>) -> Error {
    Error::BadParameter {
        family: family.to_string(),
        reason: reason.into(),
    }
}

/// Build and audit a catalog family.
pub fn catalog_instantiate(name: &str, params: &FamilyParams) -> Result<FamilyDefinition> {
    let fam = build_family(name, params)?;
    fam.audit(AUDIT_POINTS)?;
    Ok(fam)
}

fn build_family(name: &str, params: &FamilyParams) -> Result<FamilyDefinition> {
    let n = params.n;
    if !(1..=3).contains(&n) {
        return Err(bad(name, format!("slice dimension {n} outside 1..=3")));
    }
    if !(params.base_radius > 0.0) {
        return Err(bad(name, "base_radius must be positive"));
    }
    let re = |x: f64| Complex64::new(x, 0.0);
    let (kind, oracle, triv) = match name {
        "ball_family" => {
            if params.base_radius >= 1.0 {
                return Err(bad(name, "base_radius must be below 1"));
            }
            (FamilyKind::Ball, true, None)
        }
        "translated_ball" => {
            let c = Poly::parse(&params.c).map_err(|e| bad(name, format!("c(s): {e}")))?;
            (FamilyKind::TranslatedBall { c: c.clone() }, true, Some(Trivialization::Translation(c)))
        }
        "hartogs_radius" => {
            if !params.kappa.is_finite() {
                return Err(bad(name, "kappa must be finite"));
            }
            (
                FamilyKind::HartogsRadius { kappa: params.kappa },
                true,
                Some(Trivialization::Scaling(params.kappa)),
            )
        }
        "ellipsoid_family" => {
            let a = if params.a.is_empty() { vec![1.0; n] } else { params.a.clone() };
            let q = if params.q.is_empty() { vec![0.0; n] } else { params.q.clone() };
            if a.len() != n || q.len() != n {
                return Err(bad(name, format!("a and q need {n} entries")));
            }
            if a.iter().zip(&q).any(|(a, q)| !(*a > q.abs())) {
                return Err(bad(name, "need a_α > |q_α| for a bounded convex slice"));
            }
            if params.base_radius >= 1.0 {
                return Err(bad(name, "base_radius must be below 1"));
            }
            (FamilyKind::Ellipsoid { a, q }, false, None)
        }
        "perturbed_ball" => {
            if params.epsilon.abs() > 0.05 {
                return Err(bad(name, "bump amplitude |epsilon| must not exceed 0.05"));
            }
            if !(params.bump_radius > 0.0) {
                return Err(bad(name, "bump_radius must be positive"));
            }
            let mut center: Vec<Complex64> = params.center.iter().map(|&x| re(x)).collect();
            if center.is_empty() {
                center = vec![ZERO; n];
                center[0] = re(0.3);
            }
            if center.len() != n {
                return Err(bad(name, format!("center needs {n} entries")));
            }
            if params.base_radius >= 1.0 {
                return Err(bad(name, "base_radius must be below 1"));
            }
            (
                FamilyKind::PerturbedBall {
                    epsilon: params.epsilon,
                    center,
                    radius: params.bump_radius,
                },
                false,
                None,
            )
        }
        other => return Err(Error::UnknownFamily(other.to_string())),
    };
    let phi_closed: Arc<dyn ClosedForm> = Arc::new(PhiField {
        n,
        kind: kind.clone(),
        shift: 0.0,
    });
    let oracle_h = oracle.then(|| {
        ScalarField::Closed(Arc::new(OracleH {
            n,
            kind: kind.clone(),
        }))
    });
    Ok(FamilyDefinition {
        name: name.to_string(),
        n,
        kind,
        params: params.clone(),
        phi: ScalarField::Closed(phi_closed.clone()),
        phi_closed,
        shift: 0.0,
        base_radius: params.base_radius,
        oracle_h,
        trivialization: triv,
    })
}

impl FamilyDefinition {
    pub fn phi_closed(&self) -> &Arc<dyn ClosedForm> {
        &self.phi_closed
    }

    pub fn phi_value(&self, p: &CPoint) -> f64 {
        self.phi_closed.value(p).unwrap_or(f64::INFINITY)
    }

    /// The sublevel family `{φ < −σ}` (defining function `φ + σ`); the
    /// closed-form oracles do not carry over.
    pub fn sublevel(&self, sigma: f64) -> FamilyDefinition {
        let shift = self.shift + sigma;
        let phi_closed: Arc<dyn ClosedForm> = Arc::new(PhiField {
            n: self.n,
            kind: self.kind.clone(),
            shift,
        });
        FamilyDefinition {
            name: format!("{}@{:+e}", self.name, shift),
            phi: ScalarField::Closed(phi_closed.clone()),
            phi_closed,
            shift,
            oracle_h: None,
            trivialization: None,
            ..self.clone()
        }
    }

    /// A point of the slice `D_s` that every ray from it leaves exactly once.
    pub fn slice_center(&self, s: Complex64) -> CPoint {
        let mut p = CPoint::origin(self.n);
        p.s = s;
        if let FamilyKind::TranslatedBall { c } = &self.kind {
            p.z[0] = c.eval(s);
        }
        p
    }

    /// Box in real slice coordinates `(x, y)` containing `D_s`.
    pub fn slice_box(&self, s: Complex64) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let r_ball = (1.0 - s.norm_sqr()).max(0.0).sqrt();
        let half: Vec<f64> = match &self.kind {
            FamilyKind::Ball => vec![r_ball; 2 * n],
            FamilyKind::TranslatedBall { .. } => vec![1.0; 2 * n],
            FamilyKind::HartogsRadius { kappa } => vec![(kappa * s.re).exp(); 2 * n],
            FamilyKind::Ellipsoid { a, q } => {
                let mut h = vec![0.0; 2 * n];
                for k in 0..n {
                    h[k] = r_ball / (a[k] + q[k]).sqrt();
                    h[n + k] = r_ball / (a[k] - q[k]).sqrt();
                }
                h
            }
            FamilyKind::PerturbedBall { epsilon, .. } => {
                vec![(1.0 - s.norm_sqr() + epsilon.abs()).max(0.0).sqrt(); 2 * n]
            }
        };
        let c = self.slice_center(s).real_coords();
        let lo = c.iter().zip(&half).map(|(c, h)| c - h).collect();
        let hi = c.iter().zip(&half).map(|(c, h)| c + h).collect();
        (lo, hi)
    }

    /// Boundary point of `D_s` on the ray from the slice center in the
    /// slice direction `dir`.
    pub fn boundary_point(&self, s: Complex64, dir: &[Complex64]) -> Result<CPoint> {
        let c = self.slice_center(s);
        if self.phi_value(&c) >= 0.0 {
            return Err(Error::OutOfDomain(c));
        }
        let norm = dir.iter().map(|d| d.norm_sqr()).sum::<f64>().sqrt();
        let d: Vec<Complex64> = dir.iter().map(|x| x / norm).collect();
        let at = |t: f64| c.offset(&d, t);
        let (lo, hi) = self.slice_box(s);
        let mut t_hi: f64 = lo.iter().zip(&hi).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
        while self.phi_value(&at(t_hi)) < 0.0 {
            t_hi *= 2.0;
        }
        let mut t_lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (t_lo + t_hi);
            if mid <= t_lo || mid >= t_hi {
                break;
            }
            if self.phi_value(&at(mid)) < 0.0 {
                t_lo = mid;
            } else {
                t_hi = mid;
            }
        }
        let p = at(t_lo);
        let phi = self.phi_value(&p);
        if phi.abs() > BOUNDARY_TOL {
            return Err(Error::NotOnBoundary { point: p, phi });
        }
        Ok(p)
    }

    /// Quasi-random interior points of `D_s` (uniform in the slice box,
    /// rejected outside), skipping `skip` leading net points.
    pub fn interior_net(&self, s: Complex64, count: usize, skip: u64) -> Vec<CPoint> {
        let (lo, hi) = self.slice_box(s);
        let mut out = Vec::with_capacity(count);
        for u in Halton::new(2 * self.n, skip).take(200 * count.max(1)) {
            let x: Vec<f64> = (0..2 * self.n).map(|k| lo[k] + u[k] * (hi[k] - lo[k])).collect();
            let p = CPoint::from_real_coords(&x, s);
            if self.phi_value(&p) < 0.0 {
                out.push(p);
                if out.len() == count {
                    break;
                }
            }
        }
        out
    }

    /// Quasi-random boundary points of `D_s`.
    pub fn boundary_net(&self, s: Complex64, count: usize, skip: u64) -> Result<Vec<CPoint>> {
        Halton::new(2 * self.n, skip)
            .take(count)
            .map(|u| {
                let dir: Vec<Complex64> = (0..self.n)
                    .map(|a| {
                        let (u1, u2) = (u[2 * a].max(1e-12), u[2 * a + 1]);
                        Complex64::from_polar((-2.0 * u1.ln()).sqrt(), 2.0 * std::f64::consts::PI * u2)
                    })
                    .collect();
                self.boundary_point(s, &dir)
            })
            .collect()
    }

    /// Check the defining-function conditions on a quasi-random net of
    /// boundary points of slices over the base disc and interior points on
    /// the segments joining them to the slice centers.
    pub fn audit(&self, count: usize) -> Result<()> {
        let n = self.n;
        let mut net = Halton::new(2 * n + 3, 0);
        for _ in 0..count {
            let u = net.next().unwrap();
            let rs = self.base_radius * u[0].sqrt() * 0.999;
            let s = Complex64::from_polar(rs, 2.0 * std::f64::consts::PI * u[1]);
            // direction on the unit sphere of ℂⁿ via Box–Muller pairs
            let dir: Vec<Complex64> = (0..n)
                .map(|a| {
                    let (u1, u2) = (u[3 + 2 * a].max(1e-12), u[4 + 2 * a]);
                    Complex64::from_polar((-2.0 * u1.ln()).sqrt(), 2.0 * std::f64::consts::PI * u2)
                })
                .collect();
            let b = self.boundary_point(s, &dir)?;
            let frac = 0.05 + 0.9 * u[2];
            let c = self.slice_center(s);
            let interior = CPoint::new(
                c.z.iter().zip(&b.z).map(|(c, b)| c + (b - c) * frac).collect(),
                s,
            );
            if !(self.phi_value(&interior) < 0.0) {
                return Err(Error::InvariantViolated {
                    condition: "phi < 0 in the interior",
                    point: interior,
                });
            }
            let jb = jet(&self.phi, &b, 2)?;
            let grad_z: f64 = jb.grad_z.iter().map(|g| g.norm_sqr()).sum::<f64>().sqrt();
            if grad_z <= 1e-9 {
                return Err(Error::InvariantViolated {
                    condition: "d_z phi != 0 on the boundary",
                    point: b,
                });
            }
            for p in [&interior, &b] {
                let j = jet(&self.phi, p, 2)?;
                if min_eigenvalue(&j.hess_zzbar) <= 1e-9 {
                    return Err(Error::InvariantViolated {
                        condition: "slice Hessian of phi positive definite",
                        point: p.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &DMatrix<Complex64>) -> f64 {
    let h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    h.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Orthonormal basis (columns) of `{v : Σ g_j v^j = 0}`.
pub fn complex_tangent_basis(g: &[Complex64]) -> DMatrix<Complex64> {
    let m = g.len();
    let mut basis: Vec<Vec<Complex64>> = Vec::new();
    let gn = g.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let normal: Vec<Complex64> = g.iter().map(|x| x.conj() / gn).collect();
    let dot = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).map(|(x, y)| x * y.conj()).sum::<Complex64>();
    for k in 0..m {
        let mut v = vec![ZERO; m];
        v[k] = Complex64::new(1.0, 0.0);
        for u in std::iter::once(&normal).chain(basis.iter()) {
            let c = dot(&v, u);
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= c * ui;
            }
        }
        let nv = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if nv > 1e-6 && basis.len() < m - 1 {
            basis.push(v.iter().map(|x| x / nv).collect());
        }
    }
    DMatrix::from_fn(m, basis.len(), |i, j| basis[j][i])
}

/// Minimal eigenvalue of the Levi form of `φ` on the complex tangent space
/// of `∂D` at the boundary point `p`.
pub fn strong_pseudoconvexity_margin(fam: &FamilyDefinition, p: &CPoint) -> Result<f64> {
    let j = jet(&fam.phi, p, 2)?;
    if j.value.re.abs() > BOUNDARY_TOL {
        return Err(Error::NotOnBoundary {
            point: p.clone(),
            phi: j.value.re,
        });
    }
    let mut g = j.grad_z.clone();
    g.push(j.grad_s);
    let e = complex_tangent_basis(&g);
    let h = j.full_hessian();
    let restricted = e.transpose() * h * e.map(|x| x.conj());
    Ok(min_eigenvalue(&restricted))
}

/// Interior samples on the inward normal line through a boundary point,
/// at geometrically decreasing `|φ|`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryRay {
    pub anchor: CPoint,
    /// Unit inward slice direction.
    pub direction: Vec<Complex64>,
    /// Distances from the anchor, decreasing.
    pub t: Vec<f64>,
    /// `φ` at the samples, strictly increasing to 0.
    pub phi: Vec<f64>,
    pub points: Vec<CPoint>,
}

/// Samples with `φ_k = first·ratio^k`, `k = 0..count`, along the inward
/// normal at `p ∈ ∂D_s`.
pub fn boundary_ray(
    fam: &FamilyDefinition,
    p: &CPoint,
    count: usize,
    first: f64,
    ratio: f64,
) -> Result<BoundaryRay> {
    assert!(first < 0.0 && (0.0..1.0).contains(&ratio));
    let j = jet(&fam.phi, p, 1)?;
    if j.value.re.abs() > BOUNDARY_TOL {
        return Err(Error::NotOnBoundary {
            point: p.clone(),
            phi: j.value.re,
        });
    }
    // the real gradient in ℂⁿ is 2 φ_{z̄}
    let norm = j.grad_zbar.iter().map(|g| g.norm_sqr()).sum::<f64>().sqrt();
    let dir: Vec<Complex64> = j.grad_zbar.iter().map(|g| -g / norm).collect();
    let at = |t: f64| p.offset(&dir, t);
    // bracket the deepest level
    let mut t_max = 1e-3;
    while fam.phi_value(&at(t_max)) > first {
        t_max *= 2.0;
        if t_max > 1e3 {
            return Err(Error::OutOfDomain(at(t_max)));
        }
    }
    let mut ts = Vec::with_capacity(count);
    let mut phis = Vec::with_capacity(count);
    let mut pts = Vec::with_capacity(count);
    let mut level = first;
    for _ in 0..count {
        let (mut lo, mut hi) = (0.0, t_max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if fam.phi_value(&at(mid)) > level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        let q = at(t);
        phis.push(fam.phi_value(&q));
        ts.push(t);
        pts.push(q);
        level *= ratio;
    }
    Ok(BoundaryRay {
        anchor: p.clone(),
        direction: dir,
        t: ts,
        phi: phis,
        points: pts,
    })
}

/// The potential `g = −log(−φ)` of the family.
pub fn g_potential(fam: &FamilyDefinition) -> ScalarField {
    let phi = fam.phi_closed.clone();
    ScalarField::Closed(Arc::new(MappedField {
        n: fam.n,
        inner: phi,
        map: |j: Jet| -(j.scale(-1.0).ln()),
    }))
}

struct MappedField<M> {
    n: usize,
    inner: Arc<dyn ClosedForm>,
    map: M,
}

impl<M: Fn(Jet) -> Jet + Send + Sync> ClosedForm for MappedField<M> {
    fn dim(&self) -> usize {
        self.n
    }
    fn eval(&self, v: &Vars<'_>) -> Result<Jet> {
        Ok((self.map)(self.inner.eval(v)?))
    }
}

/// `g^{β̄α}` from the closed formula
/// `(−φ)(φ^{β̄α} + φ^{β̄}φ^α / (φ − |dφ|²))`, indexed `[(β, α)]`, where
/// indices are raised with the inverse of `(φ_{αβ̄})` and
/// `|dφ|² = φ^{αβ̄}φ_α φ_{β̄}`.
pub fn g_inverse_closed_form(fam: &FamilyDefinition, p: &CPoint) -> Result<DMatrix<Complex64>> {
    let j = jet(&fam.phi, p, 2)?;
    let n = fam.n;
    let pinv = j
        .hess_zzbar
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularSliceBlock(p.clone()))?;
    let phi = j.value;
    // φ^{β̄} = φ^{β̄α} φ_α and φ^α = φ^{β̄α} φ_{β̄}
    let up_bar: Vec<Complex64> = (0..n).map(|b| (0..n).map(|a| pinv[(b, a)] * j.grad_z[a]).sum()).collect();
    let up: Vec<Complex64> = (0..n).map(|a| (0..n).map(|b| pinv[(b, a)] * j.grad_zbar[b]).sum()).collect();
    let dphi2: Complex64 = (0..n).map(|b| up_bar[b] * j.grad_zbar[b]).sum();
    Ok(DMatrix::from_fn(n, n, |b, a| -phi * (pinv[(b, a)] + up_bar[b] * up[a] / (phi - dphi2))))
}

/// `g^{αβ̄} g_α g_{β̄}` for `g = −log(−φ)`.
pub fn g_gradient_norm(fam: &FamilyDefinition, p: &CPoint) -> Result<f64> {
    let j = jet(&g_potential(fam), p, 2)?;
    let inv = j
        .hess_zzbar
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularSliceBlock(p.clone()))?;
    let n = fam.n;
    let mut acc = ZERO;
    for a in 0..n {
        for b in 0..n {
            acc += inv[(b, a)] * j.grad_z[a] * j.grad_zbar[b];
        }
    }
    Ok(acc.re)
}
