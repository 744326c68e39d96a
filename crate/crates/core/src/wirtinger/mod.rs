//! Wirtinger jets of scalar fields on `ℂⁿ × ℂ`.
//!
//! Closed-form fields are evaluated on truncated Taylor jets in the
//! independent variables `(z, z̄, s, s̄)`, which yields exact Wirtinger
//! derivatives of any order. Grid-sampled fields use finite-difference
//! stencils (see [`stencil`]).

pub mod stencil;
pub mod taylor;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use stencil::GridField;
pub use taylor::{Jet, LayoutKey};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// A point `(z, s) ∈ ℂⁿ × ℂ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CPoint {
    pub z: Vec<Complex64>,
    pub s: Complex64,
}

impl CPoint {
    pub fn new(z: Vec<Complex64>, s: Complex64) -> Self {
        CPoint { z, s }
    }

    pub fn origin(n: usize) -> Self {
        CPoint {
            z: vec![ZERO; n],
            s: ZERO,
        }
    }

    /// Point `(r·e₁, s)`.
    pub fn on_axis(n: usize, r: f64, s: Complex64) -> Self {
        let mut z = vec![ZERO; n];
        z[0] = Complex64::new(r, 0.0);
        CPoint { z, s }
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn is_finite(&self) -> bool {
        self.z.iter().all(|c| c.is_finite()) && self.s.is_finite()
    }

    pub fn z_norm_sqr(&self) -> f64 {
        self.z.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Real slice coordinates `(x₁..xₙ, y₁..yₙ)`.
    pub fn real_coords(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.z.iter().map(|c| c.re).collect();
        v.extend(self.z.iter().map(|c| c.im));
        v
    }

    pub fn from_real_coords(x: &[f64], s: Complex64) -> Self {
        let n = x.len() / 2;
        CPoint {
            z: (0..n).map(|a| Complex64::new(x[a], x[n + a])).collect(),
            s,
        }
    }

    /// Move along a direction in `ℂⁿ⁺¹` (last entry is the base component).
    pub fn offset(&self, dir: &[Complex64], t: f64) -> Self {
        let n = self.n();
        CPoint {
            z: (0..n).map(|a| self.z[a] + dir[a] * t).collect(),
            s: self.s + dir.get(n).copied().unwrap_or(ZERO) * t,
        }
    }
}

impl fmt::Display for CPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(z=[")?;
        for (i, c) in self.z.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{:.6}{:+.6}i", c.re, c.im)?;
        }
        write!(f, "], s={:.6}{:+.6}i)", self.s.re, self.s.im)
    }
}

/// Seeded coordinate jets at a point. Variable order is
/// `z¹..zⁿ, z̄¹..z̄ⁿ, s, s̄`.
#[derive(Clone, Copy)]
pub struct Vars<'a> {
    point: &'a CPoint,
    key: LayoutKey,
}

impl<'a> Vars<'a> {
    pub fn new(point: &'a CPoint, key: LayoutKey) -> Self {
        assert_eq!(point.n(), key.n as usize);
        Vars { point, key }
    }

    pub fn point(&self) -> &CPoint {
        self.point
    }

    pub fn key(&self) -> LayoutKey {
        self.key
    }

    pub fn n(&self) -> usize {
        self.key.n as usize
    }

    /// Same point, `extra` more orders in the slice variables.
    pub fn raised(&self, extra: usize) -> Vars<'a> {
        Vars {
            point: self.point,
            key: LayoutKey {
                kz: self.key.kz + extra as u8,
                ..self.key
            },
        }
    }

    pub fn constant(&self, c: impl Into<Complex64>) -> Jet {
        Jet::constant(self.key, c)
    }

    pub fn z(&self, a: usize) -> Jet {
        Jet::variable(self.key, a, self.point.z[a])
    }

    pub fn zbar(&self, a: usize) -> Jet {
        Jet::variable(self.key, self.n() + a, self.point.z[a].conj())
    }

    pub fn s(&self) -> Jet {
        if self.key.with_s {
            Jet::variable(self.key, 2 * self.n(), self.point.s)
        } else {
            self.constant(self.point.s)
        }
    }

    pub fn sbar(&self) -> Jet {
        if self.key.with_s {
            Jet::variable(self.key, 2 * self.n() + 1, self.point.s.conj())
        } else {
            self.constant(self.point.s.conj())
        }
    }

    /// `|z|²` as a jet.
    pub fn z_norm_sqr(&self) -> Jet {
        let mut acc = self.constant(0.0);
        for a in 0..self.n() {
            acc = &acc + &(&self.z(a) * &self.zbar(a));
        }
        acc
    }

    pub fn s_norm_sqr(&self) -> Jet {
        &self.s() * &self.sbar()
    }
}

/// Variable index of `z^a`.
pub fn var_z(_n: usize, a: usize) -> usize {
    a
}
/// Variable index of `z̄^a`.
pub fn var_zbar(n: usize, a: usize) -> usize {
    n + a
}
/// Variable index of `s`.
pub fn var_s(n: usize) -> usize {
    2 * n
}
/// Variable index of `s̄`.
pub fn var_sbar(n: usize) -> usize {
    2 * n + 1
}

/// A scalar field with exact jets.
pub trait ClosedForm: Send + Sync {
    /// Slice dimension `n`.
    fn dim(&self) -> usize;

    /// Evaluate the field on the seeded coordinate jets.
    fn eval(&self, vars: &Vars<'_>) -> Result<Jet>;

    fn contains(&self, _p: &CPoint) -> bool {
        true
    }

    /// Evaluate at a point with the given truncation.
    fn jet_at(&self, p: &CPoint, key: LayoutKey) -> Result<Jet> {
        if !self.contains(p) {
            return Err(Error::OutOfDomain(p.clone()));
        }
        self.eval(&Vars::new(p, key))
    }

    fn value(&self, p: &CPoint) -> Result<f64> {
        Ok(self.jet_at(p, LayoutKey::new(self.dim(), false, 0, 0))?.re())
    }
}

/// Closed-form field from a closure.
pub struct FnField<F> {
    n: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&Vars<'_>) -> Jet + Send + Sync,
{
    pub fn new(n: usize, f: F) -> Self {
        FnField { n, f }
    }

    pub fn shared(n: usize, f: F) -> Arc<dyn ClosedForm>
    where
        F: 'static,
    {
        Arc::new(FnField::new(n, f))
    }
}

impl<F> ClosedForm for FnField<F>
where
    F: Fn(&Vars<'_>) -> Jet + Send + Sync,
{
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, vars: &Vars<'_>) -> Result<Jet> {
        Ok((self.f)(vars))
    }
}

/// Value, first and second Wirtinger derivatives of a scalar field.
///
/// `hess_zzbar[(α, β)] = f_{αβ̄}`, `hess_zz[(α, β)] = f_{αβ}`,
/// `hess_szbar[β] = f_{sβ̄}`, `hess_zsbar[α] = f_{αs̄}`.
#[derive(Clone, Debug)]
pub struct WirtingerJet {
    pub value: Complex64,
    pub grad_z: Vec<Complex64>,
    pub grad_zbar: Vec<Complex64>,
    pub grad_s: Complex64,
    pub grad_sbar: Complex64,
    pub hess_zzbar: DMatrix<Complex64>,
    pub hess_zz: DMatrix<Complex64>,
    pub hess_szbar: Vec<Complex64>,
    pub hess_zsbar: Vec<Complex64>,
    pub hess_ssbar: Complex64,
    pub hess_ss: Complex64,
    /// Whether base derivatives were computed (false for slice grid fields).
    pub has_base: bool,
    /// Accuracy order of the stencils used; `None` for exact jets.
    pub stencil_order: Option<u8>,
}

impl WirtingerJet {
    pub fn zero(n: usize) -> Self {
        WirtingerJet {
            value: ZERO,
            grad_z: vec![ZERO; n],
            grad_zbar: vec![ZERO; n],
            grad_s: ZERO,
            grad_sbar: ZERO,
            hess_zzbar: DMatrix::zeros(n, n),
            hess_zz: DMatrix::zeros(n, n),
            hess_szbar: vec![ZERO; n],
            hess_zsbar: vec![ZERO; n],
            hess_ssbar: ZERO,
            hess_ss: ZERO,
            has_base: false,
            stencil_order: None,
        }
    }

    pub fn n(&self) -> usize {
        self.grad_z.len()
    }

    /// Read the Wirtinger derivatives of order ≤ `order` off a Taylor jet.
    pub fn from_jet(j: &Jet, order: usize) -> Self {
        let key = j.key();
        let n = key.n as usize;
        let mut out = WirtingerJet::zero(n);
        let mono = |vars: &[usize]| -> Complex64 {
            let mut e = [0u8; taylor::MAX_VARS];
            for &v in vars {
                e[v] += 1;
            }
            j.coeff(&e[..key.nvars()])
        };
        out.value = j.value();
        if order >= 1 {
            for a in 0..n {
                out.grad_z[a] = mono(&[a]);
                out.grad_zbar[a] = mono(&[n + a]);
            }
        }
        if order >= 2 {
            for a in 0..n {
                for b in 0..n {
                    out.hess_zzbar[(a, b)] = mono(&[a, n + b]);
                    let f = if a == b { 2.0 } else { 1.0 };
                    out.hess_zz[(a, b)] = mono(&[a, b]) * f;
                }
            }
        }
        if key.with_s {
            out.has_base = true;
            let (vs, vsb) = (2 * n, 2 * n + 1);
            if order >= 1 {
                out.grad_s = mono(&[vs]);
                out.grad_sbar = mono(&[vsb]);
            }
            if order >= 2 {
                for a in 0..n {
                    out.hess_szbar[a] = mono(&[vs, n + a]);
                    out.hess_zsbar[a] = mono(&[a, vsb]);
                }
                out.hess_ssbar = mono(&[vs, vsb]);
                out.hess_ss = mono(&[vs, vs]) * 2.0;
            }
        }
        out
    }

    /// Full `(n+1)×(n+1)` complex Hessian `(f_{jk̄})` over `(z¹..zⁿ, s)`.
    pub fn full_hessian(&self) -> DMatrix<Complex64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(&self.hess_zzbar);
        for a in 0..n {
            m[(a, n)] = self.hess_zsbar[a];
            m[(n, a)] = self.hess_szbar[a];
        }
        m[(n, n)] = self.hess_ssbar;
        m
    }

    /// `a·self + b·other`, entrywise.
    pub fn combine(&self, a: f64, other: &WirtingerJet, b: f64) -> WirtingerJet {
        let lin = |x: Complex64, y: Complex64| x * a + y * b;
        let linv = |x: &[Complex64], y: &[Complex64]| x.iter().zip(y).map(|(p, q)| lin(*p, *q)).collect();
        WirtingerJet {
            value: lin(self.value, other.value),
            grad_z: linv(&self.grad_z, &other.grad_z),
            grad_zbar: linv(&self.grad_zbar, &other.grad_zbar),
            grad_s: lin(self.grad_s, other.grad_s),
            grad_sbar: lin(self.grad_sbar, other.grad_sbar),
            hess_zzbar: self.hess_zzbar.map(|x| x * a) + other.hess_zzbar.map(|x| x * b),
            hess_zz: self.hess_zz.map(|x| x * a) + other.hess_zz.map(|x| x * b),
            hess_szbar: linv(&self.hess_szbar, &other.hess_szbar),
            hess_zsbar: linv(&self.hess_zsbar, &other.hess_zsbar),
            hess_ssbar: lin(self.hess_ssbar, other.hess_ssbar),
            hess_ss: lin(self.hess_ss, other.hess_ss),
            has_base: self.has_base && other.has_base,
            stencil_order: match (self.stencil_order, other.stencil_order) {
                (Some(p), Some(q)) => Some(p.min(q)),
                (p, q) => p.or(q),
            },
        }
    }
}

/// A scalar field: closed form with exact jets, or sampled on a slice grid.
#[derive(Clone)]
pub enum ScalarField {
    Closed(Arc<dyn ClosedForm>),
    Grid(Arc<GridField>),
}

impl ScalarField {
    pub fn dim(&self) -> usize {
        match self {
            ScalarField::Closed(f) => f.dim(),
            ScalarField::Grid(g) => g.grid().n,
        }
    }
}

impl From<Arc<dyn ClosedForm>> for ScalarField {
    fn from(f: Arc<dyn ClosedForm>) -> Self {
        ScalarField::Closed(f)
    }
}

/// Wirtinger jet of `f` at `p` up to total order `order ≤ 2`.
///
/// Grid fields are slicewise: their base derivatives are not available and
/// `p.s` must match the grid's slice.
pub fn jet(f: &ScalarField, p: &CPoint, order: usize) -> Result<WirtingerJet> {
    if order > 2 {
        return Err(Error::OrderUnsupported {
            order,
            what: "Wirtinger jets",
        });
    }
    match f {
        ScalarField::Closed(c) => {
            let key = LayoutKey::new(c.dim(), true, order, order);
            let j = c.jet_at(p, key)?;
            Ok(WirtingerJet::from_jet(&j, order))
        }
        ScalarField::Grid(g) => g.jet_at_point(p, order),
    }
}

/// Full complex Hessian over `(z, s)`; Hermitian for real fields.
pub fn hessian_blocks(f: &ScalarField, p: &CPoint) -> Result<DMatrix<Complex64>> {
    let j = jet(f, p, 2)?;
    if !j.has_base {
        return Err(Error::OrderUnsupported {
            order: 2,
            what: "base derivatives of a slice grid field",
        });
    }
    Ok(j.full_hessian())
}

/// Levi form `Σ f_{jk̄} v^j v̄^k` over all `n+1` variables.
pub fn levi_form(f: &ScalarField, p: &CPoint, v: &[Complex64]) -> Result<f64> {
    let h = hessian_blocks(f, p)?;
    Ok(hermitian_form(&h, v))
}

/// `v* M v` for a Hermitian `M` written as `Σ M_{jk} v^j v̄^k`.
pub fn hermitian_form(m: &DMatrix<Complex64>, v: &[Complex64]) -> f64 {
    let mut acc = ZERO;
    for j in 0..m.nrows() {
        for k in 0..m.ncols() {
            acc += m[(j, k)] * v[j] * v[k].conj();
        }
    }
    acc.re
}

/// Convert real-coordinate derivatives (axes `x₁..xₙ, y₁..yₙ`) into a
/// Wirtinger jet.
pub fn wirtinger_from_real(value: Complex64, d1: &[Complex64], d2: &DMatrix<Complex64>) -> WirtingerJet {
    let n = d1.len() / 2;
    let i = Complex64::new(0.0, 1.0);
    let mut out = WirtingerJet::zero(n);
    out.value = value;
    for a in 0..n {
        out.grad_z[a] = (d1[a] - i * d1[n + a]) * 0.5;
        out.grad_zbar[a] = (d1[a] + i * d1[n + a]) * 0.5;
    }
    for a in 0..n {
        for b in 0..n {
            let (xa, ya, xb, yb) = (a, n + a, b, n + b);
            out.hess_zzbar[(a, b)] = ((d2[(xa, xb)] + d2[(ya, yb)]) + i * (d2[(xa, yb)] - d2[(ya, xb)])) * 0.25;
            out.hess_zz[(a, b)] = ((d2[(xa, xb)] - d2[(ya, yb)]) - i * (d2[(xa, yb)] + d2[(ya, xb)])) * 0.25;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn field(n: usize, f: impl Fn(&Vars<'_>) -> Jet + Send + Sync + 'static) -> ScalarField {
        ScalarField::Closed(FnField::shared(n, f))
    }

    #[test]
    fn abs_z_squared() {
        let f = field(1, |v| v.z_norm_sqr());
        let j = jet(&f, &CPoint::on_axis(1, 1.0, ZERO), 2).unwrap();
        assert_eq!(j.grad_z[0], c(1.0, 0.0));
        assert_eq!(j.hess_zzbar[(0, 0)], c(1.0, 0.0));
        assert_eq!(j.hess_zz[(0, 0)], c(0.0, 0.0));
    }

    #[test]
    fn holomorphic_cube() {
        let f = field(1, |v| {
            let z = v.z(0);
            &(&z * &z) * &z
        });
        let j = jet(&f, &CPoint::new(vec![c(0.3, -0.7)], c(0.2, 0.1)), 2).unwrap();
        assert_eq!(j.grad_zbar[0], ZERO);
        assert_eq!(j.hess_zzbar[(0, 0)], ZERO);
        let z = c(0.3, -0.7);
        assert!((j.hess_zz[(0, 0)] - z * 6.0).norm() < 1e-14);
    }

    #[test]
    fn bergman_potential_identity_at_origin() {
        let f = field(2, |v| -(v.z_norm_sqr().scale(-1.0).add_const(1.0)).ln());
        let h = jet(&f, &CPoint::origin(2), 2).unwrap().hess_zzbar;
        assert!((h - DMatrix::identity(2, 2)).norm() < 1e-15);
    }

    #[test]
    fn levi_form_examples() {
        let f = field(2, |v| &v.z_norm_sqr() + &v.s_norm_sqr());
        let p = CPoint::new(vec![c(0.1, 0.2), c(-0.3, 0.0)], c(0.4, 0.0));
        let v = [c(1.0, 0.0), ZERO, ZERO];
        assert!((levi_form(&f, &p, &v).unwrap() - 1.0).abs() < 1e-15);

        let re_z1 = field(2, |v| (&v.z(0) + &v.zbar(0)).scale(0.5));
        let w = [c(0.3, 1.0), c(-2.0, 0.5), c(1.0, 1.0)];
        assert_eq!(levi_form(&re_z1, &p, &w).unwrap(), 0.0);

        let g = field(2, |v| -((&v.z_norm_sqr() + &v.s_norm_sqr()).scale(-1.0).add_const(1.0)).ln());
        let es = [ZERO, ZERO, c(1.0, 0.0)];
        assert!((levi_form(&g, &CPoint::origin(2), &es).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hessian_blocks_examples() {
        let f = field(2, |v| &v.z_norm_sqr() - &v.s_norm_sqr());
        let h = hessian_blocks(&f, &CPoint::origin(2)).unwrap();
        let want = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0)]));
        assert!((h - want).norm() < 1e-15);
    }

    #[test]
    fn order_three_rejected() {
        let f = field(1, |v| v.z_norm_sqr());
        assert!(matches!(
            jet(&f, &CPoint::origin(1), 3),
            Err(Error::OrderUnsupported { .. })
        ));
    }
}
