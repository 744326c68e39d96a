//! Truncated multivariate Taylor arithmetic in the independent variables
//! `z^1..z^n, z̄^1..z̄^n, s, s̄`.
//!
//! Treating `z` and `z̄` as independent variables makes Wirtinger derivatives
//! plain partial derivatives of the coefficient array. A jet is truncated at
//! total degree `kz` in the slice variables and `ks` in the base variables;
//! differentiating in a slice variable lowers `kz`, in a base variable `ks`.

use std::collections::HashMap;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;

/// Largest supported number of independent variables (`n ≤ 3` with base).
pub const MAX_VARS: usize = 8;

type Exp = [u8; MAX_VARS];

/// Shape of a truncated jet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayoutKey {
    /// Complex slice dimension.
    pub n: u8,
    /// Whether `s, s̄` are variables (otherwise the base point is frozen).
    pub with_s: bool,
    /// Truncation degree in `z, z̄`.
    pub kz: u8,
    /// Truncation degree in `s, s̄` (0 when `with_s` is false).
    pub ks: u8,
}

impl LayoutKey {
    pub fn new(n: usize, with_s: bool, kz: usize, ks: usize) -> Self {
        assert!(n >= 1 && 2 * n + 2 <= MAX_VARS, "slice dimension {n} unsupported");
        LayoutKey {
            n: n as u8,
            with_s,
            kz: kz as u8,
            ks: if with_s { ks as u8 } else { 0 },
        }
    }

    pub fn nvars(&self) -> usize {
        2 * self.n as usize + if self.with_s { 2 } else { 0 }
    }

    fn is_s_var(&self, v: usize) -> bool {
        v >= 2 * self.n as usize
    }

    /// Common truncation of two shapes.
    pub fn meet(self, other: LayoutKey) -> LayoutKey {
        assert_eq!(self.n, other.n, "jets over different slice dimensions");
        assert_eq!(self.with_s, other.with_s, "jets with and without base variables");
        LayoutKey {
            kz: self.kz.min(other.kz),
            ks: self.ks.min(other.ks),
            ..self
        }
    }

    /// Shape after differentiating once in variable `v`.
    pub fn lowered(self, v: usize) -> Option<LayoutKey> {
        if self.is_s_var(v) {
            self.ks.checked_sub(1).map(|ks| LayoutKey { ks, ..self })
        } else {
            self.kz.checked_sub(1).map(|kz| LayoutKey { kz, ..self })
        }
    }
}

/// Monomial enumeration and product table for one [`LayoutKey`].
pub struct Layout {
    pub key: LayoutKey,
    exps: Vec<Exp>,
    index: HashMap<Exp, u32>,
    // CSR product table: for monomial i, pairs (j, k) with m_i * m_j = m_k.
    row_start: Vec<u32>,
    pairs: Vec<(u32, u32)>,
}

impl Layout {
    fn build(key: LayoutKey) -> Layout {
        let nv = key.nvars();
        let nz = 2 * key.n as usize;
        let mut exps: Vec<Exp> = Vec::new();
        // enumerate z-part and s-part separately, ordered by degree
        let zparts = monomials(nz, key.kz as usize);
        let sparts = monomials(nv - nz, key.ks as usize);
        for zp in &zparts {
            for sp in &sparts {
                let mut e = [0u8; MAX_VARS];
                e[..nz].copy_from_slice(&zp[..nz]);
                e[nz..nv].copy_from_slice(&sp[..nv - nz]);
                exps.push(e);
            }
        }
        exps.sort_by_key(|e| {
            let zd: u32 = e[..nz].iter().map(|&x| x as u32).sum();
            let sd: u32 = e[nz..].iter().map(|&x| x as u32).sum();
            (zd + sd, zd, std::cmp::Reverse(*e))
        });
        let index: HashMap<Exp, u32> = exps.iter().enumerate().map(|(i, e)| (*e, i as u32)).collect();
        let zdeg: Vec<u8> = exps.iter().map(|e| e[..nz].iter().sum()).collect();
        let sdeg: Vec<u8> = exps.iter().map(|e| e[nz..].iter().sum()).collect();

        let mut row_start = Vec::with_capacity(exps.len() + 1);
        let mut pairs = Vec::new();
        row_start.push(0u32);
        for (i, ei) in exps.iter().enumerate() {
            for (j, ej) in exps.iter().enumerate() {
                if zdeg[i] + zdeg[j] > key.kz || sdeg[i] + sdeg[j] > key.ks {
                    continue;
                }
                let mut e = [0u8; MAX_VARS];
                for v in 0..nv {
                    e[v] = ei[v] + ej[v];
                }
                pairs.push((j as u32, index[&e]));
            }
            row_start.push(pairs.len() as u32);
        }
        Layout {
            key,
            exps,
            index,
            row_start,
            pairs,
        }
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    /// Index of the monomial with exponent vector `e` (unused trailing
    /// entries are zero), if it is part of this layout.
    pub fn index_of(&self, e: &[u8]) -> Option<usize> {
        let mut full = [0u8; MAX_VARS];
        full[..e.len()].copy_from_slice(e);
        self.index.get(&full).map(|&i| i as usize)
    }
}

fn monomials(nv: usize, deg: usize) -> Vec<Exp> {
    let mut out = vec![[0u8; MAX_VARS]];
    for v in 0..nv {
        let mut next = Vec::new();
        for e in &out {
            let used: usize = e.iter().map(|&x| x as usize).sum();
            for p in 0..=(deg - used) {
                let mut f = *e;
                f[v] = p as u8;
                next.push(f);
            }
        }
        out = next;
    }
    out
}

struct DerivTable {
    dst: LayoutKey,
    // (src index, dst index, factor)
    entries: Vec<(u32, u32, f64)>,
}

type Registry<K, V> = OnceLock<Mutex<HashMap<K, Arc<V>>>>;

static LAYOUTS: Registry<LayoutKey, Layout> = OnceLock::new();
static DERIVS: Registry<(LayoutKey, usize), DerivTable> = OnceLock::new();
static PROJECTIONS: Registry<(LayoutKey, LayoutKey), Vec<u32>> = OnceLock::new();

fn cached<K, V>(reg: &Registry<K, V>, key: K, build: impl FnOnce() -> V) -> Arc<V>
where
    K: std::hash::Hash + Eq + Copy,
{
    let map = reg.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = map.lock().unwrap().get(&key) {
        return v.clone();
    }
    let built = Arc::new(build());
    map.lock().unwrap().entry(key).or_insert(built).clone()
}

/// Shared layout for `key`.
pub fn layout(key: LayoutKey) -> Arc<Layout> {
    cached(&LAYOUTS, key, || Layout::build(key))
}

fn deriv_table(key: LayoutKey, var: usize) -> Arc<DerivTable> {
    cached(&DERIVS, (key, var), || {
        let dst = key.lowered(var).expect("derivative of a degree-0 jet");
        let src_l = layout(key);
        let dst_l = layout(dst);
        let mut entries = Vec::new();
        for (di, e) in dst_l.exps.iter().enumerate() {
            let mut up = *e;
            up[var] += 1;
            if let Some(&si) = src_l.index.get(&up) {
                entries.push((si, di as u32, up[var] as f64));
            }
        }
        DerivTable { dst, entries }
    })
}

fn projection(src: LayoutKey, dst: LayoutKey) -> Arc<Vec<u32>> {
    cached(&PROJECTIONS, (src, dst), || {
        let s = layout(src);
        let d = layout(dst);
        d.exps.iter().map(|e| s.index[e]).collect()
    })
}

/// Truncated Taylor expansion of a (complex-valued) function around a point.
///
/// Coefficients are stored as `∂^a f / a!`.
#[derive(Clone)]
pub struct Jet {
    layout: Arc<Layout>,
    coeffs: Vec<Complex64>,
}

impl std::fmt::Debug for Jet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Jet")
            .field("key", &self.layout.key)
            .field("value", &self.coeffs[0])
            .finish()
    }
}

impl Jet {
    pub fn constant(key: LayoutKey, c: impl Into<Complex64>) -> Jet {
        let layout = layout(key);
        let mut coeffs = vec![Complex64::new(0.0, 0.0); layout.len()];
        coeffs[0] = c.into();
        Jet { layout, coeffs }
    }

    /// The coordinate function `x_var` expanded around `value`.
    pub fn variable(key: LayoutKey, var: usize, value: Complex64) -> Jet {
        let mut j = Jet::constant(key, value);
        let mut e = [0u8; MAX_VARS];
        e[var] = 1;
        if let Some(&i) = j.layout.index.get(&e) {
            j.coeffs[i as usize] = Complex64::new(1.0, 0.0);
        }
        j
    }

    pub fn key(&self) -> LayoutKey {
        self.layout.key
    }

    pub fn value(&self) -> Complex64 {
        self.coeffs[0]
    }

    pub fn re(&self) -> f64 {
        self.coeffs[0].re
    }

    /// Taylor coefficient of the monomial with exponents `e`, zero when the
    /// monomial is truncated away.
    pub fn coeff(&self, e: &[u8]) -> Complex64 {
        self.layout
            .index_of(e)
            .map(|i| self.coeffs[i])
            .unwrap_or_default()
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Truncate to a smaller shape.
    pub fn restrict(&self, key: LayoutKey) -> Jet {
        if key == self.layout.key {
            return self.clone();
        }
        let proj = projection(self.layout.key, key);
        Jet {
            layout: layout(key),
            coeffs: proj.iter().map(|&i| self.coeffs[i as usize]).collect(),
        }
    }

    /// Partial derivative in variable `var` (a Wirtinger derivative for the
    /// `z`/`z̄`/`s`/`s̄` variables).
    pub fn d(&self, var: usize) -> Jet {
        let t = deriv_table(self.layout.key, var);
        let dl = layout(t.dst);
        let mut coeffs = vec![Complex64::new(0.0, 0.0); dl.len()];
        for &(si, di, f) in &t.entries {
            coeffs[di as usize] = self.coeffs[si as usize] * f;
        }
        Jet { layout: dl, coeffs }
    }

    pub fn scale(&self, c: impl Into<Complex64>) -> Jet {
        let c = c.into();
        Jet {
            layout: self.layout.clone(),
            coeffs: self.coeffs.iter().map(|x| x * c).collect(),
        }
    }

    pub fn add_const(&self, c: impl Into<Complex64>) -> Jet {
        let mut out = self.clone();
        out.coeffs[0] += c.into();
        out
    }

    pub fn conj_coeffs(&self) -> Jet {
        Jet {
            layout: self.layout.clone(),
            coeffs: self.coeffs.iter().map(|x| x.conj()).collect(),
        }
    }

    fn aligned<'a>(a: &'a Jet, b: &'a Jet) -> (std::borrow::Cow<'a, Jet>, std::borrow::Cow<'a, Jet>) {
        use std::borrow::Cow;
        if a.layout.key == b.layout.key {
            return (Cow::Borrowed(a), Cow::Borrowed(b));
        }
        let k = a.layout.key.meet(b.layout.key);
        let ra = if a.layout.key == k { Cow::Borrowed(a) } else { Cow::Owned(a.restrict(k)) };
        let rb = if b.layout.key == k { Cow::Borrowed(b) } else { Cow::Owned(b.restrict(k)) };
        (ra, rb)
    }

    fn mul_same(a: &Jet, b: &Jet) -> Jet {
        let l = &a.layout;
        let mut out = vec![Complex64::new(0.0, 0.0); l.len()];
        for (i, &ai) in a.coeffs.iter().enumerate() {
            if ai.re == 0.0 && ai.im == 0.0 {
                continue;
            }
            let (lo, hi) = (l.row_start[i] as usize, l.row_start[i + 1] as usize);
            for &(j, k) in &l.pairs[lo..hi] {
                out[k as usize] += ai * b.coeffs[j as usize];
            }
        }
        Jet {
            layout: l.clone(),
            coeffs: out,
        }
    }

    /// Compose with a univariate function given its Taylor coefficients
    /// `f^(k)(x0)/k!` at the current value `x0`.
    pub fn compose_series(&self, series: &[Complex64]) -> Jet {
        let key = self.layout.key;
        let deg = (key.kz + key.ks) as usize;
        let mut eps = self.clone();
        eps.coeffs[0] = Complex64::new(0.0, 0.0);
        let top = deg.min(series.len() - 1);
        let mut acc = Jet::constant(key, series[top]);
        for k in (0..top).rev() {
            acc = Jet::mul_same(&acc, &eps);
            acc.coeffs[0] += series[k];
        }
        acc
    }

    fn degree(&self) -> usize {
        (self.layout.key.kz + self.layout.key.ks) as usize
    }

    pub fn exp(&self) -> Jet {
        let x0 = self.value();
        let e = x0.exp();
        let mut s = Vec::with_capacity(self.degree() + 1);
        let mut fact = 1.0;
        for k in 0..=self.degree() {
            if k > 0 {
                fact *= k as f64;
            }
            s.push(e / fact);
        }
        self.compose_series(&s)
    }

    /// Natural logarithm (principal branch at the expansion point).
    pub fn ln(&self) -> Jet {
        let x0 = self.value();
        let mut s = vec![x0.ln()];
        let inv = 1.0 / x0;
        let mut p = Complex64::new(1.0, 0.0);
        for k in 1..=self.degree() {
            p *= inv;
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            s.push(p * (sign / k as f64));
        }
        self.compose_series(&s)
    }

    /// `x^p` for real exponent `p` (principal branch).
    pub fn powf(&self, p: f64) -> Jet {
        let x0 = self.value();
        let inv = 1.0 / x0;
        // term = x0^(p-k), binom = C(p, k)
        let mut term = x0.powf(p);
        let mut s = vec![term];
        let mut binom = 1.0;
        for k in 1..=self.degree() {
            binom *= (p - (k as f64 - 1.0)) / k as f64;
            term *= inv;
            s.push(term * binom);
        }
        self.compose_series(&s)
    }

    pub fn recip(&self) -> Jet {
        let x0 = self.value();
        let inv = 1.0 / x0;
        let mut s = Vec::with_capacity(self.degree() + 1);
        let mut p = inv;
        for k in 0..=self.degree() {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            s.push(p * sign);
            p *= inv;
        }
        self.compose_series(&s)
    }

    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }

    /// Apply a real function given its derivatives `f, f', f'', ...` at the
    /// real part of the current value. The value must be real.
    pub fn apply_real(&self, derivs: &[f64]) -> Jet {
        let mut s = Vec::with_capacity(derivs.len());
        let mut fact = 1.0;
        for (k, &d) in derivs.iter().enumerate() {
            if k > 0 {
                fact *= k as f64;
            }
            s.push(Complex64::new(d / fact, 0.0));
        }
        self.compose_series(&s)
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        let (a, b) = Jet::aligned(self, rhs);
        Jet::mul_same(&a, &b)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        &self * &rhs
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        let (a, b) = Jet::aligned(self, rhs);
        Jet {
            layout: a.layout.clone(),
            coeffs: a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x + y).collect(),
        }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        &self + &rhs
    }
}

impl AddAssign<&Jet> for Jet {
    fn add_assign(&mut self, rhs: &Jet) {
        *self = &*self + rhs;
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        let (a, b) = Jet::aligned(self, rhs);
        Jet {
            layout: a.layout.clone(),
            coeffs: a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x - y).collect(),
        }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        &self - &rhs
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

/// Determinant of a small square matrix of jets by permutation expansion
/// (no divisions, so it is valid where pivots vanish).
pub fn det(m: &[Vec<Jet>]) -> Jet {
    let k = m.len();
    match k {
        0 => panic!("empty matrix"),
        1 => m[0][0].clone(),
        2 => &(&m[0][0] * &m[1][1]) - &(&m[0][1] * &m[1][0]),
        _ => {
            // expansion along the first row
            let mut acc: Option<Jet> = None;
            for c in 0..k {
                let minor: Vec<Vec<Jet>> = (1..k)
                    .map(|r| (0..k).filter(|&cc| cc != c).map(|cc| m[r][cc].clone()).collect())
                    .collect();
                let term = &m[0][c] * &det(&minor);
                acc = Some(match acc {
                    None => term,
                    Some(a) if c % 2 == 0 => &a + &term,
                    Some(a) => &a - &term,
                });
            }
            acc.unwrap()
        }
    }
}

/// Inverse of a small square matrix of jets via the adjugate.
pub fn inverse(m: &[Vec<Jet>]) -> Vec<Vec<Jet>> {
    let k = m.len();
    let d = det(m);
    let dinv = d.recip();
    if k == 1 {
        return vec![vec![dinv]];
    }
    let mut out = vec![Vec::with_capacity(k); k];
    for (i, row) in out.iter_mut().enumerate() {
        for j in 0..k {
            // cofactor C_{ji}
            let minor: Vec<Vec<Jet>> = (0..k)
                .filter(|&r| r != j)
                .map(|r| (0..k).filter(|&c| c != i).map(|c| m[r][c].clone()).collect())
                .collect();
            let c = &det(&minor) * &dinv;
            row.push(if (i + j) % 2 == 0 { c } else { -c });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn layout_sizes() {
        // 2 vars, degree 2 -> 6 monomials
        let l = layout(LayoutKey::new(1, false, 2, 0));
        assert_eq!(l.len(), 6);
        let l = layout(LayoutKey::new(1, true, 2, 1));
        assert_eq!(l.len(), 6 * 3);
    }

    #[test]
    fn product_of_z_and_zbar() {
        let key = LayoutKey::new(1, false, 3, 0);
        let z0 = Complex64::new(0.3, -0.2);
        let z = Jet::variable(key, 0, z0);
        let zb = Jet::variable(key, 1, z0.conj());
        let r2 = &z * &zb;
        assert!((r2.value() - z0.norm_sqr()).norm() < 1e-15);
        let dzdzb = r2.d(0).d(1);
        assert!((dzdzb.value() - c(1.0)).norm() < 1e-15);
        assert!(r2.d(0).d(0).value().norm() < 1e-15);
    }

    #[test]
    fn log_series_matches_closed_form() {
        // f = -log(1 - z zbar); f_{z zbar} = 1/(1-|z|^2)^2
        let key = LayoutKey::new(1, false, 4, 0);
        let z0 = Complex64::new(0.4, 0.1);
        let z = Jet::variable(key, 0, z0);
        let zb = Jet::variable(key, 1, z0.conj());
        let f = -(&(&z * &zb).scale(-1.0).add_const(1.0)).ln();
        let r = z0.norm_sqr();
        let got = f.d(0).d(1).value();
        assert!((got - c(1.0 / (1.0 - r).powi(2))).norm() < 1e-13);
        // fourth derivative f_{z z zbar zbar} = 2(1+2r)/(1-r)^4
        let d4 = f.d(0).d(0).d(1).d(1).value();
        let want = 2.0 * (1.0 + 2.0 * r) / (1.0 - r).powi(4);
        assert!((d4 - c(want)).norm() < 1e-11, "{d4} vs {want}");
    }

    #[test]
    fn powf_and_recip_agree() {
        let key = LayoutKey::new(1, true, 3, 2);
        let x = Jet::variable(key, 0, c(0.7)).add_const(1.5);
        let a = x.powf(-1.0);
        let b = x.recip();
        for (p, q) in a.coeffs().iter().zip(b.coeffs()) {
            assert!((p - q).norm() < 1e-13);
        }
        let s = x.sqrt();
        let s2 = &s * &s;
        for (p, q) in s2.coeffs().iter().zip(x.coeffs()) {
            assert!((p - q).norm() < 1e-13);
        }
    }

    #[test]
    fn exp_ln_roundtrip() {
        let key = LayoutKey::new(2, false, 4, 0);
        let x = &Jet::variable(key, 0, c(0.2)) * &Jet::variable(key, 3, c(-0.1));
        let y = x.add_const(2.0).ln().exp();
        for (p, q) in y.coeffs().iter().zip(x.add_const(2.0).coeffs()) {
            assert!((p - q).norm() < 1e-13);
        }
    }

    #[test]
    fn det_and_inverse() {
        let key = LayoutKey::new(1, false, 2, 0);
        let a = Jet::variable(key, 0, c(2.0));
        let b = Jet::constant(key, 1.0);
        let m = vec![
            vec![a.clone(), b.clone(), b.clone()],
            vec![b.clone(), a.clone(), b.clone()],
            vec![b.clone(), b.clone(), a.clone()],
        ];
        let d = det(&m);
        // (a-1)^2 (a+2) at a = 2 -> 4
        assert!((d.value() - c(4.0)).norm() < 1e-14);
        let inv = inverse(&m);
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = Jet::constant(key, 0.0);
                for k in 0..3 {
                    acc = &acc + &(&m[i][k] * &inv[k][j]);
                }
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((acc.value() - c(want)).norm() < 1e-14);
                // derivative of identity is zero
                assert!(acc.d(0).value().norm() < 1e-13);
            }
        }
    }
}
