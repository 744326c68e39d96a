//! Second-order complex Hessian stencils, sparse matrices and the Krylov
//! solver used by the slice Newton iteration.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use super::grid::SliceGrid;

/// Block size for deterministic parallel reductions.
const CHUNK: usize = 4096;

/// `u_αβ̄ ≈ Σ_k C_k u(x + o_k)` with second-order central differences.
#[derive(Clone, Debug)]
pub struct HessStencil {
    pub offsets: Vec<Vec<(usize, isize)>>,
    /// Coefficient matrices indexed `[(α, β)]`, one per offset.
    pub coeffs: Vec<DMatrix<Complex64>>,
}

impl HessStencil {
    pub fn new(grid: &SliceGrid) -> Self {
        let n = grid.n;
        let h = &grid.spacing;
        let mut map: BTreeMap<Vec<(usize, isize)>, DMatrix<Complex64>> = BTreeMap::new();
        let mut add = |offs: Vec<(usize, isize)>, a: usize, b: usize, w: Complex64| {
            let mut key: Vec<(usize, isize)> = offs.into_iter().filter(|o| o.1 != 0).collect();
            key.sort();
            map.entry(key).or_insert_with(|| DMatrix::zeros(n, n))[(a, b)] += w;
        };
        // second real derivative along axes (p, q), scaled by `w`, into entry (a, b)
        let mut second = |p: usize, q: usize, a: usize, b: usize, w: Complex64| {
            if p == q {
                let c = w / (h[p] * h[p]);
                add(vec![(p, 1)], a, b, c);
                add(vec![(p, -1)], a, b, c);
                add(vec![], a, b, -2.0 * c);
            } else {
                let c = w / (4.0 * h[p] * h[q]);
                for (sp, sq) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
                    add(vec![(p, sp), (q, sq)], a, b, c * (sp * sq) as f64);
                }
            }
        };
        let quarter = Complex64::new(0.25, 0.0);
        let iquarter = Complex64::new(0.0, 0.25);
        for a in 0..n {
            for b in 0..n {
                second(a, b, a, b, quarter);
                second(n + a, n + b, a, b, quarter);
                if a != b {
                    second(a, n + b, a, b, iquarter);
                    second(n + a, b, a, b, -iquarter);
                }
            }
        }
        let (offsets, coeffs) = map.into_iter().unzip();
        HessStencil { offsets, coeffs }
    }

    /// Neighbour table `[node * len + k]` for the given nodes; `u32::MAX`
    /// marks a neighbour outside the box.
    pub fn neighbours(&self, grid: &SliceGrid, nodes: &[usize]) -> Vec<u32> {
        nodes
            .par_iter()
            .flat_map_iter(|&i| {
                self.offsets
                    .iter()
                    .map(move |o| grid.shift(i, o).map_or(u32::MAX, |j| j as u32))
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Apply at one node given its neighbour row.
    pub fn apply(&self, row: &[u32], values: &[f64]) -> DMatrix<Complex64> {
        let n = self.coeffs[0].nrows();
        let mut m = DMatrix::zeros(n, n);
        for (c, &j) in self.coeffs.iter().zip(row) {
            m += c * Complex64::new(values[j as usize], 0.0);
        }
        m
    }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug, Default)]
pub struct Csr {
    pub nrows: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Csr {
        let mut m = Csr {
            nrows: rows.len(),
            row_ptr: Vec::with_capacity(rows.len() + 1),
            ..Default::default()
        };
        m.row_ptr.push(0);
        for r in rows {
            for (c, v) in r {
                m.cols.push(c);
                m.vals.push(v);
            }
            m.row_ptr.push(m.cols.len());
        }
        m
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .map(|k| self.vals[k] * x[self.cols[k]])
                    .sum()
            })
            .collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .find(|&k| self.cols[k] == i)
                    .map_or(0.0, |k| self.vals[k])
            })
            .collect()
    }

    pub fn scale(&mut self, c: f64) {
        self.vals.iter_mut().for_each(|v| *v *= c);
    }
}

/// Dot product with a reduction order independent of the thread count.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Outcome of a Krylov solve.
#[derive(Clone, Debug)]
pub struct KrylovReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Jacobi-preconditioned BiCGSTAB for `A x = b`, starting from zero.
pub fn bicgstab(a: &Csr, b: &[f64], tol: f64, max_iter: usize) -> (Vec<f64>, KrylovReport) {
    let nn = b.len();
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&inv_diag).map(|(x, d)| x * d).collect() };
    let axpy = |y: &mut [f64], alpha: f64, x: &[f64]| {
        y.par_iter_mut().zip(x.par_iter()).for_each(|(y, x)| *y += alpha * x);
    };

    let mut x = vec![0.0; nn];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return (
            x,
            KrylovReport {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
            },
        );
    }
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; nn];
    let mut p = vec![0.0; nn];
    let mut rel = 1.0;
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        p.par_iter_mut()
            .zip(r.par_iter().zip(v.par_iter()))
            .for_each(|(p, (r, v))| *p = r + beta * (*p - omega * v));
        let y = precond(&p);
        v = a.mul_vec(&y);
        alpha = rho / dot(&r_hat, &v);
        let mut s = r.clone();
        axpy(&mut s, -alpha, &v);
        axpy(&mut x, alpha, &y);
        rel = norm(&s) / bnorm;
        if rel <= tol {
            return (
                x,
                KrylovReport {
                    iterations: it,
                    relative_residual: rel,
                    converged: true,
                },
            );
        }
        let zz = precond(&s);
        let t = a.mul_vec(&zz);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        axpy(&mut x, omega, &zz);
        r = s;
        axpy(&mut r, -omega, &t);
        rel = norm(&r) / bnorm;
        if rel <= tol {
            return (
                x,
                KrylovReport {
                    iterations: it,
                    relative_residual: rel,
                    converged: true,
                },
            );
        }
        if omega == 0.0 {
            break;
        }
    }
    // recompute the true residual before reporting
    let ax = a.mul_vec(&x);
    let res: Vec<f64> = b.iter().zip(&ax).map(|(b, y)| b - y).collect();
    rel = rel.max(norm(&res) / bnorm);
    (
        x,
        KrylovReport {
            iterations: max_iter,
            relative_residual: rel,
            converged: false,
        },
    )
}
