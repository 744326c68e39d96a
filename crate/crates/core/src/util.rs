//! Quasi-random nets and small fitting helpers.

/// Radical-inverse Halton sequence in the given prime bases.
#[derive(Clone, Debug)]
pub struct Halton {
    bases: Vec<u32>,
    index: u64,
}

const PRIMES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

impl Halton {
    /// A `dim`-dimensional sequence. `skip` leading points are dropped so
    /// different seeds give disjoint nets.
    pub fn new(dim: usize, skip: u64) -> Self {
        assert!(dim <= PRIMES.len(), "Halton dimension {dim} too large");
        Halton {
            bases: PRIMES[..dim].to_vec(),
            index: skip + 1,
        }
    }

    fn radical_inverse(mut i: u64, base: u32) -> f64 {
        let b = base as u64;
        let inv = 1.0 / base as f64;
        let mut f = inv;
        let mut r = 0.0;
        while i > 0 {
            r += (i % b) as f64 * f;
            i /= b;
            f *= inv;
        }
        r
    }
}

impl Iterator for Halton {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        let i = self.index;
        self.index += 1;
        Some(self.bases.iter().map(|&b| Halton::radical_inverse(i, b)).collect())
    }
}

/// Ordinary least-squares line `y ≈ a + b·x`; returns `(b, a, rms residual)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rms = (x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum::<f64>() / m).sqrt();
    (slope, icpt, rms)
}

/// Observed convergence order from errors at successive halvings of the
/// spacing (least-squares slope of `log₂ e` against level).
pub fn convergence_order(errors: &[f64]) -> f64 {
    let x: Vec<f64> = (0..errors.len()).map(|k| -(k as f64)).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.log2()).collect();
    linear_fit(&x, &y).0
}
