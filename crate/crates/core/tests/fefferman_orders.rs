use std::sync::Arc;

use kefam_core::domains::{boundary_ray, catalog_instantiate, FamilyParams};
use kefam_core::fefferman::{background_pair, fefferman_sequence, fit_order};
use kefam_core::wirtinger::{jet, CPoint};
use num_complex::Complex64;

fn ellipsoid(n: usize) -> kefam_core::domains::FamilyDefinition {
    let mut p = FamilyParams::with_n(n);
    if n == 2 {
        p.a = vec![1.0, 2.0];
        p.q = vec![0.3, -0.5];
    } else {
        p.a = vec![2.5];
        p.q = vec![-1.5];
    }
    catalog_instantiate("ellipsoid_family", &p).unwrap()
}

fn rays(fam: &kefam_core::domains::FamilyDefinition, s: Complex64) -> Vec<kefam_core::domains::BoundaryRay> {
    let dirs: Vec<Vec<Complex64>> = (0..fam.n)
        .map(|a| {
            let mut d = vec![Complex64::new(0.2, 0.1); fam.n];
            d[a] = Complex64::new(1.0, 0.3);
            d
        })
        .collect();
    dirs.iter()
        .map(|d| {
            let p = fam.boundary_point(s, d).unwrap();
            boundary_ray(fam, &p, 8, -0.1, 0.5).unwrap()
        })
        .collect()
}

#[test]
fn recursion_orders_on_ellipsoid() {
    for n in 1..=2 {
        let fam = ellipsoid(n);
        let s = Complex64::new(0.0, 0.0);
        let seq = fefferman_sequence(&fam, s, n + 1).unwrap();
        for ray in rays(&fam, s) {
            let abs: Vec<f64> = ray.phi.iter().map(|p| p.abs()).collect();
            for l in 1..=n + 1 {
                let vals: Vec<f64> = ray
                    .points
                    .iter()
                    .map(|p| 1.0 - jet(&seq.j_of_rho[l - 1], p, 0).unwrap().value.re)
                    .collect();
                let fit = fit_order(&abs, &vals, 1.5).unwrap();
                println!("n={n} l={l} order {:.3} resid {:.2e}", fit.exponent, fit.residual);
                assert!(fit.exponent >= l as f64 - 0.3, "n={n} l={l}: {}", fit.exponent);
            }
        }
    }
}

#[test]
fn background_defect_order() {
    let fam = Arc::new(ellipsoid(2));
    let s = Complex64::new(0.0, 0.0);
    let bg = background_pair(&fam, s, 3, None).unwrap();
    for ray in rays(&fam, s) {
        let abs: Vec<f64> = ray.phi.iter().map(|p| p.abs()).collect();
        let vals: Vec<f64> = ray.points.iter().map(|p| jet(&bg.f, p, 0).unwrap().value.re).collect();
        let fit = fit_order(&abs, &vals, 1.5).unwrap();
        println!("F order {:.3}", fit.exponent);
        assert!(fit.exponent >= 2.7);
    }
    let _ = CPoint::origin(2);
}
