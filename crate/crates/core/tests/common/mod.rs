#![allow(dead_code)]

use std::f64::consts::PI;

use filmctl::linsys::{block_eigenvalues, block_eigenvector};
use filmctl::{FilmState, LinearSystem};
use num_complex::Complex64;

/// Flat film plus `eps` times the growing eigenmode of Fourier bin `bin`,
/// normalised so the height amplitude is `eps`.
pub fn eigenmode_state(sys: &LinearSystem, bin: usize, eps: f64) -> (FilmState, Complex64) {
    let block = sys.blocks()[bin];
    let lambda = block_eigenvalues(&block)
        .into_iter()
        .max_by(|a, b| a.re.total_cmp(&b.re))
        .unwrap();
    let v = block_eigenvector(&block, lambda);
    let scale = eps / v[0].norm();
    let k = 2.0 * PI * bin as f64 / sys.grid.length();
    let (mut h, mut q) = (Vec::new(), Vec::new());
    for x in sys.grid.nodes() {
        let e = Complex64::from_polar(scale, k * x);
        h.push(1.0 + (v[0] * e).re);
        q.push(2.0 / 3.0 + (v[1] * e).re);
    }
    (FilmState { h, q, t: 0.0 }, lambda)
}

/// Bin in `1..N/2` with the largest growth rate.
pub fn leading_bin(sys: &LinearSystem) -> usize {
    let blocks = sys.blocks();
    (1..sys.n_nodes() / 2)
        .max_by(|&a, &b| {
            let ra = block_eigenvalues(&blocks[a]).iter().map(|l| l.re).fold(f64::MIN, f64::max);
            let rb = block_eigenvalues(&blocks[b]).iter().map(|l| l.re).fold(f64::MIN, f64::max);
            ra.total_cmp(&rb)
        })
        .unwrap()
}

/// Pairs every element of `a` with a distinct nearest element of `b` and
/// returns the largest distance.
pub fn spectrum_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut used = vec![false; b.len()];
    let mut worst = 0.0f64;
    for x in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        used[j] = true;
        worst = worst.max(d);
    }
    worst
}

/// Phase of the fundamental Fourier coefficient of `h`.
pub fn fundamental_phase(h: &[f64]) -> f64 {
    let n = h.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (j, v) in h.iter().enumerate() {
        let a = 2.0 * PI * j as f64 / n;
        re += v * a.cos();
        im -= v * a.sin();
    }
    im.atan2(re)
}
