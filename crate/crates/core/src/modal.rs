//! Modal truncation of the linear plant.
//!
//! Every Fourier bin `0 <= n <= N/2` contributes two eigenmodes. A mode on an
//! interior bin is a complex eigenvalue together with its conjugate on bin
//! `-n`, i.e. a two-dimensional real invariant subspace with coordinates
//! `(Re c, Im c)`; modes on bin 0 and on the Nyquist bin are real and
//! one-dimensional. The frozen Nyquist height mode is never retained.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsys::{block_eigenvalues, block_eigenvector, Block, LinearSystem, UNSTABLE_TOL};

/// One real invariant subspace of the linearised dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    /// Fourier index `0..=N/2`.
    pub wavenumber_index: usize,
    pub eigenvalue: Complex64,
    /// Real dimension, 1 or 2.
    pub dimension: usize,
    right: [Complex64; 2],
    left: [Complex64; 2],
}

impl Mode {
    pub fn is_unstable(&self) -> bool {
        self.eigenvalue.re > UNSTABLE_TOL
    }
}

/// All modes except the frozen Nyquist one, least stable first.
pub fn ranked_modes(blocks: &[Block]) -> Vec<Mode> {
    let n = blocks.len();
    let mut modes = Vec::with_capacity(n + 1);
    for (j, block) in blocks.iter().enumerate().take(n / 2 + 1) {
        let lambdas = block_eigenvalues(block);
        let v = lambdas.map(|l| block_eigenvector(block, l));
        let det = v[0][0] * v[1][1] - v[1][0] * v[0][1];
        // rows of the inverse eigenvector matrix
        let w = [
            [v[1][1] / det, -v[1][0] / det],
            [-v[0][1] / det, v[0][0] / det],
        ];
        let real_bin = j == 0 || j == n / 2;
        for m in 0..2 {
            let mut eigenvalue = lambdas[m];
            if real_bin {
                eigenvalue.im = 0.0;
                if j == n / 2 && block[0][1].norm() == 0.0 && block[0][0].norm() == 0.0 && eigenvalue.re.abs() < 1e-14 {
                    continue;
                }
            }
            modes.push(Mode {
                wavenumber_index: j,
                eigenvalue,
                dimension: if real_bin { 1 } else { 2 },
                right: v[m],
                left: w[m],
            });
        }
    }
    modes.sort_by(|a, b| {
        b.eigenvalue
            .re
            .total_cmp(&a.eigenvalue.re)
            .then(a.wavenumber_index.cmp(&b.wavenumber_index))
            .then(b.eigenvalue.im.total_cmp(&a.eigenvalue.im))
    });
    modes
}

/// Real dimension spanned by the `count` least stable modes.
pub fn dimension_of_leading_modes(sys: &LinearSystem, count: usize) -> usize {
    ranked_modes(&sys.blocks()).iter().take(count).map(|m| m.dimension).sum()
}

/// Retained unstable subsystem `ż = ã z + b̃ η`, `ζ ≈ sampling·z`.
#[derive(Debug, Clone)]
pub struct ModalDecomposition {
    pub modes: Vec<Mode>,
    /// `2N × r` map from modal coordinates to the physical state.
    pub prolongation: Array2<f64>,
    /// `r × 2N` map from the physical state to modal coordinates.
    pub restriction: Array2<f64>,
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub sampling: Array2<f64>,
    pub u: Array2<f64>,
    pub unstable_dimension: usize,
}

impl ModalDecomposition {
    pub fn dimension(&self) -> usize {
        self.prolongation.ncols()
    }

    /// Physical state reconstructed from modal coordinates.
    pub fn prolong(&self, z: &[f64]) -> Vec<f64> {
        self.prolongation.dot(&ndarray::ArrayView1::from(z)).to_vec()
    }

    pub fn restrict(&self, xi: &[f64]) -> Vec<f64> {
        self.restriction.dot(&ndarray::ArrayView1::from(xi)).to_vec()
    }
}

/// Keeps the least stable modes up to `retain` real dimensions. A conjugate
/// pair that would be split is kept whole, so the result may be one larger.
pub fn modal_decompose(sys: &LinearSystem, retain: usize) -> Result<ModalDecomposition> {
    let blocks = sys.blocks();
    let ranked = ranked_modes(&blocks);
    let unstable: usize = ranked.iter().filter(|m| m.is_unstable()).map(|m| m.dimension).sum();
    if retain < unstable {
        return Err(Error::Controllability { retain, unstable });
    }
    let available: usize = ranked.iter().map(|m| m.dimension).sum();
    if retain > available {
        return Err(Error::invalid(
            "retain",
            format!("only {available} real dimensions available, asked for {retain}"),
        ));
    }
    let mut modes = Vec::new();
    let mut dim = 0;
    for mode in ranked {
        if dim >= retain {
            break;
        }
        dim += mode.dimension;
        modes.push(mode);
    }

    let n = sys.n_nodes();
    let nodes = sys.grid.nodes();
    let length = sys.grid.length();
    let mut prolongation = Array2::zeros((2 * n, dim));
    let mut restriction = Array2::zeros((dim, 2 * n));
    let mut col = 0;
    for mode in &modes {
        let k = 2.0 * PI * mode.wavenumber_index as f64 / length;
        for (l, &x) in nodes.iter().enumerate() {
            let e = Complex64::from_polar(1.0, k * x);
            for comp in 0..2 {
                let shape = mode.right[comp] * e;
                let dual = mode.left[comp] * e.conj() / n as f64;
                let row = comp * n + l;
                if mode.dimension == 1 {
                    prolongation[[row, col]] = shape.re;
                    restriction[[col, row]] = dual.re;
                } else {
                    prolongation[[row, col]] = shape.re;
                    prolongation[[row, col + 1]] = -shape.im;
                    restriction[[col, row]] = 2.0 * dual.re;
                    restriction[[col + 1, row]] = 2.0 * dual.im;
                }
            }
        }
        col += mode.dimension;
    }

    let a = restriction.dot(&sys.a).dot(&prolongation);
    let b = restriction.dot(&sys.b);
    let sampling = sys.c.dot(&prolongation);
    let u = prolongation.t().dot(&sys.u).dot(&prolongation);
    Ok(ModalDecomposition {
        modes,
        prolongation,
        restriction,
        a,
        b,
        sampling,
        u,
        unstable_dimension: unstable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::film::{ActuatorBank, Grid, ObserverBank, PhysicalParams};
    use crate::linsys::linearize;

    fn system(n: usize, re: f64) -> LinearSystem {
        let params = PhysicalParams::reference(re);
        let grid = Grid::new(n, params.length).unwrap();
        let act = ActuatorBank::new(5, 0.1, params.length).unwrap();
        let obs = ObserverBank::new(5, &grid).unwrap();
        linearize(&params, &grid, &act, &obs).unwrap()
    }

    #[test]
    fn frozen_mode_is_excluded() {
        let sys = system(32, 11.29);
        let modes = ranked_modes(&sys.blocks());
        let dims: usize = modes.iter().map(|m| m.dimension).sum();
        assert_eq!(dims, 63);
        assert!(!modes.iter().any(|m| m.wavenumber_index == 16 && m.eigenvalue.norm() < 1e-12));
    }

    #[test]
    fn five_modes_cover_the_unstable_band_and_mass() {
        let sys = system(64, 11.29);
        assert_eq!(dimension_of_leading_modes(&sys, 5), 9);
        let dec = modal_decompose(&sys, 9).unwrap();
        let mut bins: Vec<_> = dec.modes.iter().map(|m| m.wavenumber_index).collect();
        bins.sort();
        assert_eq!(bins, vec![0, 1, 2, 3, 4]);
        assert_eq!(dec.unstable_dimension, 8);
    }

    #[test]
    fn round_trip_and_dynamics() {
        let sys = system(64, 11.29);
        let dec = modal_decompose(&sys, 9).unwrap();
        let rp = dec.restriction.dot(&dec.prolongation);
        assert!((&rp - &Array2::<f64>::eye(9)).iter().all(|v| v.abs() < 1e-12));
        let mut col = 0;
        for mode in &dec.modes {
            let l = mode.eigenvalue;
            if mode.dimension == 2 {
                let expect = [[l.re, -l.im], [l.im, l.re]];
                for r in 0..2 {
                    for c in 0..2 {
                        assert!((dec.a[[col + r, col + c]] - expect[r][c]).abs() < 1e-10);
                    }
                }
            } else {
                assert!((dec.a[[col, col]] - l.re).abs() < 1e-10);
            }
            col += mode.dimension;
        }
    }

    #[test]
    fn split_pair_is_kept_whole() {
        let sys = system(64, 11.29);
        assert_eq!(modal_decompose(&sys, 10).unwrap().dimension(), 11);
    }

    #[test]
    fn too_few_modes_is_a_controllability_error() {
        let sys = system(64, 11.29);
        assert!(matches!(
            modal_decompose(&sys, 5),
            Err(Error::Controllability { retain: 5, unstable: 8 })
        ));
    }
}
