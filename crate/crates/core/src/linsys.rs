//! Linearisation of the film model about the Nusselt state.
//!
//! The state is `ξ = (ĥ, q̂)`, `ĥ = h - 1`, `q̂ = q - 2/3`, stacked into a
//! vector of length `2N`. Because the model is translation invariant the
//! Jacobian is block diagonal in Fourier space: every wavenumber carries an
//! independent 2×2 complex block, and the real matrix `a` is assembled from
//! those blocks as four circulant sub-matrices.
//!
//! With an even grid the odd-order derivatives vanish on the Nyquist bin, so
//! the grid-scale component of `ĥ` is frozen (`ĥ_t` has no Nyquist content
//! for any state or smooth control). Controller design therefore works in
//! the *design space*, the orthogonal complement of that frozen direction,
//! which is invariant under `a`.

use std::f64::consts::PI;

use ndarray::{s, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::film::{ActuatorBank, Grid, ObserverBank, PhysicalParams};
use crate::spectral::Spectral;

pub type Block = [[Complex64; 2]; 2];

/// Tolerance on the real part above which an eigenvalue counts as unstable.
pub const UNSTABLE_TOL: f64 = 1e-10;

/// Jacobian block for one Fourier bin given the derivative multipliers
/// `d1 = ik`, `d3 = (ik)³`. `capillary_scale` multiplies the surface-tension
/// term; it is one for the true linearisation.
pub fn jacobian_block(params: &PhysicalParams, d1: Complex64, d3: Complex64, capillary_scale: f64) -> Block {
    let re = params.reynolds;
    let c = 5.0 / (2.0 * re);
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let q_from_h = c
        * (2.0 * one - (2.0 / 3.0) * params.cot_theta() * d1
            + capillary_scale * d3 / (3.0 * params.capillary)
            + re * 8.0 / 35.0 * d1);
    let q_from_q = c * (-one - re * 68.0 / 105.0 * d1);
    [[zero, -d1], [q_from_h, q_from_q]]
}

/// Jacobian blocks for every FFT bin of `grid`, in FFT order.
pub fn wavenumber_blocks(params: &PhysicalParams, spectral: &Spectral, capillary_scale: f64) -> Vec<Block> {
    (0..spectral.grid().n_nodes())
        .map(|j| jacobian_block(params, spectral.symbol(1, j), spectral.symbol(3, j), capillary_scale))
        .collect()
}

/// Eigenvalues of a 2×2 complex block.
pub fn block_eigenvalues(b: &Block) -> [Complex64; 2] {
    let tr = b[0][0] + b[1][1];
    let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
    let disc = (tr * tr / 4.0 - det).sqrt();
    [tr / 2.0 + disc, tr / 2.0 - disc]
}

/// Right eigenvector of a 2×2 block for eigenvalue `lambda` (not normalised).
pub fn block_eigenvector(b: &Block, lambda: Complex64) -> [Complex64; 2] {
    if b[0][1].norm() > 0.0 {
        [b[0][1], lambda - b[0][0]]
    } else if b[1][0].norm() > 0.0 {
        [lambda - b[1][1], b[1][0]]
    } else if (lambda - b[0][0]).norm() <= (lambda - b[1][1]).norm() {
        [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]
    } else {
        [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]
    }
}

/// Discretised linear plant `ξ̇ = a ξ + b η`, `ζ = c ξ`, with cost weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearSystem {
    pub params: PhysicalParams,
    pub grid: Grid,
    pub actuators: ActuatorBank,
    pub observers: ObserverBank,
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub c: Array2<f64>,
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    /// Orthonormal basis (`2N × (2N-1)`) of the design space.
    pub basis: Array2<f64>,
}

/// The plant restricted to the design space, `x = basisᵀ ξ`.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub c: Array2<f64>,
    pub u: Array2<f64>,
    pub v: Array2<f64>,
}

/// Real circulant matrix whose eigenvalue on FFT bin `j` is `symbol[j]`.
fn circulant(spectral: &Spectral, symbol: &[Complex64]) -> Array2<f64> {
    let n = symbol.len();
    let column = spectral.inverse(symbol.to_vec());
    Array2::from_shape_fn((n, n), |(i, l)| column[(i + n - l) % n])
}

/// Real orthonormal Fourier basis of `R^N` without the Nyquist vector.
fn fourier_basis_without_nyquist(n: usize) -> Array2<f64> {
    let mut t = Array2::zeros((n, n - 1));
    let norm0 = 1.0 / (n as f64).sqrt();
    let norm = (2.0 / n as f64).sqrt();
    for j in 0..n {
        t[[j, 0]] = norm0;
        for m in 1..n / 2 {
            let phase = 2.0 * PI * (m * j) as f64 / n as f64;
            t[[j, 2 * m - 1]] = norm * phase.cos();
            t[[j, 2 * m]] = norm * phase.sin();
        }
    }
    t
}

/// Analytic Jacobian of the film model at the Nusselt state plus actuation,
/// observation and cost matrices.
pub fn linearize(
    params: &PhysicalParams,
    grid: &Grid,
    actuators: &ActuatorBank,
    observers: &ObserverBank,
) -> Result<LinearSystem> {
    params.validate()?;
    if (grid.length() - params.length).abs() > 1e-12 * params.length {
        return Err(Error::invalid("grid", "grid length differs from the domain length"));
    }
    if let Some(&j) = observers.nodes.iter().find(|&&j| j >= grid.n_nodes()) {
        return Err(Error::invalid("observers", format!("node {j} is off the grid")));
    }
    let n = grid.n_nodes();
    let m = actuators.len();
    let p = observers.len();
    let spectral = Spectral::new(*grid);
    let blocks = wavenumber_blocks(params, &spectral, 1.0);

    let mut a = Array2::zeros((2 * n, 2 * n));
    for r in 0..2 {
        for c in 0..2 {
            let symbol: Vec<Complex64> = blocks.iter().map(|b| b[r][c]).collect();
            if symbol.iter().all(|z| z.norm() == 0.0) {
                continue;
            }
            a.slice_mut(s![r * n..(r + 1) * n, c * n..(c + 1) * n])
                .assign(&circulant(&spectral, &symbol));
        }
    }

    let mut b = Array2::zeros((2 * n, m));
    for i in 0..m {
        for (j, d) in actuators.column(i, grid).into_iter().enumerate() {
            b[[j, i]] = d;
            b[[n + j, i]] = d / 3.0;
        }
    }

    let mut c = Array2::zeros((p, 2 * n));
    for (row, &j) in observers.nodes.iter().enumerate() {
        c[[row, j]] = 1.0;
    }

    let mut u = Array2::zeros((2 * n, 2 * n));
    let weight = params.beta * params.length / n as f64;
    for j in 0..n {
        u[[j, j]] = weight;
    }
    let v = Array2::eye(m) * (1.0 - params.beta);

    let mut basis = Array2::zeros((2 * n, 2 * n - 1));
    basis
        .slice_mut(s![..n, ..n - 1])
        .assign(&fourier_basis_without_nyquist(n));
    for j in 0..n {
        basis[[n + j, n - 1 + j]] = 1.0;
    }

    Ok(LinearSystem {
        params: *params,
        grid: *grid,
        actuators: actuators.clone(),
        observers: observers.clone(),
        a,
        b,
        c,
        u,
        v,
        basis,
    })
}

impl LinearSystem {
    pub fn n_nodes(&self) -> usize {
        self.grid.n_nodes()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.grid.n_nodes()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn spectral(&self) -> Spectral {
        Spectral::new(self.grid)
    }

    /// Jacobian blocks in FFT order.
    pub fn blocks(&self) -> Vec<Block> {
        wavenumber_blocks(&self.params, &self.spectral(), 1.0)
    }

    /// All `2N` eigenvalues of `a`, computed block by block.
    pub fn eigenvalues(&self) -> Vec<Complex64> {
        self.blocks().iter().flat_map(block_eigenvalues).collect()
    }

    /// Number of eigenvalues with positive real part (real dimensions).
    pub fn unstable_dimension(&self) -> usize {
        self.eigenvalues().iter().filter(|l| l.re > UNSTABLE_TOL).count()
    }

    /// Number of unstable modes counting a conjugate wavenumber pair once.
    pub fn unstable_mode_count(&self) -> usize {
        let n = self.n_nodes();
        self.blocks()
            .iter()
            .enumerate()
            .filter(|(j, _)| *j <= n / 2)
            .map(|(_, b)| block_eigenvalues(b).iter().filter(|l| l.re > UNSTABLE_TOL).count())
            .sum()
    }

    /// The plant in design-space coordinates.
    pub fn reduced(&self) -> ReducedSystem {
        let t = &self.basis;
        ReducedSystem {
            a: t.t().dot(&self.a).dot(t),
            b: t.t().dot(&self.b),
            c: self.c.dot(t),
            u: t.t().dot(&self.u).dot(t),
            v: self.v.clone(),
        }
    }

    /// Lifts a design-space gain `k` (acting on `basisᵀ ξ`) to the full state.
    pub fn lift_gain(&self, k: &Array2<f64>) -> Array2<f64> {
        k.dot(&self.basis.t())
    }

    /// Restricts a full-state gain to the design space.
    pub fn restrict_gain(&self, k: &Array2<f64>) -> Array2<f64> {
        k.dot(&self.basis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn system(n: usize, re: f64) -> LinearSystem {
        let params = PhysicalParams::reference(re);
        let grid = Grid::new(n, params.length).unwrap();
        let act = ActuatorBank::new(5, 0.1, params.length).unwrap();
        let obs = ObserverBank::new(5, &grid).unwrap();
        linearize(&params, &grid, &act, &obs).unwrap()
    }

    #[test]
    fn zero_mode_only_sees_injection() {
        let sys = system(32, 11.29);
        let blocks = sys.blocks();
        assert_eq!(blocks[0][0][0].norm(), 0.0);
        assert_eq!(blocks[0][0][1].norm(), 0.0);
        let eig = block_eigenvalues(&blocks[0]);
        assert!(eig.iter().any(|l| l.norm() < 1e-15));
    }

    #[test]
    fn observation_rows_are_unit_samples() {
        let sys = system(64, 5.0);
        for row in sys.c.rows() {
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 1);
        }
    }

    #[test]
    fn state_cost_matches_quadrature() {
        let sys = system(32, 5.0);
        let xi: Vec<f64> = (0..64).map(|j| ((j * 7) % 11) as f64 * 0.1 - 0.5).collect();
        let x = ndarray::Array1::from(xi.clone());
        let quad = x.dot(&sys.u.dot(&x));
        let direct = 0.5 * 30.0 / 32.0 * xi[..32].iter().map(|v| v * v).sum::<f64>();
        assert!((quad - direct).abs() < 1e-14 * direct.max(1.0));
    }

    #[test]
    fn a_commutes_with_blockwise_shift() {
        let sys = system(32, 11.29);
        let n = 32;
        let shift = Array2::from_shape_fn((2 * n, 2 * n), |(i, j)| {
            let (bi, ii) = (i / n, i % n);
            let (bj, jj) = (j / n, j % n);
            if bi == bj && ii == (jj + 1) % n { 1.0 } else { 0.0 }
        });
        let lhs = sys.a.dot(&shift);
        let rhs = shift.dot(&sys.a);
        let scale = sys.a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = (&lhs - &rhs).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-12 * scale, "{diff}");
    }

    #[test]
    fn design_basis_is_orthonormal_and_invariant() {
        let sys = system(32, 11.29);
        let t = &sys.basis;
        let gram = t.t().dot(t);
        let eye = Array2::<f64>::eye(63);
        assert!((&gram - &eye).iter().all(|v| v.abs() < 1e-13));
        // a maps the design space into itself: (I - T Tᵀ) a T = 0
        let proj = Array2::<f64>::eye(64) - t.dot(&t.t());
        let leak = proj.dot(&sys.a).dot(t);
        assert!(leak.iter().all(|v| v.abs() < 1e-10), "{}", leak.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }

    #[test]
    fn unstable_counts_at_reference_point() {
        let sys = system(128, 11.29);
        assert_eq!(sys.unstable_dimension(), 8);
        assert_eq!(sys.unstable_mode_count(), 4);
        assert_eq!(system(128, 0.3).unstable_dimension(), 0);
    }
}
