//! Fourier collocation on the periodic grid.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::film::Grid;

/// FFT plans and wavenumbers for one grid.
#[derive(Clone)]
pub struct Spectral {
    grid: Grid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    wavenumbers: Vec<f64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: Grid) -> Self {
        let n = grid.n_nodes();
        let mut planner = FftPlanner::new();
        let wavenumbers = (0..n).map(|j| grid.wavenumber(grid.mode_index(j))).collect();
        Self {
            grid,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            wavenumbers,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    /// Unnormalised forward transform.
    pub fn forward(&self, field: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// Inverse of [`Spectral::forward`], keeping the real part.
    pub fn inverse(&self, mut coeffs: Vec<Complex64>) -> Vec<f64> {
        self.inverse.process(&mut coeffs);
        let scale = 1.0 / coeffs.len() as f64;
        coeffs.into_iter().map(|c| c.re * scale).collect()
    }

    /// Multiplier `(ik)^order` of FFT bin `j`; odd orders vanish on the Nyquist bin.
    pub fn symbol(&self, order: u32, j: usize) -> Complex64 {
        let n = self.grid.n_nodes();
        if order % 2 == 1 && j == n / 2 {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::new(0.0, self.wavenumbers[j]).powu(order)
    }

    pub fn derivative_of_spectrum(&self, coeffs: &[Complex64], order: u32) -> Vec<f64> {
        let scaled = coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| c * self.symbol(order, j))
            .collect();
        self.inverse(scaled)
    }

    /// Spectral derivative of order 1, 2 or 3.
    pub fn derivative(&self, field: &[f64], order: u32) -> Result<Vec<f64>> {
        if !(1..=3).contains(&order) {
            return Err(Error::invalid("order", format!("derivative order must be 1..=3, got {order}")));
        }
        if field.len() != self.grid.n_nodes() {
            return Err(Error::dim("spatial derivative", self.grid.n_nodes(), field.len()));
        }
        Ok(self.derivative_of_spectrum(&self.forward(field), order))
    }

    /// Zeroes every bin with `|n| > N/3` (the two-thirds rule).
    pub fn dealias(&self, field: &mut [f64]) {
        let mut coeffs = self.forward(field);
        let n = self.grid.n_nodes() as i64;
        for (j, c) in coeffs.iter_mut().enumerate() {
            if 3 * self.grid.mode_index(j).abs() > n {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        field.copy_from_slice(&self.inverse(coeffs));
    }
}

/// Shorthand for a one-off derivative on `grid`.
pub fn spatial_derivative(grid: &Grid, field: &[f64], order: u32) -> Result<Vec<f64>> {
    Spectral::new(*grid).derivative(field, order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn single_mode_first_derivative() {
        let grid = Grid::new(64, 30.0).unwrap();
        let k = 2.0 * PI / 30.0;
        let f: Vec<f64> = grid.nodes().iter().map(|x| (k * x).sin()).collect();
        let expected: Vec<f64> = grid.nodes().iter().map(|x| k * (k * x).cos()).collect();
        let d = spatial_derivative(&grid, &f, 1).unwrap();
        assert!(max_diff(&d, &expected) < 1e-12);
    }

    #[test]
    fn constant_has_zero_derivatives() {
        let grid = Grid::new(32, 30.0).unwrap();
        for order in 1..=3 {
            let d = spatial_derivative(&grid, &[2.5; 32], order).unwrap();
            assert!(d.iter().all(|v| v.abs() < 1e-13));
        }
    }

    #[test]
    fn third_derivative_of_cosine() {
        let grid = Grid::new(128, 30.0).unwrap();
        let k = 4.0 * PI / 30.0;
        let f: Vec<f64> = grid.nodes().iter().map(|x| (k * x).cos()).collect();
        let expected: Vec<f64> = grid.nodes().iter().map(|x| k.powi(3) * (k * x).sin()).collect();
        let d = spatial_derivative(&grid, &f, 3).unwrap();
        assert!(max_diff(&d, &expected) < 1e-12);
    }

    #[test]
    fn rejects_bad_order() {
        let grid = Grid::new(8, 1.0).unwrap();
        assert!(spatial_derivative(&grid, &[0.0; 8], 4).is_err());
        assert!(spatial_derivative(&grid, &[0.0; 8], 0).is_err());
        assert!(spatial_derivative(&grid, &[0.0; 7], 1).is_err());
    }

    #[test]
    fn dealias_keeps_resolved_modes() {
        let grid = Grid::new(48, 30.0).unwrap();
        let s = Spectral::new(grid);
        let k = 2.0 * PI / 30.0;
        let low: Vec<f64> = grid.nodes().iter().map(|x| (3.0 * k * x).cos()).collect();
        let mut field: Vec<f64> = grid
            .nodes()
            .iter()
            .zip(&low)
            .map(|(x, l)| l + (20.0 * k * x).sin())
            .collect();
        s.dealias(&mut field);
        assert!(max_diff(&field, &low) < 1e-12);
    }
}
