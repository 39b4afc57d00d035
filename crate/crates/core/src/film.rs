//! Problem definition shared by every other module: physical parameters,
//! the periodic grid, the film state, and actuator / observer geometry.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flux of the flat Nusselt film in the chosen units.
pub const NUSSELT_FLUX: f64 = 2.0 / 3.0;

/// Default actuator width.
pub const DEFAULT_OMEGA: f64 = 0.1;

/// Default weight between interface deviation and control effort.
pub const DEFAULT_BETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub reynolds: f64,
    pub capillary: f64,
    /// Inclination in radians.
    pub theta: f64,
    pub length: f64,
    /// Cost weight on the interface deviation; `1 - beta` weighs the controls.
    pub beta: f64,
}

impl PhysicalParams {
    pub fn new(reynolds: f64, capillary: f64, theta: f64, length: f64, beta: f64) -> Result<Self> {
        let p = Self {
            reynolds,
            capillary,
            theta,
            length,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    /// L = 30, θ = π/3, Ca = 0.05 and the given Reynolds number.
    pub fn reference(reynolds: f64) -> Self {
        Self {
            reynolds,
            capillary: 0.05,
            theta: PI / 3.0,
            length: 30.0,
            beta: DEFAULT_BETA,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be positive and finite, got {v}")))
            }
        };
        positive("reynolds", self.reynolds)?;
        positive("capillary", self.capillary)?;
        positive("length", self.length)?;
        if !(self.theta > 0.0 && self.theta <= PI / 2.0) {
            return Err(Error::invalid(
                "theta",
                format!("inclination must lie in (0, π/2], got {}", self.theta),
            ));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid(
                "beta",
                format!("must lie in [0, 1], got {}", self.beta),
            ));
        }
        Ok(())
    }

    pub fn cot_theta(&self) -> f64 {
        1.0 / self.theta.tan()
    }
}

/// Uniform periodic grid `x_j = j L / N`, `j = 0..N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n_nodes: usize,
    length: f64,
}

impl Grid {
    pub fn new(n_nodes: usize, length: f64) -> Result<Self> {
        if n_nodes < 4 || n_nodes % 2 != 0 {
            return Err(Error::invalid(
                "n_nodes",
                format!("need an even node count of at least 4, got {n_nodes}"),
            ));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::invalid("length", format!("must be positive, got {length}")));
        }
        Ok(Self { n_nodes, length })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n_nodes as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.dx()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|j| self.node(j)).collect()
    }

    /// Signed wavenumber index of FFT bin `j` (`-N/2+1 ..= N/2`).
    pub fn mode_index(&self, j: usize) -> i64 {
        let n = self.n_nodes as i64;
        let j = j as i64;
        if j <= n / 2 {
            j
        } else {
            j - n
        }
    }

    pub fn wavenumber(&self, mode: i64) -> f64 {
        2.0 * PI * mode as f64 / self.length
    }
}

/// Interface height and down-slope flux sampled on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilmState {
    pub h: Vec<f64>,
    pub q: Vec<f64>,
    pub t: f64,
}

impl FilmState {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Checks finiteness and strict positivity of `h`; reports the first bad node.
    pub fn validate(&self) -> Result<()> {
        if self.h.len() != self.q.len() {
            return Err(Error::dim("film state", self.h.len(), self.q.len()));
        }
        for (j, (&h, &q)) in self.h.iter().zip(&self.q).enumerate() {
            if !(h.is_finite() && h > 0.0) || !q.is_finite() {
                return Err(Error::NonPositiveHeight { node: j, value: h });
            }
        }
        Ok(())
    }

    /// Deviation from the Nusselt film, stacked as `(h - 1, q - 2/3)`.
    pub fn deviation(&self) -> Vec<f64> {
        self.h
            .iter()
            .map(|h| h - 1.0)
            .chain(self.q.iter().map(|q| q - NUSSELT_FLUX))
            .collect()
    }

    /// Inverse of [`FilmState::deviation`].
    pub fn from_deviation(xi: &[f64], t: f64) -> Self {
        let n = xi.len() / 2;
        Self {
            h: xi[..n].iter().map(|v| v + 1.0).collect(),
            q: xi[n..].iter().map(|v| v + NUSSELT_FLUX).collect(),
            t,
        }
    }

    /// `‖h - 1‖₂ / √L`, the root-mean-square interface deviation.
    pub fn rms_deviation(&self) -> f64 {
        let n = self.h.len() as f64;
        (self.h.iter().map(|h| (h - 1.0).powi(2)).sum::<f64>() / n).sqrt()
    }

    /// Cyclic shift by `nodes` grid points towards larger `x`.
    pub fn rotated(&self, nodes: usize) -> Self {
        let mut h = self.h.clone();
        let mut q = self.q.clone();
        h.rotate_right(nodes % self.h.len());
        q.rotate_right(nodes % self.q.len());
        Self { h, q, t: self.t }
    }
}

/// The flat film `h = 1`, `q = 2/3` at `t = 0`.
pub fn nusselt_state(grid: &Grid) -> FilmState {
    let n = grid.n_nodes();
    FilmState {
        h: vec![1.0; n],
        q: vec![NUSSELT_FLUX; n],
        t: 0.0,
    }
}

fn unnormalised_shape(x: f64, omega: f64, length: f64) -> f64 {
    (((2.0 * PI * x / length).cos() - 1.0) / (omega * omega)).exp()
}

/// Normalisation making the actuator profile integrate to one over a period.
///
/// The periodic trapezoidal rule converges geometrically for this analytic
/// integrand, so sample counts are doubled until the estimate stops moving.
pub fn shape_normalisation(omega: f64, length: f64) -> f64 {
    let mut n = 64usize;
    let mut previous = f64::NAN;
    loop {
        let h = length / n as f64;
        let integral: f64 = (0..n).map(|j| unnormalised_shape(j as f64 * h, omega, length)).sum::<f64>() * h;
        if (integral - previous).abs() <= 1e-15 * integral || n >= 1 << 22 {
            return 1.0 / integral;
        }
        previous = integral;
        n *= 2;
    }
}

/// Smooth periodic approximation of a unit point source located at `x = 0`.
pub fn actuator_shape(x: f64, omega: f64, length: f64) -> f64 {
    shape_normalisation(omega, length) * unnormalised_shape(x, omega, length)
}

/// Evenly spaced sites `L (i - 1/2) / count`, symmetric about `L / 2`.
pub fn placement(count: usize, length: f64) -> Vec<f64> {
    (1..=count)
        .map(|i| length * (i as f64 - 0.5) / count as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorBank {
    pub positions: Vec<f64>,
    pub omega: f64,
    pub alpha: f64,
    pub length: f64,
}

impl ActuatorBank {
    pub fn new(m: usize, omega: f64, length: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("actuators", "need at least one actuator"));
        }
        Self::from_positions(placement(m, length), omega, length)
    }

    pub fn from_positions(positions: Vec<f64>, omega: f64, length: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("actuators", "need at least one actuator"));
        }
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::invalid("omega", format!("must be positive, got {omega}")));
        }
        let positions = positions.into_iter().map(|x| x.rem_euclid(length)).collect();
        Ok(Self {
            positions,
            omega,
            alpha: shape_normalisation(omega, length),
            length,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `d(x - x_i)`.
    pub fn profile(&self, i: usize, x: f64) -> f64 {
        self.alpha * unnormalised_shape(x - self.positions[i], self.omega, self.length)
    }

    /// Profile of actuator `i` sampled on the grid.
    pub fn column(&self, i: usize, grid: &Grid) -> Vec<f64> {
        (0..grid.n_nodes()).map(|j| self.profile(i, grid.node(j))).collect()
    }

    /// Every actuator moved by `dx` along the film.
    pub fn shifted(&self, dx: f64) -> Self {
        Self {
            positions: self
                .positions
                .iter()
                .map(|x| (x + dx).rem_euclid(self.length))
                .collect(),
            ..self.clone()
        }
    }
}

/// Interface probes, each sitting on a grid node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverBank {
    pub nodes: Vec<usize>,
    pub positions: Vec<f64>,
}

impl ObserverBank {
    pub fn new(p: usize, grid: &Grid) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("observers", "need at least one observer"));
        }
        let nodes = placement(p, grid.length())
            .into_iter()
            .map(|x| snap_to_node(x, grid))
            .collect();
        Self::from_nodes(nodes, grid)
    }

    pub fn from_nodes(nodes: Vec<usize>, grid: &Grid) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::invalid("observers", "need at least one observer"));
        }
        if let Some(&bad) = nodes.iter().find(|&&j| j >= grid.n_nodes()) {
            return Err(Error::invalid("observers", format!("node {bad} is off the grid")));
        }
        let positions = nodes.iter().map(|&j| grid.node(j)).collect();
        Ok(Self { nodes, positions })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Every probe moved by `shift` nodes along the film.
    pub fn shifted(&self, shift: usize, grid: &Grid) -> Self {
        let nodes = self.nodes.iter().map(|j| (j + shift) % grid.n_nodes()).collect();
        Self::from_nodes(nodes, grid).expect("shifted nodes stay on the grid")
    }

    /// `h - 1` at each probe.
    pub fn observe(&self, state: &FilmState) -> Vec<f64> {
        self.nodes.iter().map(|&j| state.h[j] - 1.0).collect()
    }
}

fn snap_to_node(x: f64, grid: &Grid) -> usize {
    ((x / grid.dx()).round() as usize) % grid.n_nodes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nusselt_is_flat_and_parameter_free() {
        let grid = Grid::new(8, 30.0).unwrap();
        let s = nusselt_state(&grid);
        assert_eq!(s.h, vec![1.0; 8]);
        assert!(s.q.iter().all(|&q| q == 2.0 / 3.0));
        assert_eq!(s.t, 0.0);
        assert_eq!(nusselt_state(&Grid::new(256, 30.0).unwrap()).h.len(), 256);
    }

    #[test]
    fn shape_extrema() {
        let (omega, length) = (0.1, 30.0);
        let alpha = shape_normalisation(omega, length);
        assert_eq!(actuator_shape(0.0, omega, length), alpha);
        let mid = actuator_shape(length / 2.0, omega, length);
        assert!((mid - alpha * (-2.0 / (omega * omega)).exp()).abs() <= 1e-300 + 1e-15 * mid);
        // periodic
        let x = 3.7;
        let d0 = actuator_shape(x, omega, length);
        let d1 = actuator_shape(x + length, omega, length);
        assert!((d0 - d1).abs() < 1e-11 * d0.max(1e-300));
    }

    #[test]
    fn alpha_regression_for_default_width() {
        // 1 / (L e^{-100} I0(100)), evaluated with mpmath at 30 digits.
        let expected = 0.834_493_711_461_605_96;
        let alpha = shape_normalisation(0.1, 30.0);
        assert!((alpha - expected).abs() < 1e-13, "alpha = {alpha:.16}");
        // trapezoidal quadrature over the working grid reproduces one
        let grid = Grid::new(256, 30.0).unwrap();
        let bank = ActuatorBank::new(1, 0.1, 30.0).unwrap();
        let integral: f64 = bank.column(0, &grid).iter().sum::<f64>() * grid.dx();
        assert!((integral - 1.0).abs() < 1e-12, "{integral}");
    }

    #[test]
    fn placement_examples() {
        assert_eq!(placement(1, 30.0), vec![15.0]);
        assert_eq!(placement(5, 30.0), vec![3.0, 9.0, 15.0, 21.0, 27.0]);
        assert_eq!(placement(2, 30.0), vec![7.5, 22.5]);
    }

    #[test]
    fn observers_snap_symmetrically() {
        let grid = Grid::new(256, 30.0).unwrap();
        let obs = ObserverBank::new(5, &grid).unwrap();
        assert_eq!(obs.nodes, vec![26, 77, 128, 179, 230]);
        for &j in &obs.nodes {
            assert!(obs.nodes.contains(&((256 - j) % 256)));
        }
    }

    #[test]
    fn grid_rejects_odd_counts() {
        assert!(Grid::new(7, 30.0).is_err());
        assert!(Grid::new(8, 0.0).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(PhysicalParams::new(1.0, 0.05, PI / 3.0, 30.0, 0.5).is_ok());
        assert!(PhysicalParams::new(0.0, 0.05, PI / 3.0, 30.0, 0.5).is_err());
        assert!(PhysicalParams::new(1.0, 0.05, PI / 3.0, 30.0, 1.5).is_err());
        assert!(PhysicalParams::new(1.0, -0.05, PI / 3.0, 30.0, 0.5).is_err());
    }

    #[test]
    fn state_validation_names_first_bad_node() {
        let grid = Grid::new(8, 30.0).unwrap();
        let mut s = nusselt_state(&grid);
        s.h[5] = -0.1;
        s.h[6] = 0.0;
        match s.validate() {
            Err(Error::NonPositiveHeight { node, .. }) => assert_eq!(node, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn shape_integrates_to_one(omega in 0.01f64..1.0) {
                let length = 30.0;
                let alpha = shape_normalisation(omega, length);
                // independent fine quadrature
                let n = 200_000;
                let h = length / n as f64;
                let integral: f64 = (0..n).map(|j| alpha * unnormalised_shape(j as f64 * h, omega, length)).sum::<f64>() * h;
                prop_assert!((integral - 1.0).abs() < 1e-10);
            }

            #[test]
            fn placement_reflects_onto_itself(count in 1usize..40, length in 1.0f64..100.0) {
                let xs = placement(count, length);
                for x in &xs {
                    let mirrored = length - x;
                    prop_assert!(xs.iter().any(|y| (y - mirrored).abs() < 1e-12 * length));
                }
            }
        }
    }
}
