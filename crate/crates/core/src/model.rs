//! Nonlinear weighted-residual film model: mass conservation plus the
//! first-order flux equation with wall injection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::film::{ActuatorBank, FilmState, Grid, PhysicalParams};
use crate::spectral::Spectral;

/// Wall-normal injection velocity produced by the actuator amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlField {
    pub f: Vec<f64>,
    pub amplitudes: Vec<f64>,
}

impl ControlField {
    pub fn zero(n_nodes: usize) -> Self {
        Self {
            f: vec![0.0; n_nodes],
            amplitudes: Vec::new(),
        }
    }

    /// `f(x_j) = Σ η_i d(x_j - x_i)`.
    pub fn from_amplitudes(bank: &ActuatorBank, grid: &Grid, amplitudes: &[f64]) -> Result<Self> {
        if amplitudes.len() != bank.len() {
            return Err(Error::dim("control amplitudes", bank.len(), amplitudes.len()));
        }
        let mut f = vec![0.0; grid.n_nodes()];
        for (i, &eta) in amplitudes.iter().enumerate() {
            for (fj, d) in f.iter_mut().zip(bank.column(i, grid)) {
                *fj += eta * d;
            }
        }
        Ok(Self {
            f,
            amplitudes: amplitudes.to_vec(),
        })
    }

    /// Same as [`ControlField::from_amplitudes`] with precomputed actuator columns.
    pub fn from_columns(columns: &[Vec<f64>], amplitudes: &[f64]) -> Self {
        let n = columns.first().map_or(0, Vec::len);
        let mut f = vec![0.0; n];
        for (col, &eta) in columns.iter().zip(amplitudes) {
            for (fj, d) in f.iter_mut().zip(col) {
                *fj += eta * d;
            }
        }
        Self {
            f,
            amplitudes: amplitudes.to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WrModel {
    params: PhysicalParams,
    spectral: Spectral,
}

impl WrModel {
    pub fn new(params: PhysicalParams, grid: Grid) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            spectral: Spectral::new(grid),
        })
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    pub fn grid(&self) -> &Grid {
        self.spectral.grid()
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    /// Time derivatives `(h_t, q_t)` for the given fields and injection `f`.
    pub fn rhs(&self, h: &[f64], q: &[f64], f: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.grid().n_nodes();
        if h.len() != n || q.len() != n || f.len() != n {
            return Err(Error::dim("wr_rhs", n, format!("{}/{}/{}", h.len(), q.len(), f.len())));
        }
        if let Some((node, &value)) = h.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::NonPositiveHeight { node, value });
        }

        let p = &self.params;
        let s = &self.spectral;
        let h_hat = s.forward(h);
        let q_hat = s.forward(q);
        let h_x = s.derivative_of_spectrum(&h_hat, 1);
        let h_xxx = s.derivative_of_spectrum(&h_hat, 3);
        let q_x = s.derivative_of_spectrum(&q_hat, 1);

        let re = p.reynolds;
        let cot = p.cot_theta();
        let inv_ca = 1.0 / p.capillary;

        let mut dh = Vec::with_capacity(n);
        let mut dq = Vec::with_capacity(n);
        for j in 0..n {
            let (hj, qj, fj) = (h[j], q[j], f[j]);
            dh.push(fj - q_x[j]);
            let gravity_capillary = hj.powi(3) / 3.0 * (2.0 - 2.0 * h_x[j] * cot + h_xxx[j] * inv_ca);
            let inertia = re
                * (18.0 * qj * qj * h_x[j] / 35.0 - 34.0 * hj * qj * q_x[j] / 35.0
                    + hj * qj * fj / 5.0);
            dq.push(5.0 / (2.0 * re * hj * hj) * (-qj + gravity_capillary + inertia));
        }
        Ok((dh, dq))
    }

    pub fn rhs_state(&self, state: &FilmState, control: &ControlField) -> Result<(Vec<f64>, Vec<f64>)> {
        self.rhs(&state.h, &state.q, &control.f)
    }
}

/// Free-function form of [`WrModel::rhs_state`].
pub fn wr_rhs(
    state: &FilmState,
    control: &ControlField,
    params: &PhysicalParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = Grid::new(state.len(), params.length)?;
    WrModel::new(*params, grid)?.rhs_state(state, control)
}

/// `∫₀ᴸ h dx` by the periodic trapezoidal rule.
pub fn mass(state: &FilmState, length: f64) -> f64 {
    state.h.iter().sum::<f64>() * length / state.h.len() as f64
}
