//! Controller synthesis: full-state LQR, static output feedback, and the
//! observer-based compensator on retained modes.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1};
use ndarray_linalg::Solve;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsys::LinearSystem;
use crate::matreq::{self, lqr_gain, project_gain, solve_sof, stabilising_output_gain, SofOptions};
use crate::modal::{dimension_of_leading_modes, modal_decompose, ModalDecomposition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    FullState,
    Sof,
    Luenberger,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::FullState, Strategy::Sof, Strategy::Luenberger];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::FullState => "full-state",
            Strategy::Sof => "sof",
            Strategy::Luenberger => "luenberger",
        }
    }

    /// Prefix used in data file names (`data_sof-success.dat`, ...).
    pub fn file_tag(self) -> &'static str {
        match self {
            Strategy::FullState => "full",
            Strategy::Sof => "sof",
            Strategy::Luenberger => "dof",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "full-state" | "full" | "lqr" => Ok(Strategy::FullState),
            "sof" | "output-feedback" | "output" => Ok(Strategy::Sof),
            "luenberger" | "observer" | "dof" => Ok(Strategy::Luenberger),
            other => Err(Error::invalid(
                "strategy",
                format!("unknown strategy '{other}' (expected full-state, sof or luenberger)"),
            )),
        }
    }
}

/// Matrices as row-major nested arrays in JSON.
mod rows {
    use ndarray::Array2;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(a: &Array2<f64>, ser: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = a.rows().into_iter().map(|r| r.to_vec()).collect();
        (a.ncols(), rows).serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Array2<f64>, D::Error> {
        let (cols, rows) = <(usize, Vec<Vec<f64>>)>::deserialize(de)?;
        if rows.iter().any(|r| r.len() != cols) {
            return Err(D::Error::custom("ragged matrix"));
        }
        let n = rows.len();
        Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect()).map_err(D::Error::custom)
    }
}

/// Feedback law and, for the observer variant, its estimator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum ControlLaw {
    /// `η = k ξ` on the full perturbation state.
    FullState {
        #[serde(with = "rows")]
        k: Array2<f64>,
    },
    /// `η = k ζ` on the interface samples.
    OutputFeedback {
        #[serde(with = "rows")]
        k: Array2<f64>,
    },
    /// `η = k̃ z` with `ż = a_cl z + l (ζ - sampling·z)`.
    Luenberger {
        #[serde(with = "rows")]
        k_tilde: Array2<f64>,
        #[serde(with = "rows")]
        l: Array2<f64>,
        #[serde(with = "rows")]
        a_cl: Array2<f64>,
        #[serde(with = "rows")]
        sampling: Array2<f64>,
        /// Height part of the prolongation, reconstructing `h - 1` from `z`.
        #[serde(with = "rows")]
        height_profile: Array2<f64>,
        z: Vec<f64>,
    },
}

/// Synthesis parameters and diagnostics stored alongside the gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisInfo {
    pub strategy: Strategy,
    pub reynolds: f64,
    pub n_nodes: usize,
    pub n_actuators: usize,
    pub n_observers: usize,
    pub beta: f64,
    pub unstable_dimension: usize,
    /// Spectral abscissa of the (coupled) closed loop on the design space.
    pub closed_loop_abscissa: f64,
    pub retained_dimension: Option<usize>,
    pub observer_abscissa: Option<f64>,
    pub regulator_abscissa: Option<f64>,
    pub sof_iterations: Option<usize>,
    pub sof_residual: Option<f64>,
    /// Residuals of the two Lyapunov conditions and the stationarity condition.
    pub sof_residuals: Option<[f64; 3]>,
    pub sof_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub law: ControlLaw,
    pub info: SynthesisInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SynthesisOptions {
    pub sof: SofOptions,
    /// Retained real dimension for the observer design; by default the
    /// least stable `M` modes, counting a conjugate pair once.
    pub retain: Option<usize>,
}

fn mat_vec(a: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    a.dot(&ArrayView1::from(x)).to_vec()
}

impl Controller {
    pub fn strategy(&self) -> Strategy {
        self.info.strategy
    }

    /// Control amplitudes from the full state `ξ` and the samples `ζ`.
    pub fn amplitudes(&self, xi: &[f64], zeta: &[f64]) -> Vec<f64> {
        match &self.law {
            ControlLaw::FullState { k } => mat_vec(k, xi),
            ControlLaw::OutputFeedback { k } => mat_vec(k, zeta),
            ControlLaw::Luenberger { k_tilde, z, .. } => mat_vec(k_tilde, z),
        }
    }

    pub fn estimator_state(&self) -> Option<&[f64]> {
        match &self.law {
            ControlLaw::Luenberger { z, .. } => Some(z),
            _ => None,
        }
    }

    pub fn set_estimator_state(&mut self, state: &[f64]) -> Result<()> {
        match &mut self.law {
            ControlLaw::Luenberger { z, .. } => {
                if state.len() != z.len() {
                    return Err(Error::dim("estimator state", z.len(), state.len()));
                }
                z.copy_from_slice(state);
                Ok(())
            }
            _ => Err(Error::invalid("controller", "only the observer controller has a state")),
        }
    }

    pub fn reset(&mut self) {
        if let ControlLaw::Luenberger { z, .. } = &mut self.law {
            z.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// `ż` for estimator state `z` and samples `ζ`.
    pub fn estimator_rhs(&self, z: &[f64], zeta: &[f64]) -> Option<Vec<f64>> {
        match &self.law {
            ControlLaw::Luenberger { l, a_cl, sampling, .. } => {
                let zv = ArrayView1::from(z);
                let innovation = Array1::from(zeta.to_vec()) - sampling.dot(&zv);
                Some((a_cl.dot(&zv) + l.dot(&innovation)).to_vec())
            }
            _ => None,
        }
    }

    /// Advances the estimator over `dt` by the trapezoidal rule with the
    /// samples `ζ` held fixed. No-op for static laws.
    pub fn advance_estimator(&mut self, zeta: &[f64], dt: f64) -> Result<()> {
        if let ControlLaw::Luenberger { l, a_cl, sampling, z, .. } = &mut self.law {
            let m = &*a_cl - &l.dot(&*sampling);
            let r = m.nrows();
            let eye = Array2::<f64>::eye(r);
            let zv = Array1::from(z.clone());
            let forcing = l.dot(&ArrayView1::from(zeta)) * dt;
            let rhs = (&eye + &(&m * (0.5 * dt))).dot(&zv) + forcing;
            let next = (&eye - &(&m * (0.5 * dt))).solve_into(rhs)?;
            z.copy_from_slice(next.as_slice().expect("contiguous"));
        }
        Ok(())
    }

    /// Estimated `h - 1` on the grid.
    pub fn estimated_deviation(&self, z: &[f64]) -> Option<Vec<f64>> {
        match &self.law {
            ControlLaw::Luenberger { height_profile, .. } => Some(mat_vec(height_profile, z)),
            _ => None,
        }
    }

    /// Closed-loop matrix on the design space (plant ⊕ estimator for the
    /// observer controller).
    pub fn closed_loop_matrix(&self, sys: &LinearSystem) -> Array2<f64> {
        let r = sys.reduced();
        match &self.law {
            ControlLaw::FullState { k } => &r.a + &r.b.dot(&sys.restrict_gain(k)),
            ControlLaw::OutputFeedback { k } => &r.a + &r.b.dot(&k.dot(&r.c)),
            ControlLaw::Luenberger {
                k_tilde,
                l,
                a_cl,
                sampling,
                ..
            } => coupled_matrix(&r.a, &r.b, &r.c, k_tilde, l, a_cl, sampling),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn coupled_matrix(
    a: &Array2<f64>,
    b: &Array2<f64>,
    c: &Array2<f64>,
    k_tilde: &Array2<f64>,
    l: &Array2<f64>,
    a_cl: &Array2<f64>,
    sampling: &Array2<f64>,
) -> Array2<f64> {
    let n = a.nrows();
    let r = a_cl.nrows();
    let mut m = Array2::zeros((n + r, n + r));
    m.slice_mut(s![..n, ..n]).assign(a);
    m.slice_mut(s![..n, n..]).assign(&b.dot(k_tilde));
    m.slice_mut(s![n.., ..n]).assign(&l.dot(c));
    m.slice_mut(s![n.., n..]).assign(&(a_cl - &l.dot(sampling)));
    m
}

fn base_info(sys: &LinearSystem, strategy: Strategy) -> SynthesisInfo {
    SynthesisInfo {
        strategy,
        reynolds: sys.params.reynolds,
        n_nodes: sys.n_nodes(),
        n_actuators: sys.n_inputs(),
        n_observers: sys.n_outputs(),
        beta: sys.params.beta,
        unstable_dimension: sys.unstable_dimension(),
        closed_loop_abscissa: f64::NAN,
        retained_dimension: None,
        observer_abscissa: None,
        regulator_abscissa: None,
        sof_iterations: None,
        sof_residual: None,
        sof_residuals: None,
        sof_cost: None,
    }
}

fn require_hurwitz(what: &str, a: &Array2<f64>) -> Result<f64> {
    let abscissa = matreq::spectral_abscissa(a)?;
    if abscissa >= matreq::HURWITZ_MARGIN {
        return Err(Error::Synthesis(format!("{what} is not Hurwitz (abscissa {abscissa:e})")));
    }
    Ok(abscissa)
}

/// Full-state LQR on the design space, lifted to act on `ξ`.
pub fn synth_full_state(sys: &LinearSystem) -> Result<Controller> {
    let r = sys.reduced();
    let k_r = lqr_gain(&r.a, &r.b, &r.u, &r.v)?;
    let abscissa = require_hurwitz("a + b k", &(&r.a + &r.b.dot(&k_r)))?;
    let mut info = base_info(sys, Strategy::FullState);
    info.closed_loop_abscissa = abscissa;
    Ok(Controller {
        law: ControlLaw::FullState { k: sys.lift_gain(&k_r) },
        info,
    })
}

pub fn synth_output_feedback(sys: &LinearSystem) -> Result<Controller> {
    synth_output_feedback_with(sys, &SofOptions::default())
}

/// Optimal static output feedback, started from the projected LQR gain or,
/// when that does not stabilise, from a shift-continuation gain.
pub fn synth_output_feedback_with(sys: &LinearSystem, options: &SofOptions) -> Result<Controller> {
    let r = sys.reduced();
    let k_full = lqr_gain(&r.a, &r.b, &r.u, &r.v)
        .map_err(|e| Error::SofFailToStart(format!("no full-state gain to project: {e}")))?;
    let mut k0 = project_gain(&k_full, &r.c)?;
    if !matreq::is_hurwitz(&(&r.a + &r.b.dot(&k0.dot(&r.c))))? {
        k0 = stabilising_output_gain(&r.a, &r.b, &r.c, &r.u, &r.v)?;
    }
    let sol = solve_sof(&r.a, &r.b, &r.c, &r.u, &r.v, Some(&k0), options)?;
    let abscissa = require_hurwitz("a + b k c", &(&r.a + &r.b.dot(&sol.k.dot(&r.c))))?;
    let mut info = base_info(sys, Strategy::Sof);
    info.closed_loop_abscissa = abscissa;
    info.sof_iterations = Some(sol.iterations);
    info.sof_residual = Some(sol.residual);
    info.sof_residuals = Some(sol.residuals);
    info.sof_cost = Some(sol.cost);
    Ok(Controller {
        law: ControlLaw::OutputFeedback { k: sol.k },
        info,
    })
}

/// Indices of retained modes whose rows of `b` (or columns of `c`) vanish.
fn deficient_modes(modes: &ModalDecomposition, matrix: &Array2<f64>, by_rows: bool) -> Vec<i64> {
    let scale = matrix.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut out = Vec::new();
    let mut offset = 0;
    for mode in &modes.modes {
        let range = offset..offset + mode.dimension;
        let norm: f64 = if by_rows {
            range.clone().flat_map(|i| matrix.row(i).to_vec()).map(|v| v * v).sum()
        } else {
            range.clone().flat_map(|i| matrix.column(i).to_vec()).map(|v| v * v).sum()
        };
        if mode.is_unstable() && norm.sqrt() <= 1e-10 * scale {
            out.push(mode.wavenumber_index as i64);
        }
        offset += mode.dimension;
    }
    out
}

/// Observer-based compensator on the retained modes.
pub fn synth_luenberger(sys: &LinearSystem, modes: &ModalDecomposition) -> Result<Controller> {
    let uncontrollable = deficient_modes(modes, &modes.b, true);
    if !uncontrollable.is_empty() {
        return Err(Error::ModeDeficiency {
            property: "controllable",
            modes: uncontrollable,
        });
    }
    let unobservable = deficient_modes(modes, &modes.sampling, false);
    if !unobservable.is_empty() {
        return Err(Error::ModeDeficiency {
            property: "observable",
            modes: unobservable,
        });
    }

    let k_tilde = lqr_gain(&modes.a, &modes.b, &modes.u, &sys.v)?;
    let dim = modes.dimension();
    let p = sys.n_outputs();
    let k_obs = lqr_gain(&modes.a.t().to_owned(), &modes.sampling.t().to_owned(), &Array2::eye(dim), &Array2::eye(p))?;
    let l = -k_obs.t().to_owned();

    let a_cl = &modes.a + &modes.b.dot(&k_tilde);
    let regulator = require_hurwitz("ã + b̃ k̃", &a_cl)?;
    let observer = require_hurwitz("ã - l·sampling", &(&modes.a - &l.dot(&modes.sampling)))?;

    let r = sys.reduced();
    let coupled = coupled_matrix(&r.a, &r.b, &r.c, &k_tilde, &l, &a_cl, &modes.sampling);
    let abscissa = matreq::spectral_abscissa(&coupled)?;

    let n = sys.n_nodes();
    let mut info = base_info(sys, Strategy::Luenberger);
    info.closed_loop_abscissa = abscissa;
    info.retained_dimension = Some(dim);
    info.regulator_abscissa = Some(regulator);
    info.observer_abscissa = Some(observer);
    Ok(Controller {
        law: ControlLaw::Luenberger {
            k_tilde,
            l,
            a_cl,
            sampling: modes.sampling.clone(),
            height_profile: modes.prolongation.slice(s![..n, ..]).to_owned(),
            z: vec![0.0; dim],
        },
        info,
    })
}

/// Default retained dimension for the observer design with `M` actuators.
pub fn default_retained_dimension(sys: &LinearSystem) -> usize {
    dimension_of_leading_modes(sys, sys.n_inputs())
}

pub fn synthesize(sys: &LinearSystem, strategy: Strategy, options: &SynthesisOptions) -> Result<Controller> {
    match strategy {
        Strategy::FullState => synth_full_state(sys),
        Strategy::Sof => synth_output_feedback_with(sys, &options.sof),
        Strategy::Luenberger => {
            let retain = options.retain.unwrap_or_else(|| default_retained_dimension(sys));
            let modes = modal_decompose(sys, retain)?;
            synth_luenberger(sys, &modes)
        }
    }
}
