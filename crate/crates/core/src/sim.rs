//! Closed-loop time integration of the nonlinear film model.
//!
//! Time stepping is a second-order implicit-explicit scheme in Fourier
//! space: the Jacobian at the Nusselt film is treated by Crank–Nicolson (one
//! 2×2 solve per wavenumber) and the remainder by Heun's method. Step sizes
//! adapt through step doubling. The surface-tension term of the implicit
//! operator is scaled by the mid-range film height so that the explicit part
//! stays mild when large waves are present.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::film::{nusselt_state, ActuatorBank, FilmState, Grid, ObserverBank, PhysicalParams, DEFAULT_OMEGA};
use crate::linsys::{linearize, wavenumber_blocks, Block, LinearSystem};
use crate::matreq::SofOptions;
use crate::model::{ControlField, WrModel};
use crate::synth::{synthesize, Controller, Strategy, SynthesisOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperOptions {
    pub rtol: f64,
    pub atol: f64,
    pub dt_init: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    /// Drops the upper third of the spectrum from the explicit part.
    #[serde(default = "enabled")]
    pub dealias: bool,
}

fn enabled() -> bool {
    true
}

impl Default for StepperOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-8,
            dt_init: 1e-3,
            dt_max: 0.1,
            dt_min: 1e-12,
            dealias: true,
        }
    }
}

impl StepperOptions {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("dt_init", self.dt_init),
            ("dt_max", self.dt_max),
            ("dt_min", self.dt_min),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        if self.dt_min > self.dt_max {
            return Err(Error::invalid("dt_min", "exceeds dt_max"));
        }
        Ok(())
    }
}

/// CN–Heun stepper for the deviation `ξ = (h - 1, q - 2/3)`.
#[derive(Debug, Clone)]
pub struct Imex {
    model: WrModel,
    dealias: bool,
}

type Spectrum = (Vec<Complex64>, Vec<Complex64>);

fn apply(b: &Block, h: Complex64, q: Complex64) -> (Complex64, Complex64) {
    (b[0][0] * h + b[0][1] * q, b[1][0] * h + b[1][1] * q)
}

/// Solves `(I - s·b) x = r` for a 2×2 block.
fn solve_shifted(b: &Block, s: f64, r: (Complex64, Complex64)) -> (Complex64, Complex64) {
    let one = Complex64::new(1.0, 0.0);
    let m00 = one - b[0][0] * s;
    let m01 = -b[0][1] * s;
    let m10 = -b[1][0] * s;
    let m11 = one - b[1][1] * s;
    let det = m00 * m11 - m01 * m10;
    ((m11 * r.0 - m01 * r.1) / det, (m00 * r.1 - m10 * r.0) / det)
}

impl Imex {
    pub fn new(model: WrModel) -> Self {
        Self { model, dealias: true }
    }

    pub fn with_dealias(mut self, dealias: bool) -> Self {
        self.dealias = dealias;
        self
    }

    /// Zeroes the 2/3-rule band of an explicit term.
    fn truncate(&self, spec: &mut Spectrum) {
        if !self.dealias {
            return;
        }
        let n = spec.0.len();
        for j in 0..n {
            if 3 * j.min(n - j) > n {
                spec.0[j] = Complex64::default();
                spec.1[j] = Complex64::default();
            }
        }
    }

    pub fn model(&self) -> &WrModel {
        &self.model
    }

    /// Implicit operator blocks for a film whose height spans `[lo, hi]`.
    pub fn blocks_for(&self, lo: f64, hi: f64) -> Vec<Block> {
        let scale = 0.5 * (lo + hi);
        wavenumber_blocks(self.model.params(), self.model.spectral(), scale)
    }

    fn transform(&self, xi: &[f64]) -> Spectrum {
        let n = xi.len() / 2;
        let s = self.model.spectral();
        (s.forward(&xi[..n]), s.forward(&xi[n..]))
    }

    fn untransform(&self, spec: Spectrum) -> Vec<f64> {
        let s = self.model.spectral();
        let mut out = s.inverse(spec.0);
        out.extend(s.inverse(spec.1));
        out
    }

    /// Spectrum of the full right-hand side.
    fn rhs_hat(&self, xi: &[f64], f: &[f64]) -> Result<Spectrum> {
        let state = FilmState::from_deviation(xi, 0.0);
        let (dh, dq) = self.model.rhs(&state.h, &state.q, f)?;
        let s = self.model.spectral();
        Ok((s.forward(&dh), s.forward(&dq)))
    }

    /// One step of size `dt` with injection `f` held fixed.
    pub fn step(&self, xi: &[f64], f: &[f64], dt: f64, blocks: &[Block]) -> Result<Vec<f64>> {
        let n = xi.len() / 2;
        let x0 = self.transform(xi);
        let r0 = self.rhs_hat(xi, f)?;
        // explicit remainder E = rhs - Jξ, and the common part ξ + dt/2·Jξ
        let mut e0 = (Vec::with_capacity(n), Vec::with_capacity(n));
        let mut base = (Vec::with_capacity(n), Vec::with_capacity(n));
        for j in 0..n {
            let (jh, jq) = apply(&blocks[j], x0.0[j], x0.1[j]);
            e0.0.push(r0.0[j] - jh);
            e0.1.push(r0.1[j] - jq);
            base.0.push(x0.0[j] + jh * (0.5 * dt));
            base.1.push(x0.1[j] + jq * (0.5 * dt));
        }
        self.truncate(&mut e0);
        let mut stage = (vec![Complex64::default(); n], vec![Complex64::default(); n]);
        for j in 0..n {
            let r = (base.0[j] + e0.0[j] * dt, base.1[j] + e0.1[j] * dt);
            let (h, q) = solve_shifted(&blocks[j], 0.5 * dt, r);
            stage.0[j] = h;
            stage.1[j] = q;
        }
        let xs = self.untransform(stage.clone());
        let rs = self.rhs_hat(&xs, f)?;
        let mut es = (Vec::with_capacity(n), Vec::with_capacity(n));
        for j in 0..n {
            let (jh, jq) = apply(&blocks[j], stage.0[j], stage.1[j]);
            es.0.push(rs.0[j] - jh);
            es.1.push(rs.1[j] - jq);
        }
        self.truncate(&mut es);
        let mut next = (vec![Complex64::default(); n], vec![Complex64::default(); n]);
        for j in 0..n {
            let r = (
                base.0[j] + (e0.0[j] + es.0[j]) * (0.5 * dt),
                base.1[j] + (e0.1[j] + es.1[j]) * (0.5 * dt),
            );
            let (h, q) = solve_shifted(&blocks[j], 0.5 * dt, r);
            next.0[j] = h;
            next.1[j] = q;
        }
        Ok(self.untransform(next))
    }

    /// One full step against two half steps. Returns the two-half-step
    /// solution and the weighted max-norm error estimate.
    pub fn doubled_step(
        &self,
        xi: &[f64],
        f: &[f64],
        dt: f64,
        blocks: &[Block],
        options: &StepperOptions,
    ) -> Result<(Vec<f64>, f64)> {
        let full = self.step(xi, f, dt, blocks)?;
        let half = self.step(xi, f, 0.5 * dt, blocks)?;
        let half = self.step(&half, f, 0.5 * dt, blocks)?;
        let n = xi.len() / 2;
        let mut err = 0.0f64;
        for (j, (a, b)) in half.iter().zip(&full).enumerate() {
            let base = if j < n { 1.0 } else { crate::film::NUSSELT_FLUX };
            let weight = options.atol + options.rtol * (a + base).abs();
            let e = (a - b).abs() / 3.0 / weight;
            err = if e.is_nan() { f64::INFINITY } else { err.max(e) };
        }
        Ok((half, err))
    }
}

/// Initial perturbation of the flat film.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    /// `(mode number, amplitude)` pairs of cosine modes added to `h`.
    pub modes: Vec<(usize, f64)>,
    /// Amplitude of seeded uniform noise on `h`.
    pub noise: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            modes: vec![(1, 0.1), (2, 0.1), (3, 0.1)],
            noise: 1e-3,
        }
    }
}

impl Perturbation {
    /// Perturbed film with `q = 2h³/3`. The noise has its mean and Nyquist
    /// component removed so that mass is exactly that of the flat film.
    pub fn apply(&self, grid: &Grid, seed: u64) -> FilmState {
        let n = grid.n_nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise: Vec<f64> = (0..n).map(|_| self.noise * rng.random_range(-1.0..=1.0)).collect();
        let spectral = crate::spectral::Spectral::new(*grid);
        let mut coeffs = spectral.forward(&noise);
        coeffs[0] = Complex64::default();
        coeffs[n / 2] = Complex64::default();
        noise = spectral.inverse(coeffs);
        let mut state = nusselt_state(grid);
        for (j, x) in grid.nodes().into_iter().enumerate() {
            let waves: f64 = self
                .modes
                .iter()
                .map(|&(m, a)| a * (2.0 * std::f64::consts::PI * m as f64 * x / grid.length()).cos())
                .sum();
            state.h[j] = 1.0 + waves + noise[j];
            state.q[j] = 2.0 / 3.0 * state.h[j].powi(3);
        }
        state
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stabilised,
    NotStabilised,
    BlowUp,
    SynthesisFailed,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Stabilised => "stabilised",
            Verdict::NotStabilised => "not_stabilised",
            Verdict::BlowUp => "blow_up",
            Verdict::SynthesisFailed => "synthesis_failed",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            Verdict::Stabilised,
            Verdict::NotStabilised,
            Verdict::BlowUp,
            Verdict::SynthesisFailed,
        ]
        .into_iter()
        .find(|v| v.name() == name)
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub params: PhysicalParams,
    pub n_nodes: usize,
    pub n_actuators: usize,
    pub n_observers: usize,
    pub omega: f64,
    /// `None` runs the film without control.
    pub strategy: Option<Strategy>,
    pub retain: Option<usize>,
    #[serde(default)]
    pub sof: SofOptions,
    pub burn_in_time: f64,
    pub control_time: f64,
    pub stepper: StepperOptions,
    pub perturbation: Perturbation,
    pub seed: u64,
    /// Success threshold on `‖h - 1‖₂ / √L`.
    pub epsilon: f64,
    pub h_max: f64,
    pub h_min: f64,
    /// Spacing of recorded samples.
    pub sample_interval: f64,
    pub snapshot_times: Vec<f64>,
    /// Rotates actuators, observers and the initial film by this many nodes.
    pub shift_nodes: usize,
}

impl RunConfig {
    pub fn new(params: PhysicalParams) -> Self {
        Self {
            params,
            n_nodes: 128,
            n_actuators: 5,
            n_observers: 5,
            omega: DEFAULT_OMEGA,
            strategy: Some(Strategy::Sof),
            retain: None,
            sof: SofOptions::default(),
            burn_in_time: 300.0,
            control_time: 100.0,
            stepper: StepperOptions::default(),
            perturbation: Perturbation::default(),
            seed: 0,
            epsilon: 1e-3,
            h_max: 10.0,
            h_min: 1e-3,
            sample_interval: 0.1,
            snapshot_times: Vec::new(),
            shift_nodes: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.stepper.validate()?;
        for (name, v) in [
            ("epsilon", self.epsilon),
            ("control_time", self.control_time),
            ("sample_interval", self.sample_interval),
            ("h_max", self.h_max),
            ("h_min", self.h_min),
            ("omega", self.omega),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.burn_in_time.is_finite() && self.burn_in_time >= 0.0) {
            return Err(Error::invalid("burn_in_time", "must be non-negative"));
        }
        if self.h_min >= 1.0 || self.h_max <= 1.0 {
            return Err(Error::invalid("h_min/h_max", "bounds must bracket the flat film"));
        }
        if self.n_actuators == 0 || self.n_observers == 0 {
            return Err(Error::invalid("actuators/observers", "need at least one of each"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.n_nodes, self.params.length)
    }

    /// Actuator and observer banks, rotated by `shift_nodes`.
    pub fn banks(&self) -> Result<(ActuatorBank, ObserverBank)> {
        let grid = self.grid()?;
        let act = ActuatorBank::new(self.n_actuators, self.omega, self.params.length)?
            .shifted(self.shift_nodes as f64 * grid.dx());
        let obs = ObserverBank::new(self.n_observers, &grid)?.shifted(self.shift_nodes, &grid);
        Ok((act, obs))
    }

    pub fn linear_system(&self) -> Result<LinearSystem> {
        let grid = self.grid()?;
        let (act, obs) = self.banks()?;
        linearize(&self.params, &grid, &act, &obs)
    }

    pub fn initial_state(&self) -> Result<FilmState> {
        let grid = self.grid()?;
        Ok(self.perturbation.apply(&grid, self.seed).rotated(self.shift_nodes))
    }

    pub fn synthesis_options(&self) -> SynthesisOptions {
        SynthesisOptions {
            retain: self.retain,
            sof: self.sof,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub f: Vec<f64>,
    /// Estimated `h - 1` reconstructed from the observer state.
    pub estimate: Option<Vec<f64>>,
}

/// Least-squares fit of `ln y = c - rate·t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLinearFit {
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub samples: usize,
}

/// Fits samples with `y > floor`; `None` with fewer than three of them.
pub fn log_linear_fit(t: &[f64], y: &[f64], floor: f64) -> Option<LogLinearFit> {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(_, &v)| v > floor && v.is_finite())
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if stt == 0.0 {
        return None;
    }
    let slope = sty / stt;
    let r_squared = if syy == 0.0 { 1.0 } else { sty * sty / (stt * syy) };
    Some(LogLinearFit {
        rate: -slope,
        intercept: my - slope * mt,
        r_squared,
        samples: pts.len(),
    })
}

/// Samples below this are excluded from decay fits.
pub const FIT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    /// `‖h - 1‖₂ / √L`.
    pub norms: Vec<f64>,
    /// Accumulated cost, zero before switch-on.
    pub costs: Vec<f64>,
    pub amplitudes: Vec<Vec<f64>>,
    /// `‖h - 1 - F_u⁻¹ z‖₂ / √L` for the observer controller, after switch-on.
    pub estimator_errors: Option<Vec<f64>>,
    pub verdict: Verdict,
    pub decay: Option<LogLinearFit>,
    /// `-max Re λ` of the linear closed loop.
    pub linear_rate: Option<f64>,
    pub final_norm: f64,
    pub final_cost: f64,
    /// Largest `|Δmass - ∫∫f|` seen along the run.
    pub mass_defect: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub message: Option<String>,
}

impl TrajectoryRecord {
    fn empty(verdict: Verdict) -> Self {
        Self {
            times: Vec::new(),
            norms: Vec::new(),
            costs: Vec::new(),
            amplitudes: Vec::new(),
            estimator_errors: None,
            verdict,
            decay: None,
            linear_rate: None,
            final_norm: f64::NAN,
            final_cost: 0.0,
            mass_defect: 0.0,
            accepted_steps: 0,
            rejected_steps: 0,
            message: None,
        }
    }

    /// Samples at `t >= 0`.
    pub fn controlled_window(&self) -> (Vec<f64>, Vec<f64>) {
        self.times
            .iter()
            .zip(&self.norms)
            .filter(|(t, _)| **t >= 0.0)
            .map(|(t, n)| (*t, *n))
            .unzip()
    }

    /// Fit of the estimator error over the controlled window.
    pub fn estimator_fit(&self) -> Option<LogLinearFit> {
        let errs = self.estimator_errors.as_ref()?;
        let (t, e): (Vec<f64>, Vec<f64>) = self
            .times
            .iter()
            .zip(errs)
            .filter(|(t, _)| **t >= 0.0)
            .map(|(t, e)| (*t, *e))
            .unzip();
        log_linear_fit(&t, &e, FIT_FLOOR)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: TrajectoryRecord,
    pub snapshots: Vec<Snapshot>,
    pub final_state: Option<FilmState>,
    pub controller: Option<Controller>,
}

/// Fixed-step-doubling integrator for one configuration.
pub struct Simulator {
    imex: Imex,
    grid: Grid,
    params: PhysicalParams,
    columns: Vec<Vec<f64>>,
    observers: ObserverBank,
    options: StepperOptions,
    h_bounds: (f64, f64),
}

struct Phase<'a> {
    t_end: f64,
    controller: Option<&'a mut Controller>,
}

struct Progress {
    xi: Vec<f64>,
    t: f64,
    dt: f64,
    cost: f64,
    injected: f64,
    mass0: f64,
    /// Samples are taken at `sample_index · interval`.
    sample_index: i64,
}

enum Stop {
    BlowUp(String),
}

impl Simulator {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let (act, obs) = config.banks()?;
        let model = WrModel::new(config.params, grid)?;
        let columns = (0..act.len()).map(|i| act.column(i, &grid)).collect();
        Ok(Self {
            imex: Imex::new(model).with_dealias(config.stepper.dealias),
            grid,
            params: config.params,
            columns,
            observers: obs,
            options: config.stepper,
            h_bounds: (config.h_min, config.h_max),
        })
    }

    pub fn imex(&self) -> &Imex {
        &self.imex
    }

    fn mass(&self, xi: &[f64]) -> f64 {
        let n = self.grid.n_nodes();
        xi[..n].iter().map(|v| 1.0 + v).sum::<f64>() * self.grid.dx()
    }

    fn state_cost(&self, xi: &[f64]) -> f64 {
        let n = self.grid.n_nodes();
        self.params.beta * self.grid.dx() * xi[..n].iter().map(|v| v * v).sum::<f64>()
    }

    fn observe(&self, xi: &[f64]) -> Vec<f64> {
        self.observers.nodes.iter().map(|&j| xi[j]).collect()
    }

    fn control(&self, xi: &[f64], controller: &Option<&mut Controller>) -> (Vec<f64>, ControlField) {
        match controller {
            Some(c) => {
                let eta = c.amplitudes(xi, &self.observe(xi));
                let field = ControlField::from_columns(&self.columns, &eta);
                (eta, field)
            }
            None => (Vec::new(), ControlField::zero(self.grid.n_nodes())),
        }
    }

    fn rms(&self, xi: &[f64]) -> f64 {
        let n = self.grid.n_nodes();
        (xi[..n].iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt()
    }

    /// Integrates to `phase.t_end`, calling `sample` at every sample time
    /// (and at the end) and `snapshot` at requested snapshot times.
    fn integrate(
        &self,
        progress: &mut Progress,
        mut phase: Phase<'_>,
        sample_interval: f64,
        snapshot_times: &[f64],
        record: &mut TrajectoryRecord,
        snapshots: &mut Vec<Snapshot>,
    ) -> std::result::Result<(), Stop> {
        let n = self.grid.n_nodes();
        let controlled = phase.controller.is_some();
        let mut pending: Vec<f64> = snapshot_times
            .iter()
            .copied()
            .filter(|&s| s >= progress.t && s <= phase.t_end)
            .collect();
        pending.sort_by(f64::total_cmp);
        pending.reverse();
        let time_eps = 1e-9 * sample_interval;

        loop {
            // events at the current time
            while let Some(&s) = pending.last() {
                if s > progress.t + time_eps {
                    break;
                }
                pending.pop();
                snapshots.push(self.snapshot(progress, &phase.controller));
            }
            if progress.t + time_eps >= progress.sample_index as f64 * sample_interval {
                self.sample(progress, &phase.controller, record);
                while progress.sample_index as f64 * sample_interval <= progress.t + time_eps {
                    progress.sample_index += 1;
                }
            }
            if progress.t + time_eps >= phase.t_end {
                progress.t = phase.t_end;
                return Ok(());
            }

            let mut target = phase.t_end.min(progress.sample_index as f64 * sample_interval);
            if let Some(&s) = pending.last() {
                target = target.min(s);
            }

            let (eta, field) = self.control(&progress.xi, &phase.controller);
            let (lo, hi) = progress.xi[..n]
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(1.0 + v), hi.max(1.0 + v)));
            let blocks = self.imex.blocks_for(lo, hi);

            let (dt, next) = loop {
                let dt = progress.dt.min(self.options.dt_max);
                let clipped = dt.min(target - progress.t);
                if dt < self.options.dt_min {
                    return Err(Stop::BlowUp(
                        Error::StepUnderflow { t: progress.t, dt }.to_string(),
                    ));
                }
                match self
                    .imex
                    .doubled_step(&progress.xi, &field.f, clipped, &blocks, &self.options)
                {
                    Ok((next, err)) if err <= 1.0 => {
                        let grow = if err == 0.0 { 2.0 } else { (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 2.0) };
                        // a step clipped to an event does not shrink the proposal
                        if clipped >= dt {
                            progress.dt = dt * grow;
                        }
                        break (clipped, next);
                    }
                    Ok((_, err)) => {
                        record.rejected_steps += 1;
                        let shrink = if err.is_finite() { (0.9 * err.powf(-1.0 / 3.0)).clamp(0.1, 0.5) } else { 0.1 };
                        progress.dt = clipped * shrink;
                    }
                    Err(Error::NonPositiveHeight { .. }) => {
                        record.rejected_steps += 1;
                        progress.dt = clipped * 0.1;
                    }
                    Err(e) => return Err(Stop::BlowUp(e.to_string())),
                }
            };
            record.accepted_steps += 1;

            if controlled {
                let zeta = self.observe(&progress.xi);
                let v_norm: f64 = eta.iter().map(|e| e * e).sum::<f64>() * (1.0 - self.params.beta);
                progress.cost += 0.5 * dt * (self.state_cost(&progress.xi) + self.state_cost(&next)) + dt * v_norm;
                if let Some(c) = phase.controller.as_deref_mut() {
                    c.advance_estimator(&zeta, dt).map_err(|e| Stop::BlowUp(e.to_string()))?;
                }
            }
            progress.injected += dt * field.f.iter().sum::<f64>() * self.grid.dx();
            progress.xi = next;
            progress.t = if target - progress.t <= dt { target } else { progress.t + dt };

            let defect = (self.mass(&progress.xi) - progress.mass0 - progress.injected).abs();
            record.mass_defect = record.mass_defect.max(defect);
            let (lo, hi) = self.h_bounds;
            if let Some((j, h)) = progress.xi[..n]
                .iter()
                .map(|v| 1.0 + v)
                .enumerate()
                .find(|(_, h)| !(*h >= lo && *h <= hi))
            {
                return Err(Stop::BlowUp(format!(
                    "film height {h} at node {j} left [{lo}, {hi}] at t = {}",
                    progress.t
                )));
            }
        }
    }

    fn sample(&self, progress: &Progress, controller: &Option<&mut Controller>, record: &mut TrajectoryRecord) {
        let (eta, _) = self.control(&progress.xi, controller);
        let m = self.columns.len();
        record.times.push(progress.t);
        record.norms.push(self.rms(&progress.xi));
        record.costs.push(progress.cost);
        record.amplitudes.push(if eta.is_empty() { vec![0.0; m] } else { eta });
        if let Some(errs) = record.estimator_errors.as_mut() {
            let err = controller
                .as_ref()
                .and_then(|c| c.estimated_deviation(c.estimator_state()?))
                .map(|est| {
                    let n = est.len();
                    (progress.xi[..n].iter().zip(&est).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64).sqrt()
                })
                .unwrap_or(f64::NAN);
            errs.push(err);
        }
    }

    fn snapshot(&self, progress: &Progress, controller: &Option<&mut Controller>) -> Snapshot {
        let n = self.grid.n_nodes();
        let (_, field) = self.control(&progress.xi, controller);
        Snapshot {
            t: progress.t,
            x: self.grid.nodes(),
            h: progress.xi[..n].iter().map(|v| 1.0 + v).collect(),
            f: field.f,
            estimate: controller
                .as_ref()
                .and_then(|c| c.estimated_deviation(c.estimator_state()?)),
        }
    }
}

fn classify(record: &mut TrajectoryRecord, epsilon: f64, control_time: f64) {
    let (t, norms) = record.controlled_window();
    record.decay = log_linear_fit(&t, &norms, FIT_FLOOR);
    let Some(&last) = norms.last() else {
        record.verdict = Verdict::NotStabilised;
        return;
    };
    record.final_norm = last;
    let quarter_start = control_time * 0.75;
    let (qt, qn): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(&norms)
        .filter(|(t, _)| **t >= quarter_start)
        .map(|(t, n)| (*t, *n))
        .unzip();
    let decreasing = match (qn.first(), log_linear_fit(&qt, &qn, FIT_FLOOR)) {
        (Some(&first), Some(fit)) => last < first && fit.rate > 0.0,
        (Some(&first), None) => last <= first,
        _ => false,
    };
    record.verdict = if last < epsilon && decreasing {
        Verdict::Stabilised
    } else {
        Verdict::NotStabilised
    };
}

/// Synthesises the configured controller and runs burn-in plus control.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let controller = match config.strategy {
        None => None,
        Some(strategy) => {
            let sys = config.linear_system()?;
            match synthesize(&sys, strategy, &config.synthesis_options()) {
                Ok(c) => Some(c),
                Err(e) => {
                    let mut record = TrajectoryRecord::empty(Verdict::SynthesisFailed);
                    record.message = Some(e.to_string());
                    return Ok(RunOutcome {
                        record,
                        snapshots: Vec::new(),
                        final_state: None,
                        controller: None,
                    });
                }
            }
        }
    };
    run_with(config, controller, config.initial_state()?)
}

/// Runs from `initial` at `t = -burn_in_time` with an already synthesised
/// controller (or none).
pub fn run_with(config: &RunConfig, mut controller: Option<Controller>, initial: FilmState) -> Result<RunOutcome> {
    let sim = Simulator::new(config)?;
    if initial.len() != config.n_nodes {
        return Err(Error::dim("initial state", config.n_nodes, initial.len()));
    }
    initial.validate()?;
    if let Some(c) = controller.as_mut() {
        c.reset();
    }
    let xi = initial.deviation();
    let t0 = -config.burn_in_time;
    let mut progress = Progress {
        mass0: sim.mass(&xi),
        xi,
        t: t0,
        dt: config.stepper.dt_init,
        cost: 0.0,
        injected: 0.0,
        sample_index: (t0 / config.sample_interval).ceil() as i64,
    };
    let mut record = TrajectoryRecord::empty(Verdict::NotStabilised);
    if controller.as_ref().is_some_and(|c| c.estimator_state().is_some()) {
        record.estimator_errors = Some(Vec::new());
    }
    record.linear_rate = controller.as_ref().map(|c| -c.info.closed_loop_abscissa);
    let mut snapshots = Vec::new();

    let mut outcome = Ok(());
    if config.burn_in_time > 0.0 {
        outcome = sim.integrate(
            &mut progress,
            Phase {
                t_end: 0.0,
                controller: None,
            },
            config.sample_interval,
            &config.snapshot_times,
            &mut record,
            &mut snapshots,
        );
        // the switch-on sample is retaken with the controller active
        if outcome.is_ok() && controller.is_some() && record.times.last() == Some(&0.0) {
            record.times.pop();
            record.norms.pop();
            record.costs.pop();
            record.amplitudes.pop();
            if let Some(e) = record.estimator_errors.as_mut() {
                e.pop();
            }
            progress.sample_index = 0;
            snapshots.retain(|s| s.t < 0.0);
        }
    }
    if outcome.is_ok() {
        outcome = sim.integrate(
            &mut progress,
            Phase {
                t_end: config.control_time,
                controller: controller.as_mut(),
            },
            config.sample_interval,
            &config.snapshot_times,
            &mut record,
            &mut snapshots,
        );
    }
    record.final_cost = progress.cost;
    let final_state = FilmState::from_deviation(&progress.xi, progress.t);
    match outcome {
        Ok(()) => classify(&mut record, config.epsilon, config.control_time),
        Err(Stop::BlowUp(message)) => {
            record.verdict = Verdict::BlowUp;
            record.final_norm = final_state.rms_deviation();
            record.message = Some(message);
        }
    }
    Ok(RunOutcome {
        record,
        snapshots,
        final_state: Some(final_state),
        controller,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(strategy: Option<Strategy>) -> RunConfig {
        let mut c = RunConfig::new(PhysicalParams::reference(11.29));
        c.n_nodes = 32;
        c.strategy = strategy;
        c.burn_in_time = 1.0;
        c.control_time = 1.0;
        c
    }

    #[test]
    fn flat_film_stays_flat() {
        let cfg = quick(None);
        let sim = Simulator::new(&cfg).unwrap();
        let xi = vec![0.0; 64];
        let blocks = sim.imex().blocks_for(1.0, 1.0);
        let (next, err) = sim
            .imex()
            .doubled_step(&xi, &[0.0; 32], 0.1, &blocks, &cfg.stepper)
            .unwrap();
        assert!(next.iter().all(|v| v.abs() < 1e-14));
        assert!(err < 1e-6);
    }

    #[test]
    fn perturbation_keeps_mass_and_is_seeded() {
        let grid = Grid::new(64, 30.0).unwrap();
        let p = Perturbation::default();
        let a = p.apply(&grid, 7);
        let b = p.apply(&grid, 7);
        let c = p.apply(&grid, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mass: f64 = a.h.iter().sum::<f64>() * grid.dx();
        assert!((mass - 30.0).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_exponential() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 * (-0.2 * t).exp()).collect();
        let fit = log_linear_fit(&t, &y, 1e-12).unwrap();
        assert!((fit.rate - 0.2).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn short_run_records_monotone_cost() {
        let out = run(&quick(Some(Strategy::FullState))).unwrap();
        let r = &out.record;
        assert!(r.costs.windows(2).all(|w| w[1] >= w[0]));
        assert!(r.times.first().copied() == Some(-1.0));
        assert!((r.times.last().unwrap() - 1.0).abs() < 1e-12);
        assert!(r.mass_defect < 1e-10);
        assert_eq!(r.times.iter().filter(|&&t| t == 0.0).count(), 1);
    }
}
