//! Continuous-time matrix equations: Lyapunov, algebraic Riccati, the LQR
//! gain, and the optimal static output feedback conditions
//!
//! ```text
//! 0 = A_cᵀ Q + Q A_c + U + Cᵀ Kᵀ V K C
//! 0 = A_c S + S A_cᵀ + I
//! 0 = V K C S Cᵀ + Bᵀ Q S Cᵀ,        A_c = A + B K C.
//! ```
//!
//! Dense real Schur forms come from LAPACK (`dgees`) and triangular
//! Sylvester solves from `dtrsyl`; everything built on top of them lives here.

use std::os::raw::{c_char, c_int};

use ndarray::{s, Array2, ShapeBuilder};
use ndarray_linalg::{Eig, Inverse};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest spectral abscissa accepted as stable.
pub const HURWITZ_MARGIN: f64 = -1e-10;

pub const LYAPUNOV_TOL: f64 = 1e-10;
pub const CARE_TOL: f64 = 1e-9;
pub const SOF_TOL: f64 = 1e-8;

/// Relative slack on the SOF cost-decrease test.
const COST_NOISE: f64 = 1e-10;

/// Longest step tried beyond the fixed-point candidate.
const MAX_EXTRAPOLATION: f64 = 4.0;

fn col_major(a: &Array2<f64>) -> Vec<f64> {
    a.t().iter().copied().collect()
}

fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols).f(), data)
        .expect("buffer sized by caller")
        .as_standard_layout()
        .to_owned()
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn inner(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn symmetrize(a: &Array2<f64>) -> Array2<f64> {
    (a + &a.t()) * 0.5
}

fn check_square(context: &'static str, a: &Array2<f64>) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::dim(context, "square matrix", format!("{}×{}", a.nrows(), a.ncols())));
    }
    Ok(a.nrows())
}

fn check_shape(context: &'static str, a: &Array2<f64>, rows: usize, cols: usize) -> Result<()> {
    if a.dim() != (rows, cols) {
        return Err(Error::dim(
            context,
            format!("{rows}×{cols}"),
            format!("{}×{}", a.nrows(), a.ncols()),
        ));
    }
    Ok(())
}

/// Real Schur form `a = z t zᵀ`.
#[derive(Debug, Clone)]
pub struct RealSchur {
    pub z: Array2<f64>,
    pub t: Array2<f64>,
    pub eigenvalues: Vec<Complex64>,
    /// Number of leading eigenvalues selected by an ordering request.
    pub selected: usize,
}

unsafe extern "C" fn select_open_left_half_plane(wr: *const f64, _wi: *const f64) -> c_int {
    (*wr < 0.0) as c_int
}

fn dgees(a: &Array2<f64>, stable_first: bool) -> Result<RealSchur> {
    let n = check_square("schur", a)?;
    if n == 0 {
        return Ok(RealSchur {
            z: Array2::zeros((0, 0)),
            t: Array2::zeros((0, 0)),
            eigenvalues: Vec::new(),
            selected: 0,
        });
    }
    let mut t = col_major(a);
    let mut z = vec![0.0; n * n];
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut bwork = vec![0 as c_int; n];
    let mut sdim: c_int = 0;
    let mut info: c_int = 0;
    let nn = n as c_int;
    let jobvs = b'V' as c_char;
    let sort = if stable_first { b'S' } else { b'N' } as c_char;
    let select: lapack_sys::LAPACK_D_SELECT2 = Some(select_open_left_half_plane);

    let mut query = 0.0;
    let mut lwork: c_int = -1;
    // SAFETY: every buffer has the length LAPACK documents for an n×n problem.
    unsafe {
        lapack_sys::dgees_(
            &jobvs, &sort, select, &nn, t.as_mut_ptr(), &nn, &mut sdim, wr.as_mut_ptr(),
            wi.as_mut_ptr(), z.as_mut_ptr(), &nn, &mut query, &lwork, bwork.as_mut_ptr(), &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "dgees", info });
    }
    lwork = (query as c_int).max(3 * nn);
    let mut work = vec![0.0; lwork as usize];
    unsafe {
        lapack_sys::dgees_(
            &jobvs, &sort, select, &nn, t.as_mut_ptr(), &nn, &mut sdim, wr.as_mut_ptr(),
            wi.as_mut_ptr(), z.as_mut_ptr(), &nn, work.as_mut_ptr(), &lwork, bwork.as_mut_ptr(),
            &mut info,
        );
    }
    // info = n + 2 flags a reordering that changed eigenvalues slightly; the
    // caller validates the result through residuals.
    if info != 0 && info != nn + 2 {
        return Err(Error::Lapack { routine: "dgees", info });
    }
    Ok(RealSchur {
        z: from_col_major(n, n, z),
        t: from_col_major(n, n, t),
        eigenvalues: wr.into_iter().zip(wi).map(|(r, i)| Complex64::new(r, i)).collect(),
        selected: sdim as usize,
    })
}

impl RealSchur {
    pub fn new(a: &Array2<f64>) -> Result<Self> {
        dgees(a, false)
    }

    /// Schur form with all open-left-half-plane eigenvalues leading.
    pub fn stable_first(a: &Array2<f64>) -> Result<Self> {
        dgees(a, true)
    }

    pub fn spectral_abscissa(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_hurwitz(&self) -> bool {
        self.spectral_abscissa() < HURWITZ_MARGIN
    }

    /// Solves `t y + isgn·y tᵀ = f` (or the transposed variant) in place.
    fn trsyl(&self, transposed: bool, f: &Array2<f64>) -> Result<Array2<f64>> {
        let n = self.t.nrows();
        let t = col_major(&self.t);
        let mut c = col_major(f);
        let (ta, tb) = if transposed { (b'T', b'N') } else { (b'N', b'T') };
        let (ta, tb) = (ta as c_char, tb as c_char);
        let nn = n as c_int;
        let isgn: c_int = 1;
        let mut scale = 1.0;
        let mut info: c_int = 0;
        // SAFETY: t and c are n×n column-major buffers.
        unsafe {
            lapack_sys::dtrsyl_(
                &ta, &tb, &isgn, &nn, &nn, t.as_ptr(), &nn, t.as_ptr(), &nn, c.as_mut_ptr(), &nn,
                &mut scale, &mut info,
            );
        }
        if info < 0 {
            return Err(Error::Lapack { routine: "dtrsyl", info });
        }
        let mut y = from_col_major(n, n, c);
        if scale != 1.0 {
            y /= scale;
        }
        Ok(y)
    }

    /// `a s + s aᵀ + w = 0`.
    pub fn lyapunov(&self, w: &Array2<f64>) -> Result<Array2<f64>> {
        let f = -self.z.t().dot(w).dot(&self.z);
        let y = self.trsyl(false, &f)?;
        Ok(symmetrize(&self.z.dot(&y).dot(&self.z.t())))
    }

    /// `aᵀ q + q a + w = 0`.
    pub fn lyapunov_adjoint(&self, w: &Array2<f64>) -> Result<Array2<f64>> {
        let f = -self.z.t().dot(w).dot(&self.z);
        let y = self.trsyl(true, &f)?;
        Ok(symmetrize(&self.z.dot(&y).dot(&self.z.t())))
    }
}

/// Eigenvalues of a general real matrix.
pub fn eigenvalues(a: &Array2<f64>) -> Result<Vec<Complex64>> {
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let (vals, _) = a.eig()?;
    Ok(vals.to_vec())
}

pub fn spectral_abscissa(a: &Array2<f64>) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max))
}

pub fn is_hurwitz(a: &Array2<f64>) -> Result<bool> {
    Ok(spectral_abscissa(a)? < HURWITZ_MARGIN)
}

/// `‖a s + s aᵀ + w‖_F`.
pub fn lyapunov_residual(a: &Array2<f64>, s: &Array2<f64>, w: &Array2<f64>) -> f64 {
    frobenius(&(a.dot(s) + s.dot(&a.t()) + w))
}

/// Solves `a s + s aᵀ + w = 0` for a Hurwitz `a` by Bartels–Stewart, with
/// a few steps of iterative refinement on the residual.
pub fn solve_lyapunov(a: &Array2<f64>, w: &Array2<f64>) -> Result<Array2<f64>> {
    let n = check_square("lyapunov a", a)?;
    check_shape("lyapunov w", w, n, n)?;
    let schur = RealSchur::new(a)?;
    if !schur.is_hurwitz() {
        return Err(Error::NotHurwitz {
            abscissa: schur.spectral_abscissa(),
        });
    }
    let mut s = schur.lyapunov(w)?;
    let mut res = lyapunov_residual(a, &s, w);
    for _ in 0..3 {
        if res <= 1e-3 * LYAPUNOV_TOL {
            break;
        }
        let r = a.dot(&s) + s.dot(&a.t()) + w;
        let next = &s + &schur.lyapunov(&r)?;
        let next_res = lyapunov_residual(a, &next, w);
        if next_res >= res {
            break;
        }
        s = next;
        res = next_res;
    }
    Ok(s)
}

/// `‖aᵀ q + q a - q b v⁻¹ bᵀ q + u‖_F`.
pub fn care_residual(a: &Array2<f64>, b: &Array2<f64>, u: &Array2<f64>, v: &Array2<f64>, q: &Array2<f64>) -> Result<f64> {
    let g = b.dot(&v.inv()?).dot(&b.t());
    Ok(frobenius(&(a.t().dot(q) + q.dot(a) - q.dot(&g).dot(q) + u)))
}

fn validate_care(a: &Array2<f64>, b: &Array2<f64>, u: &Array2<f64>, v: &Array2<f64>) -> Result<(usize, usize)> {
    let n = check_square("care a", a)?;
    if b.nrows() != n {
        return Err(Error::dim("care b rows", n, b.nrows()));
    }
    let m = b.ncols();
    check_shape("care u", u, n, n)?;
    check_shape("care v", v, m, m)?;
    Ok((n, m))
}

/// Stabilising solution of `aᵀ q + q a - q b v⁻¹ bᵀ q + u = 0`.
///
/// The stable invariant subspace of the Hamiltonian matrix is extracted from
/// an ordered real Schur form, followed by Newton (Kleinman) correction steps
/// while they keep lowering the residual.
pub fn solve_care(a: &Array2<f64>, b: &Array2<f64>, u: &Array2<f64>, v: &Array2<f64>) -> Result<Array2<f64>> {
    let (n, _) = validate_care(a, b, u, v)?;
    let v_inv = v
        .inv()
        .map_err(|_| Error::Synthesis("control weight v is singular".into()))?;
    let g = symmetrize(&b.dot(&v_inv).dot(&b.t()));

    let mut ham = Array2::zeros((2 * n, 2 * n));
    ham.slice_mut(s![..n, ..n]).assign(a);
    ham.slice_mut(s![..n, n..]).assign(&(-&g));
    ham.slice_mut(s![n.., ..n]).assign(&(-u));
    ham.slice_mut(s![n.., n..]).assign(&(-&a.t()));
    let schur = RealSchur::stable_first(&ham)?;
    if schur.selected != n {
        return Err(Error::Synthesis(format!(
            "Hamiltonian has {} stable eigenvalues, expected {n}; (a, b) is not stabilisable",
            schur.selected
        )));
    }
    let z11 = schur.z.slice(s![..n, ..n]).to_owned();
    let z21 = schur.z.slice(s![n.., ..n]).to_owned();
    let z11_inv = z11
        .inv()
        .map_err(|_| Error::Synthesis("stable subspace is not a graph; (a, b) is not stabilisable".into()))?;
    let mut q = symmetrize(&z21.dot(&z11_inv));

    let residual = |q: &Array2<f64>| frobenius(&(a.t().dot(q) + q.dot(a) - q.dot(&g).dot(q) + u));
    let mut best = residual(&q);
    let target = 1e-3 * CARE_TOL * frobenius(u).max(f64::MIN_POSITIVE);
    for _ in 0..4 {
        if best <= target {
            break;
        }
        let closed = a - &g.dot(&q);
        let schur = match RealSchur::new(&closed) {
            Ok(s) if s.is_hurwitz() => s,
            _ => break,
        };
        let w = u + &q.dot(&g).dot(&q);
        let next = match schur.lyapunov_adjoint(&w) {
            Ok(next) => next,
            Err(_) => break,
        };
        let r = residual(&next);
        if r < best {
            best = r;
            q = next;
        } else {
            break;
        }
    }

    let abscissa = spectral_abscissa(&(a - &g.dot(&q)))?;
    if abscissa >= HURWITZ_MARGIN {
        return Err(Error::Synthesis(format!(
            "closed loop a - b v⁻¹ bᵀ q is not Hurwitz (abscissa {abscissa:e}); (a, b) is not stabilisable"
        )));
    }
    Ok(q)
}

/// LQR gain `k = -v⁻¹ bᵀ q`, so that the closed loop is `a + b k`.
pub fn lqr_gain(a: &Array2<f64>, b: &Array2<f64>, u: &Array2<f64>, v: &Array2<f64>) -> Result<Array2<f64>> {
    let q = solve_care(a, b, u, v)?;
    Ok(-v.inv()?.dot(&b.t()).dot(&q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SofOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub min_step: f64,
}

impl Default for SofOptions {
    fn default() -> Self {
        Self {
            tolerance: SOF_TOL,
            max_iterations: 500,
            min_step: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SofSolution {
    pub k: Array2<f64>,
    pub q: Array2<f64>,
    pub s: Array2<f64>,
    /// Largest of the three condition residuals (Frobenius norms).
    pub residual: f64,
    pub residuals: [f64; 3],
    pub iterations: usize,
    pub converged: bool,
    /// `trace(q)`, the quadratic cost for unit initial covariance.
    pub cost: f64,
    pub spectral_abscissa: f64,
}

/// Residuals of the three optimality conditions at gain `k`.
pub fn sof_residuals(
    a: &Array2<f64>,
    b: &Array2<f64>,
    c: &Array2<f64>,
    u: &Array2<f64>,
    v: &Array2<f64>,
    k: &Array2<f64>,
    q: &Array2<f64>,
    s: &Array2<f64>,
) -> [f64; 3] {
    let kc = k.dot(c);
    let ac = a + &b.dot(&kc);
    let w = u + &kc.t().dot(v).dot(&kc);
    let r1 = frobenius(&(ac.t().dot(q) + q.dot(&ac) + &w));
    let r2 = lyapunov_residual(&ac, s, &Array2::eye(a.nrows()));
    let r3 = frobenius(&sof_gradient_half(b, c, v, k, q, s));
    [r1, r2, r3]
}

/// `V K C S Cᵀ + Bᵀ Q S Cᵀ`, half the gradient of `trace(Q)` in `K`.
pub fn sof_gradient_half(
    b: &Array2<f64>,
    c: &Array2<f64>,
    v: &Array2<f64>,
    k: &Array2<f64>,
    q: &Array2<f64>,
    s: &Array2<f64>,
) -> Array2<f64> {
    let sct = s.dot(&c.t());
    v.dot(k).dot(&c.dot(&sct)) + b.t().dot(q).dot(&sct)
}

/// Cost `trace(Q)` and the Lyapunov pair for gain `k`, or `None` if the
/// closed loop is not Hurwitz.
struct Evaluation {
    q: Array2<f64>,
    s: Array2<f64>,
    cost: f64,
    abscissa: f64,
}

fn evaluate(a: &Array2<f64>, b: &Array2<f64>, c: &Array2<f64>, u: &Array2<f64>, v: &Array2<f64>, k: &Array2<f64>) -> Result<Option<Evaluation>> {
    let kc = k.dot(c);
    let ac = a + &b.dot(&kc);
    let schur = RealSchur::new(&ac)?;
    if !schur.is_hurwitz() {
        return Ok(None);
    }
    let w = u + &kc.t().dot(v).dot(&kc);
    let q = schur.lyapunov_adjoint(&w)?;
    let s = schur.lyapunov(&Array2::eye(a.nrows()))?;
    let cost = q.diag().sum();
    Ok(Some(Evaluation {
        q,
        s,
        cost,
        abscissa: schur.spectral_abscissa(),
    }))
}

/// One step of iterative refinement on both Lyapunov solutions.
fn refine_lyapunov_pair(
    a: &Array2<f64>,
    b: &Array2<f64>,
    c: &Array2<f64>,
    u: &Array2<f64>,
    v: &Array2<f64>,
    k: &Array2<f64>,
    eval: &mut Evaluation,
) -> Result<()> {
    let kc = k.dot(c);
    let ac = a + &b.dot(&kc);
    let schur = RealSchur::new(&ac)?;
    let w = u + &kc.t().dot(v).dot(&kc);
    let rq = ac.t().dot(&eval.q) + eval.q.dot(&ac) + &w;
    let rs = ac.dot(&eval.s) + eval.s.dot(&ac.t()) + Array2::<f64>::eye(a.nrows());
    let q = &eval.q + &schur.lyapunov_adjoint(&rq)?;
    let s = &eval.s + &schur.lyapunov(&rs)?;
    let w_eye = Array2::<f64>::eye(a.nrows());
    if frobenius(&(ac.t().dot(&q) + q.dot(&ac) + &w)) < frobenius(&rq) {
        eval.q = q;
    }
    if lyapunov_residual(&ac, &s, &w_eye) < frobenius(&rs) {
        eval.s = s;
    }
    eval.cost = eval.q.diag().sum();
    Ok(())
}

/// Least-squares projection of a full-state gain onto the outputs:
/// the `k` minimising `‖k c - k_full‖_F`.
pub fn project_gain(k_full: &Array2<f64>, c: &Array2<f64>) -> Result<Array2<f64>> {
    let cct = c.dot(&c.t());
    let inv = cct.inv().map_err(|_| Error::SingularObservation)?;
    Ok(k_full.dot(&c.t()).dot(&inv))
}

/// Searches for a gain making `a + b k c` Hurwitz by continuation on a
/// spectral shift: `k = 0` stabilises `a - σI` for `σ` beyond the open-loop
/// abscissa, and each stage minimises the output-feedback cost for the
/// shifted plant, then moves `σ` down to just above the abscissa reached.
pub fn stabilising_output_gain(
    a: &Array2<f64>,
    b: &Array2<f64>,
    c: &Array2<f64>,
    u: &Array2<f64>,
    v: &Array2<f64>,
) -> Result<Array2<f64>> {
    let n = check_square("sof a", a)?;
    let eye = Array2::<f64>::eye(n);
    let open = spectral_abscissa(a)?;
    let mut k = Array2::zeros((b.ncols(), c.nrows()));
    if open < HURWITZ_MARGIN {
        return Ok(k);
    }
    let stage = SofOptions {
        tolerance: 1e-6,
        max_iterations: 60,
        min_step: 1e-6,
    };
    let mut sigma = open + 0.05 * open.abs().max(1e-2);
    let mut previous = f64::INFINITY;
    let mut stalled = 0;
    for _ in 0..60 {
        let shifted = a - &(&eye * sigma);
        let (sol, _) = sof_iterate(&shifted, b, c, u, v, Some(&k), &stage)?;
        k = sol.k;
        let alpha = sol.spectral_abscissa + sigma;
        if alpha < HURWITZ_MARGIN {
            return Ok(k);
        }
        // the reachable abscissa has levelled off above zero
        stalled = if previous - alpha < 0.02 * alpha.abs() { stalled + 1 } else { 0 };
        if stalled >= 2 {
            break;
        }
        previous = alpha;
        let next = alpha + 0.1 * (sigma - alpha);
        if sigma - next < 1e-6 * sigma.abs().max(1e-3) {
            break;
        }
        sigma = next;
    }
    Err(Error::SofFailToStart(format!(
        "shift continuation could not push the closed-loop abscissa below zero (σ = {sigma:.3e})"
    )))
}

/// Damped fixed-point iteration for the optimal static output feedback gain.
///
/// Each step solves both Lyapunov conditions for the current gain, forms the
/// stationary candidate `K* = -V⁻¹ Bᵀ Q S Cᵀ (C S Cᵀ)⁻¹`, and moves towards it
/// by the largest step `γ ∈ {1, ½, ¼, …}` that keeps `A + BKC` Hurwitz and
/// does not raise the cost.
pub fn solve_sof(
    a: &Array2<f64>,
    b: &Array2<f64>,
    c: &Array2<f64>,
    u: &Array2<f64>,
    v: &Array2<f64>,
    k0: Option<&Array2<f64>>,
    options: &SofOptions,
) -> Result<SofSolution> {
    match sof_iterate(a, b, c, u, v, k0, options)? {
        (sol, None) => Ok(sol),
        (_, Some(err)) => Err(err),
    }
}

/// The SOF iteration, returning the last stabilising iterate together with
/// the reason it stopped early, if any.
fn sof_iterate(
    a: &Array2<f64>,
    b: &Array2<f64>,
    c: &Array2<f64>,
    u: &Array2<f64>,
    v: &Array2<f64>,
    k0: Option<&Array2<f64>>,
    options: &SofOptions,
) -> Result<(SofSolution, Option<Error>)> {
    let (n, m) = validate_care(a, b, u, v)?;
    if c.ncols() != n {
        return Err(Error::dim("sof c columns", n, c.ncols()));
    }
    let p = c.nrows();
    let v_inv = v
        .inv()
        .map_err(|_| Error::SofFailToStart("control weight v is singular".into()))?;

    let mut k = match k0 {
        Some(k0) => {
            check_shape("sof initial gain", k0, m, p)?;
            k0.clone()
        }
        None => {
            let k_full = lqr_gain(a, b, u, v)
                .map_err(|e| Error::SofFailToStart(format!("no full-state gain to project: {e}")))?;
            project_gain(&k_full, c)?
        }
    };
    let mut current = evaluate(a, b, c, u, v, &k)?.ok_or_else(|| {
        Error::SofFailToStart("initial gain does not stabilise A + BKC".into())
    })?;

    let mut iterations = 0;
    let failure = loop {
        let grad = sof_gradient_half(b, c, v, &k, &current.q, &current.s);
        let r3 = frobenius(&grad);
        if r3 < options.tolerance {
            break None;
        }
        if iterations >= options.max_iterations {
            break Some(Error::SofFailToConverge {
                iterations,
                residual: r3,
                reason: "iteration cap reached".into(),
            });
        }
        iterations += 1;

        let sct = current.s.dot(&c.t());
        let csct = symmetrize(&c.dot(&sct));
        let csct_inv = match csct.inv() {
            Ok(inv) if inv.iter().all(|x| x.is_finite()) => inv,
            _ => break Some(Error::SingularObservation),
        };
        let k_star = -v_inv.dot(&b.t()).dot(&current.q).dot(&sct).dot(&csct_inv);
        let direction = &k_star - &k;
        let slope = inner(&grad, &direction);
        if !(slope < 0.0) {
            break Some(Error::SofFailToConverge {
                iterations,
                residual: r3,
                reason: "update is not a descent direction".into(),
            });
        }

        // largest γ ∈ {1, ½, ¼, …} keeping the loop Hurwitz without raising the cost
        let mut gamma = 1.0;
        let mut accepted = None;
        while gamma >= options.min_step {
            let trial = &k + &(&direction * gamma);
            if let Some(eval) = evaluate(a, b, c, u, v, &trial)? {
                // allow for rounding in trace(q) once the decrease is tiny
                if eval.cost <= current.cost * (1.0 + COST_NOISE) {
                    accepted = Some((gamma, trial, eval));
                    break;
                }
            }
            gamma *= 0.5;
        }
        let Some((gamma, mut trial, mut eval)) = accepted else {
            break Some(Error::SofFailToConverge {
                iterations,
                residual: r3,
                reason: "step length underflow".into(),
            });
        };

        // secant step on the directional derivative, which stays accurate
        // where cost differences are lost to rounding
        let end_slope = inner(&sof_gradient_half(b, c, v, &trial, &eval.q, &eval.s), &direction);
        let secant = gamma * slope / (slope - end_slope);
        let refine = if end_slope > 0.0 {
            Some(secant)
        } else if gamma == 1.0 && end_slope < 0.0 {
            Some(secant.min(MAX_EXTRAPOLATION))
        } else {
            None
        };
        if let Some(g) = refine.filter(|g| g.is_finite() && *g > 0.0) {
            let candidate = &k + &(&direction * g);
            if let Some(better) = evaluate(a, b, c, u, v, &candidate)? {
                if better.cost <= eval.cost * (1.0 + COST_NOISE) {
                    trial = candidate;
                    eval = better;
                }
            }
        }
        k = trial;
        current = eval;
    };

    if failure.is_none() {
        refine_lyapunov_pair(a, b, c, u, v, &k, &mut current)?;
    }
    let residuals = sof_residuals(a, b, c, u, v, &k, &current.q, &current.s);
    let residual = residuals.iter().copied().fold(0.0, f64::max);
    let sol = SofSolution {
        k,
        q: current.q,
        s: current.s,
        residual,
        residuals,
        iterations,
        converged: failure.is_none() && residual < options.tolerance,
        cost: current.cost,
        spectral_abscissa: current.abscissa,
    };
    Ok((sol, failure))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn scalar_lyapunov() {
        let s = solve_lyapunov(&array![[-1.0]], &array![[1.0]]).unwrap();
        assert!((s[[0, 0]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn diagonal_lyapunov() {
        let a = -Array2::<f64>::eye(2);
        let s = solve_lyapunov(&a, &Array2::eye(2)).unwrap();
        assert!((&s - &(Array2::<f64>::eye(2) * 0.5)).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        assert!(matches!(
            solve_lyapunov(&array![[0.5]], &array![[1.0]]),
            Err(Error::NotHurwitz { .. })
        ));
    }

    #[test]
    fn adjoint_lyapunov_matches_transpose() {
        let a = array![[-1.0, 2.0, 0.0], [0.0, -3.0, 1.0], [0.5, 0.0, -2.0]];
        let w = array![[2.0, 0.1, 0.0], [0.1, 1.0, 0.3], [0.0, 0.3, 1.5]];
        let schur = RealSchur::new(&a).unwrap();
        let q = schur.lyapunov_adjoint(&w).unwrap();
        assert!(lyapunov_residual(&a.t().to_owned(), &q, &w) < 1e-13);
    }

    #[test]
    fn scalar_care_and_gain() {
        let (a, b, u, v) = (array![[-1.0]], array![[1.0]], array![[1.0]], array![[1.0]]);
        let q = solve_care(&a, &b, &u, &v).unwrap();
        assert!((q[[0, 0]] - (2f64.sqrt() - 1.0)).abs() < 1e-12);
        let k = lqr_gain(&a, &b, &u, &v).unwrap();
        assert!((k[[0, 0]] + (2f64.sqrt() - 1.0)).abs() < 1e-12);
        assert!((a[[0, 0]] + k[[0, 0]] + 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn care_without_state_cost_on_stable_plant_is_zero() {
        let a = array![[-1.0, 1.0], [0.0, -2.0]];
        let b = array![[1.0], [1.0]];
        let q = solve_care(&a, &b, &Array2::zeros((2, 2)), &array![[1.0]]).unwrap();
        assert!(q.iter().all(|v| v.abs() < 1e-14));
        let k = lqr_gain(&a, &b, &Array2::zeros((2, 2)), &array![[1.0]]).unwrap();
        assert!(k.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn care_rejects_unstabilisable_pair() {
        let a = array![[1.0, 0.0], [0.0, -1.0]];
        let b = array![[0.0], [1.0]];
        assert!(solve_care(&a, &b, &Array2::eye(2), &array![[1.0]]).is_err());
    }

    #[test]
    fn scalar_sof_with_scaled_output() {
        let (a, b, u, v, c) = (array![[-1.0]], array![[1.0]], array![[1.0]], array![[1.0]], array![[2.0]]);
        let sol = solve_sof(&a, &b, &c, &u, &v, None, &SofOptions::default()).unwrap();
        assert!(sol.converged);
        assert!((sol.k[[0, 0]] + (2f64.sqrt() - 1.0) / 2.0).abs() < 1e-10);
        // from a different start as well
        let sol = solve_sof(&a, &b, &c, &u, &v, Some(&array![[0.2]]), &SofOptions::default()).unwrap();
        assert!((sol.k[[0, 0]] + (2f64.sqrt() - 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn sof_fails_to_start_on_unstabilisable_output_structure() {
        // four unstable real poles, one input and one output: the transfer
        // function has its zeros interlaced between the poles in the right
        // half plane, so no scalar gain stabilises it.
        let a = Array2::from_diag(&ndarray::arr1(&[1.0, 2.0, 3.0, 4.0]));
        let b = Array2::ones((4, 1));
        let c = Array2::ones((1, 4));
        let res = solve_sof(&a, &b, &c, &Array2::eye(4), &array![[1.0]], None, &SofOptions::default());
        assert!(matches!(
            res,
            Err(Error::SofFailToStart(_)) | Err(Error::SofFailToConverge { .. })
        ));
    }
}
