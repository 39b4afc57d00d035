use std::f64::consts::PI;

use filmctl::film::nusselt_state;
use filmctl::matreq;
use filmctl::{linearize, ActuatorBank, ControlField, FilmState, Grid, LinearSystem, ObserverBank, PhysicalParams, WrModel};
use num_complex::Complex64;

fn system(re: f64, n: usize) -> LinearSystem {
    let params = PhysicalParams::reference(re);
    let grid = Grid::new(n, params.length).unwrap();
    let act = ActuatorBank::new(5, 0.1, params.length).unwrap();
    let obs = ObserverBank::new(5, &grid).unwrap();
    linearize(&params, &grid, &act, &obs).unwrap()
}

/// Central-difference Jacobian of the nonlinear right-hand side at the flat film.
fn fd_jacobian(model: &WrModel, eps: f64) -> Vec<Vec<f64>> {
    let n = model.grid().n_nodes();
    let base = nusselt_state(model.grid());
    let f = vec![0.0; n];
    let mut cols = Vec::with_capacity(2 * n);
    for i in 0..2 * n {
        let eval = |sign: f64| {
            let mut s: FilmState = base.clone();
            if i < n {
                s.h[i] += sign * eps;
            } else {
                s.q[i - n] += sign * eps;
            }
            let (dh, dq) = model.rhs(&s.h, &s.q, &f).unwrap();
            [dh, dq].concat()
        };
        let (plus, minus) = (eval(1.0), eval(-1.0));
        cols.push(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * eps)).collect());
    }
    cols
}

#[test]
fn analytic_jacobian_matches_finite_differences() {
    let sys = system(11.29, 128);
    let model = WrModel::new(sys.params, sys.grid).unwrap();
    let cols = fd_jacobian(&model, 1e-6);
    let scale = sys.a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut err = 0.0f64;
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            err = err.max((sys.a[[i, j]] - v).abs());
        }
    }
    assert!(err / scale < 1e-5, "relative error {}", err / scale);
}

#[test]
fn input_matrix_matches_finite_differences() {
    let sys = system(11.29, 64);
    let model = WrModel::new(sys.params, sys.grid).unwrap();
    let n = sys.n_nodes();
    let base = nusselt_state(&sys.grid);
    let eps = 1e-6;
    for i in 0..sys.n_inputs() {
        let mut amps = vec![0.0; sys.n_inputs()];
        let mut eval = |a: f64| {
            amps[i] = a;
            let field = ControlField::from_amplitudes(&sys.actuators, &sys.grid, &amps).unwrap();
            let (dh, dq) = model.rhs(&base.h, &base.q, &field.f).unwrap();
            [dh, dq].concat()
        };
        let (plus, minus) = (eval(eps), eval(-eps));
        for r in 0..2 * n {
            let fd = (plus[r] - minus[r]) / (2.0 * eps);
            assert!((sys.b[[r, i]] - fd).abs() < 1e-7, "B[{r}, {i}]");
        }
    }
}

#[test]
fn output_matrix_samples_heights() {
    let sys = system(11.29, 64);
    for (row, &node) in sys.observers.nodes.iter().enumerate() {
        for col in 0..sys.state_dim() {
            assert_eq!(sys.c[[row, col]], if col == node { 1.0 } else { 0.0 });
        }
    }
}

fn match_spectra(a: &[Complex64], b: &[Complex64], tol: f64) {
    assert_eq!(a.len(), b.len());
    let mut used = vec![false; b.len()];
    for x in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        assert!(d < tol, "eigenvalue {x} has no partner (nearest {d})");
        used[j] = true;
    }
}

#[test]
fn blockwise_spectrum_matches_dense_eigensolver() {
    let sys = system(11.29, 64);
    let dense = matreq::eigenvalues(&sys.a).unwrap();
    let blocks = sys.eigenvalues();
    let scale = blocks.iter().fold(1.0f64, |m, l| m.max(l.norm()));
    match_spectra(&dense, &blocks, 1e-9 * scale);
}

/// Roots of the 2×2 dispersion relation written directly from the linearised
/// equations with `∂x → ik`.
fn dispersion(params: &PhysicalParams, k: f64) -> [Complex64; 2] {
    let i = Complex64::new(0.0, 1.0);
    let re = params.reynolds;
    let cot = 1.0 / params.theta.tan();
    let g = 5.0 / (2.0 * re);
    let a21 = g * (2.0 - (2.0 / 3.0) * cot * i * k - i * k.powi(3) / (3.0 * params.capillary) + 8.0 * i * k * re / 35.0);
    let a22 = g * (-1.0 - 68.0 * i * k * re / 105.0);
    let a12 = -i * k;
    let tr = a22;
    let det = -a12 * a21;
    let disc = (tr * tr - 4.0 * det).sqrt();
    [(tr + disc) / 2.0, (tr - disc) / 2.0]
}

#[test]
fn spectrum_follows_the_dispersion_relation() {
    let sys = system(11.29, 128);
    let n = sys.n_nodes() as i64;
    let mut expected = Vec::new();
    for mode in -(n / 2) + 1..n / 2 {
        let k = 2.0 * PI * mode as f64 / sys.params.length;
        expected.extend(dispersion(&sys.params, k));
    }
    // the Nyquist bin carries no odd derivative
    let mut actual = sys.eigenvalues();
    let nyq = sys.blocks()[(n / 2) as usize];
    let nyq_eigs = filmctl::linsys::block_eigenvalues(&nyq);
    for l in nyq_eigs {
        let pos = actual.iter().position(|x| (x - l).norm() < 1e-14).unwrap();
        actual.remove(pos);
    }
    let scale = expected.iter().fold(1.0f64, |m, l| m.max(l.norm()));
    match_spectra(&actual, &expected, 1e-10 * scale);
}

#[test]
fn unstable_dimension_grows_with_reynolds_number() {
    assert_eq!(system(11.29, 128).unstable_dimension(), 8);
    assert_eq!(system(11.29, 64).unstable_dimension(), 8);
    assert_eq!(system(0.3, 64).unstable_dimension(), 0);
    let dims: Vec<usize> = [2.0, 5.0, 11.29, 30.0].iter().map(|&re| system(re, 64).unstable_dimension()).collect();
    assert!(dims.windows(2).all(|w| w[0] <= w[1]), "{dims:?}");
}

#[test]
fn design_basis_is_orthonormal_and_real() {
    let sys = system(11.29, 64);
    let t = &sys.basis;
    assert_eq!(t.shape(), &[128, 127]);
    let gram = t.t().dot(t);
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let e = if i == j { 1.0 } else { 0.0 };
            assert!((gram[[i, j]] - e).abs() < 1e-12);
        }
    }
    let red = sys.reduced();
    let lifted = sys.lift_gain(&sys.restrict_gain(&sys.b.t().to_owned()));
    assert_eq!(lifted.shape(), &[5, 128]);
    assert_eq!(red.a.shape(), &[127, 127]);
}
