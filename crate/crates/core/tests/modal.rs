use filmctl::matreq::{eigenvalues, frobenius};
use filmctl::modal::{modal_decompose, ranked_modes};
use filmctl::synth::{synth_luenberger, synthesize, SynthesisOptions};
use filmctl::{linearize, ActuatorBank, Grid, LinearSystem, ObserverBank, PhysicalParams, Strategy};
use ndarray::Array2;
use num_complex::Complex64;

fn system(re: f64, n: usize, m: usize, p: usize) -> LinearSystem {
    let params = PhysicalParams::reference(re);
    let grid = Grid::new(n, params.length).unwrap();
    let act = ActuatorBank::new(m, 0.1, params.length).unwrap();
    let obs = ObserverBank::new(p, &grid).unwrap();
    linearize(&params, &grid, &act, &obs).unwrap()
}

fn assert_same_spectrum(a: &[Complex64], b: &[Complex64], tol: f64) {
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
        assert!(d < tol, "{x} unmatched (nearest {d})");
        used[j] = true;
    }
}

#[test]
fn full_retention_separates_regulator_and_observer() {
    let sys = system(11.29, 16, 9, 9);
    let all: usize = ranked_modes(&sys.blocks()).iter().map(|m| m.dimension).sum();
    assert_eq!(all, 31);
    let modes = modal_decompose(&sys, all).unwrap();
    let ctrl = synth_luenberger(&sys, &modes).unwrap();
    let filmctl::synth::ControlLaw::Luenberger { k_tilde, l, sampling, .. } = &ctrl.law else {
        panic!("expected an observer law");
    };
    let mut expected = eigenvalues(&(&modes.a + &modes.b.dot(k_tilde))).unwrap();
    expected.extend(eigenvalues(&(&modes.a - &l.dot(sampling))).unwrap());
    let coupled = eigenvalues(&ctrl.closed_loop_matrix(&sys)).unwrap();
    let scale = expected.iter().fold(1.0f64, |m, l| m.max(l.norm()));
    assert_same_spectrum(&coupled, &expected, 1e-7 * scale);
}

#[test]
fn restriction_inverts_prolongation() {
    let sys = system(11.29, 64, 5, 5);
    let modes = modal_decompose(&sys, 9).unwrap();
    let r = modes.dimension();
    let rp = modes.restriction.dot(&modes.prolongation);
    assert!(frobenius(&(&rp - &Array2::<f64>::eye(r))) < 1e-10);
    let z: Vec<f64> = (0..r).map(|i| (i as f64 * 0.7).sin()).collect();
    let back = modes.restrict(&modes.prolong(&z));
    assert!(z.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn retained_subspace_is_invariant() {
    let sys = system(11.29, 64, 5, 5);
    let modes = modal_decompose(&sys, 9).unwrap();
    let lhs = sys.a.dot(&modes.prolongation);
    let rhs = modes.prolongation.dot(&modes.a);
    assert!(frobenius(&(&lhs - &rhs)) < 1e-10 * frobenius(&lhs));
    let mut retained = eigenvalues(&modes.a).unwrap();
    let mut leading = sys.eigenvalues();
    leading.sort_by(|a, b| b.re.total_cmp(&a.re));
    retained.sort_by(|a, b| b.re.total_cmp(&a.re));
    for (x, y) in retained.iter().zip(&leading) {
        assert!((x.re - y.re).abs() < 1e-10);
    }
}

#[test]
fn default_retention_covers_the_unstable_modes() {
    let sys = system(11.29, 64, 5, 5);
    let ctrl = synthesize(&sys, Strategy::Luenberger, &SynthesisOptions::default()).unwrap();
    assert_eq!(ctrl.info.retained_dimension, Some(9));
    assert_eq!(ctrl.info.unstable_dimension, 8);
    assert!(ctrl.info.regulator_abscissa.unwrap() < 0.0);
    assert!(ctrl.info.observer_abscissa.unwrap() < 0.0);
    assert!(ctrl.info.closed_loop_abscissa < 0.0);

    let too_few = SynthesisOptions {
        retain: Some(7),
        ..SynthesisOptions::default()
    };
    assert!(synthesize(&sys, Strategy::Luenberger, &too_few).is_err());
}

#[test]
fn conjugate_pairs_are_kept_whole() {
    let sys = system(11.29, 64, 5, 5);
    let modes = modal_decompose(&sys, 8).unwrap();
    assert_eq!(modes.dimension(), 8);
    let modes = modal_decompose(&sys, 10).unwrap();
    assert!(modes.dimension() == 10 || modes.dimension() == 11);
    assert_eq!(modes.dimension(), modes.modes.iter().map(|m| m.dimension).sum::<usize>());
}
