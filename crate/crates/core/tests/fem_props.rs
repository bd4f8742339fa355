use std::f64::consts::PI;

use approx::assert_relative_eq;
use hotspot_core::analysis;
use hotspot_core::fem::{self, EigenOptions, Method, Preconditioner};
use hotspot_core::geometry::{self, DomainSpec, TestFunctionKind};
use hotspot_core::mesh::Mesh;
use hotspot_core::pipeline::{self, RunConfig};
use proptest::prelude::*;

fn opts(k: usize) -> EigenOptions {
    EigenOptions { k, ..Default::default() }
}

/// Neumann spectrum of the unit square, `π²(m² + n²)`, ascending.
fn square_spectrum(count: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..8).flat_map(|m| (0..8).map(move |n| PI * PI * (m * m + n * n) as f64)).collect();
    v.sort_by(f64::total_cmp);
    v.truncate(count);
    v
}

#[test]
fn unit_square_spectrum_at_h_1_64() {
    let mesh = Mesh::rectangle(1.0, 1.0, 64, 64).unwrap();
    let (k, m) = fem::assemble(&mesh).unwrap();
    let eigs = fem::smallest_eigenpairs(&k, &m, &opts(6)).unwrap();
    let exact = square_spectrum(6);
    for j in 1..6 {
        let rel = (eigs[j].value - exact[j]).abs() / exact[j];
        assert!(rel < 0.01, "μ{} = {} vs {}", j + 1, eigs[j].value, exact[j]);
    }
    assert!(eigs[0].value.abs() <= 1e-10 * eigs[1].value);
}

#[test]
fn lobpcg_paths_satisfy_the_same_contract() {
    let mesh = Mesh::rectangle(2.0, 1.0, 24, 12).unwrap();
    let (k, m) = fem::assemble(&mesh).unwrap();
    let reference = fem::smallest_eigenpairs(&k, &m, &opts(5)).unwrap();
    for pre in [Preconditioner::Jacobi, Preconditioner::ShiftInvert] {
        let o = EigenOptions { method: Method::Lobpcg(pre), max_iter: 20_000, ..opts(5) };
        let eigs = fem::smallest_eigenpairs(&k, &m, &o).unwrap();
        for (a, b) in eigs.iter().zip(&reference) {
            assert!(a.residual <= o.tol);
            assert_relative_eq!(a.value, b.value, epsilon = 1e-9, max_relative = 1e-6);
        }
    }
}

#[test]
fn refinement_decreases_mu2_with_shrinking_steps() {
    let mu2: Vec<f64> = [8, 16, 32, 64]
        .iter()
        .map(|&n| {
            let mesh = Mesh::rectangle(1.0, 1.0, n, n).unwrap();
            let (k, m) = fem::assemble(&mesh).unwrap();
            fem::smallest_eigenpairs(&k, &m, &opts(3)).unwrap()[1].value
        })
        .collect();
    for w in mu2.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-3), "{mu2:?}");
    }
    let steps: Vec<f64> = mu2.windows(2).map(|w| (w[0] - w[1]).abs()).collect();
    assert!(steps.windows(2).all(|s| s[1] < s[0]), "{steps:?}");
    // second-order convergence: Richardson with ratio 4 predicts the limit
    let est = analysis::richardson(mu2[2], mu2[3]);
    assert!((mu2[3] - PI * PI).abs() <= 2.0 * est, "{est}");
}

#[test]
fn slit_domain_operators() {
    let spec = DomainSpec::new(1.0 / 3200.0).unwrap();
    let cfg = RunConfig::default();
    let mesh = pipeline::mesh_spec(&spec, &cfg, 0).unwrap();
    let (k, m) = fem::assemble(&mesh).unwrap();
    let ones = vec![1.0; mesh.n_nodes()];
    let k1 = k.mul(&ones);
    assert!(k1.iter().all(|v| v.abs() <= 1e-12 * k.max_abs()));
    let area = geometry::build_domain(&spec).unwrap().area();
    assert_relative_eq!(m.form(&ones, &ones), area, max_relative = 1e-9);
    assert_relative_eq!(fem::integrate(&mesh, &ones).unwrap(), area, max_relative = 1e-9);
    assert!(fem::integrate(&mesh, &ones[1..]).is_err());

    let xs = fem::interpolate(&mesh, |p| Ok(p.x)).unwrap();
    assert!(xs.iter().zip(&mesh.nodes).all(|(v, p)| *v == p.x));
    let f1 = fem::interpolate(&mesh, |p| geometry::test_function(&spec, TestFunctionKind::F1, p)).unwrap();
    assert!(f1.iter().all(|v| (0.0..=1.0).contains(v)));

    let eigs = fem::smallest_eigenpairs(&k, &m, &opts(4)).unwrap();
    assert!(eigs[0].value.abs() <= 1e-10 * eigs[1].value);
    for (i, a) in eigs.iter().enumerate() {
        assert!(a.residual <= 1e-8, "residual {}", a.residual);
        for (j, b) in eigs.iter().enumerate() {
            let d = if i == j { 1.0 } else { 0.0 };
            assert!((m.form(&a.vector, &b.vector) - d).abs() <= 1e-8);
        }
        let rq = fem::rayleigh_quotient(&k, &m, &a.vector).unwrap();
        assert!((rq - a.value).abs() <= 1e-12 * eigs[3].value.max(rq.abs()));
    }
    assert!(fem::rayleigh_quotient(&k, &m, &ones).unwrap().abs() < 1e-14);
    assert!(fem::rayleigh_quotient(&k, &m, &vec![0.0; ones.len()]).is_err());

    // the test function is mean free before projection and bounds μ2 from above
    let l = analysis::lemma1(&spec, &mesh, &k, &m).unwrap();
    let f2 = fem::interpolate(&mesh, |p| geometry::test_function(&spec, TestFunctionKind::F2, p)).unwrap();
    let f: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a / l.int_f1 - b / l.int_f2).collect();
    let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(fem::integrate(&mesh, &f).unwrap().abs() <= 1e-9 * norm);
    assert!(l.bound.is_finite() && l.bound > 0.0 && l.bound >= eigs[1].value);
}

#[test]
fn test_function_integrals_stay_bounded() {
    let cfg = RunConfig { mesh: pipeline::MeshSettings { h_max: 8.0, h_hub: 0.1, ..Default::default() }, ..Default::default() };
    let ints: Vec<(f64, f64)> = [1.0 / 2000.0, 1.0 / 8000.0]
        .iter()
        .map(|&e| {
            let spec = DomainSpec::new(e).unwrap();
            let mesh = pipeline::mesh_spec(&spec, &cfg, 0).unwrap();
            let (k, m) = fem::assemble(&mesh).unwrap();
            let l = analysis::lemma1(&spec, &mesh, &k, &m).unwrap();
            (l.int_f1, l.int_f2)
        })
        .collect();
    for w in ints.windows(2) {
        assert!((w[1].0 / w[0].0 - 1.0).abs() < 0.1, "{ints:?}");
        assert!((w[1].1 / w[0].1 - 1.0).abs() < 0.1, "{ints:?}");
    }
}

fn rect_ops() -> (Mesh, fem::SparseSymMatrix, fem::SparseSymMatrix, f64) {
    let mesh = Mesh::rectangle(1.5, 1.0, 9, 6).unwrap();
    let (k, m) = fem::assemble(&mesh).unwrap();
    let mu2 = fem::smallest_eigenpairs(&k, &m, &opts(3)).unwrap()[1].value;
    (mesh, k, m, mu2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Any mean-free nodal vector has Rayleigh quotient at least the discrete `μ2`.
    #[test]
    fn galerkin_minimax(w in proptest::collection::vec(-1.0..1.0f64, 70)) {
        let (mesh, k, m, mu2) = rect_ops();
        prop_assume!(w.len() == mesh.n_nodes());
        let ones = vec![1.0; w.len()];
        let c = m.form(&ones, &w) / m.form(&ones, &ones);
        let v: Vec<f64> = w.iter().map(|x| x - c).collect();
        prop_assume!(m.form(&v, &v) > 1e-12);
        let rq = fem::rayleigh_quotient(&k, &m, &v).unwrap();
        prop_assert!(rq >= mu2 * (1.0 - 1e-8), "{rq} < {mu2}");
    }

    /// Element matrices: stiffness rows sum to zero, mass sums to the area.
    #[test]
    fn element_identities(ax in -2.0..2.0f64, ay in -2.0..2.0f64, bx in -2.0..2.0f64, by in -2.0..2.0f64) {
        use hotspot_core::Point2;
        let (a, b, c) = (Point2::new(0.0, 0.0), Point2::new(ax, ay), Point2::new(bx, by));
        let area = 0.5 * (b - a).cross(c - a);
        prop_assume!(area > 1e-3);
        let (ke, me) = fem::element_matrices([a, b, c]).unwrap();
        for i in 0..3 {
            prop_assert!(ke[i].iter().sum::<f64>().abs() <= 1e-10 * ke[i][i].abs().max(1.0));
            for j in 0..3 {
                prop_assert!((ke[i][j] - ke[j][i]).abs() <= 1e-12 * ke[i][i].abs().max(1.0));
            }
        }
        let total: f64 = me.iter().flatten().sum();
        prop_assert!((total - area).abs() <= 1e-12 * area.max(1.0));
    }
}
