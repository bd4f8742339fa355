use std::f64::consts::PI;

use hotspot_core::analysis::{self, NodalCurve};
use hotspot_core::geometry::{DomainSpec, Point2, PolygonWithSlit};
use hotspot_core::mesh::{triangulate, Mesh, SizeField};
use hotspot_core::pipeline::{self, RunConfig};
use proptest::prelude::*;

/// `[-1, 1]²` on a structured grid.
fn centred_square(n: usize) -> Mesh {
    let m = Mesh::rectangle(2.0, 2.0, n, n).unwrap();
    let nodes = m.nodes.iter().map(|p| Point2::new(p.x - 1.0, p.y - 1.0)).collect();
    Mesh::from_raw(nodes, m.triangles.clone()).unwrap()
}

fn disc(n: usize) -> Mesh {
    let lp = (0..n).map(|k| {
        let t = 2.0 * PI * k as f64 / n as f64;
        Point2::new(t.cos(), t.sin())
    });
    triangulate(&PolygonWithSlit::simple(lp.collect()), &SizeField::uniform(0.15), 20.0).unwrap()
}

/// Smooth function with a bump at the origin plus a few cosine modes.
fn field(mesh: &Mesh, c: &[f64; 4]) -> Vec<f64> {
    mesh.nodes
        .iter()
        .map(|p| {
            (-(p.x * p.x + p.y * p.y) * 4.0).exp() - 0.3
                + c[0] * (PI * p.x).cos()
                + c[1] * (PI * p.y).sin()
                + c[2] * (2.0 * PI * p.x).sin() * p.y
                + c[3] * p.x
        })
        .collect()
}

#[test]
fn paraboloid_peak_is_the_centre_node() {
    let mesh = disc(48);
    let phi: Vec<f64> = mesh.nodes.iter().map(|p| -(p.x * p.x + p.y * p.y)).collect();
    let ext = analysis::extremum_report(&mesh, &phi);
    assert!(ext.interior);
    let best = mesh.nodes.iter().map(|p| p.norm()).fold(f64::INFINITY, f64::min);
    assert_eq!(ext.distance_to_origin, best);
    assert!(ext.margin > 0.0);
}

#[test]
fn linear_function_peaks_on_the_boundary() {
    let mesh = centred_square(16);
    let phi: Vec<f64> = mesh.nodes.iter().map(|p| p.x).collect();
    let ext = analysis::extremum_report(&mesh, &phi);
    assert!(!ext.interior);
    assert_eq!(ext.point.x, 1.0);
}

#[test]
fn sign_normalization_cases() {
    let mesh = centred_square(32);
    let phi = field(&mesh, &[0.0; 4]);
    let (same, c2) = analysis::sign_normalize(&mesh, &phi).unwrap();
    assert!(c2 > 0.0);
    assert_eq!(same, phi);
    let neg: Vec<f64> = phi.iter().map(|v| -v).collect();
    let (flipped, c2n) = analysis::sign_normalize(&mesh, &neg).unwrap();
    assert_eq!(c2n, c2);
    assert_eq!(flipped, phi);
    // odd in x: the disc integral vanishes
    let odd: Vec<f64> = mesh.nodes.iter().map(|p| p.x).collect();
    assert!(analysis::sign_normalize(&mesh, &odd).is_err());
}

#[test]
fn empty_curve_fails_with_diagnostic() {
    let spec = DomainSpec::new(1.0 / 3200.0).unwrap();
    let check = analysis::check_nodal_in_m(&spec, &NodalCurve::default());
    assert!(!check.pass);
    assert!(check.diagnostic.as_deref().unwrap_or("").contains("no nodal line"));
}

#[test]
fn slit_domain_fixtures() {
    let spec = DomainSpec::new(1.0 / 3200.0).unwrap();
    let cfg = RunConfig::default();
    let mesh = pipeline::mesh_spec(&spec, &cfg, 0).unwrap();
    let ones = vec![1.0; mesh.n_nodes()];
    assert!(analysis::symmetry_residual(&mesh, &ones).residual <= 1e-14);
    assert_eq!(analysis::nodal_domain_count(&mesh, &ones), 1);
    let xs: Vec<f64> = mesh.nodes.iter().map(|p| p.x).collect();
    // worst pair: the arm tip (235, 0) against its rotation at x = −117.5
    let r = analysis::symmetry_residual(&mesh, &xs).residual;
    assert!((r - 1.5).abs() < 1e-9, "{r}");
    let cone = analysis::cone_monotonicity_check(&spec, &mesh, &ones, 1000, 1e-3, 1).unwrap();
    assert_eq!(cone.violations, 0);
}

/// The computed second eigenfunction has one nodal component per bridge.
#[test]
fn nodal_line_crosses_each_bridge() {
    let spec = DomainSpec::new(1.0 / 3200.0).unwrap();
    let solved = pipeline::solve_spec(&spec, &RunConfig::default(), 0).unwrap();
    let curve = analysis::nodal_curves(&solved.mesh, &solved.eigs[1].vector).unwrap();
    assert!(curve.n_points() > 0);
    let components = curve.polylines.len();
    assert!(components >= 3, "{components} nodal components");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalization_is_sign_blind(c in prop::array::uniform4(-0.2..0.2f64)) {
        let mesh = centred_square(24);
        let phi = field(&mesh, &c);
        let neg: Vec<f64> = phi.iter().map(|v| -v).collect();
        let (a, _) = analysis::sign_normalize(&mesh, &phi).unwrap();
        let (b, _) = analysis::sign_normalize(&mesh, &neg).unwrap();
        prop_assert_eq!(&a, &b);
        let (ea, eb) = (analysis::extremum_report(&mesh, &a), analysis::extremum_report(&mesh, &b));
        prop_assert_eq!(ea.argmax, eb.argmax);
        prop_assert_eq!(ea.margin, eb.margin);
        // idempotent
        let (again, c2) = analysis::sign_normalize(&mesh, &a).unwrap();
        prop_assert!(c2 > 0.0);
        prop_assert_eq!(again, a);
    }

    #[test]
    fn positive_scaling_keeps_argmax(c in prop::array::uniform4(-0.2..0.2f64), s in 1e-3..1e3f64) {
        let mesh = centred_square(24);
        let phi = field(&mesh, &c);
        let scaled: Vec<f64> = phi.iter().map(|v| v * s).collect();
        let (a, b) = (analysis::extremum_report(&mesh, &phi), analysis::extremum_report(&mesh, &scaled));
        prop_assert_eq!(a.argmax, b.argmax);
        prop_assert_eq!(a.interior, b.interior);
        prop_assert_eq!(analysis::nodal_domain_count(&mesh, &phi), analysis::nodal_domain_count(&mesh, &scaled));
    }

    /// Every nodal point sits on a mesh edge whose end values change sign.
    #[test]
    fn nodal_points_interpolate_sign_changes(c in prop::array::uniform4(-0.2..0.2f64)) {
        let mesh = centred_square(20);
        let phi = field(&mesh, &c);
        let curve = analysis::nodal_curves(&mesh, &phi).unwrap();
        let edges = mesh.edges();
        for (_, p, _) in curve.points() {
            let on = edges.keys().any(|&(i, j)| {
                let (a, b) = (mesh.nodes[i], mesh.nodes[j]);
                let d = hotspot_core::geometry::point_segment_distance(p, a, b);
                d < 1e-12 && phi[i] * phi[j] <= 0.0
            });
            prop_assert!(on, "{p:?}");
        }
    }
}
