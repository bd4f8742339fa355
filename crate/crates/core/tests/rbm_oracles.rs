use approx::assert_relative_eq;
use hotspot_core::geometry::{DomainSpec, Point2, PolygonWithSlit, RegionLabel, SymmetryElement};
use hotspot_core::rbm::{
    self, hitting_probability, mu2_lower_bound, p2_probability, simulate_step, RbmConfig, RbmDomain, Target,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

fn rect(x0: f64, x1: f64, y0: f64, y1: f64) -> PolygonWithSlit {
    PolygonWithSlit::simple(vec![Point2::new(x0, y0), Point2::new(x1, y0), Point2::new(x1, y1), Point2::new(x0, y1)])
}

fn normal2(rng: &mut Xoshiro256PlusPlus) -> [f64; 2] {
    [rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

/// `P(sup_{s ≤ t} |B_s| ≥ 1)` for standard Brownian motion from 0, by the
/// eigenfunction series of the heat equation on `(−1, 1)`.
fn exit_probability_series(t: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let s: f64 = (0..200)
        .map(|n| {
            let k = (2 * n + 1) as f64;
            (-1f64).powi(n) / k * (-k * k * pi * pi * t / 8.0).exp()
        })
        .sum();
    1.0 - 4.0 / pi * s
}

/// The same probability by the method of images (reflection principle).
fn exit_probability_images(t: f64) -> f64 {
    let phi = |x: f64| 0.5 * libm_erfc(-x / std::f64::consts::SQRT_2);
    let st = t.sqrt();
    let stay: f64 = (-50..=50)
        .map(|k: i32| {
            let k = k as f64;
            (-1f64).powf(k.abs()) * (phi((2.0 * k + 1.0) / st) - phi((2.0 * k - 1.0) / st))
        })
        .sum();
    1.0 - stay
}

/// Complementary error function (Numerical Recipes `erfcc`, relative error < 1.2e−7).
fn libm_erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807 + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 { r } else { 2.0 - r }
}

/// `[4, 8] × [−0.05, 0.05]` with targets at `x = 5` and `x = 7`: the distance
/// of the first coordinate from 6 is a reflected 1D Brownian motion.
fn thin_rectangle() -> (RbmDomain, Target) {
    let dom = RbmDomain::new(&rect(4.0, 8.0, -0.05, 0.05)).unwrap();
    let target = Target::new(
        "x=5|x=7",
        vec![
            (Point2::new(5.0, -0.05), Point2::new(5.0, 0.05)),
            (Point2::new(7.0, -0.05), Point2::new(7.0, 0.05)),
        ],
    );
    (dom, target)
}

fn cfg(n_paths: usize, dt: f64, seed: u64) -> RbmConfig {
    RbmConfig { n_paths, dt, seed, horizon: 0.5, ..RbmConfig::default() }
}

#[test]
fn exit_oracles_agree() {
    for t in [0.1, 0.25, 0.5, 1.0] {
        assert!((exit_probability_series(t) - exit_probability_images(t)).abs() < 1e-6, "t = {t}");
    }
    assert!((exit_probability_series(0.5) - 0.3145).abs() < 1e-3);
}

#[test]
fn mean_square_displacement_is_2t() {
    let dom = RbmDomain::new(&rect(-100.0, 100.0, -100.0, 100.0)).unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
    let dt = 1e-4;
    let mut p = Point2::ORIGIN;
    let mut sum = 0.0;
    let n = 1_000_000;
    for _ in 0..n {
        let s = simulate_step(&dom, p, dt, normal2(&mut rng));
        sum += (s.end.x - p.x).powi(2) + (s.end.y - p.y).powi(2);
        p = s.end;
    }
    let msd_rate = sum / (n as f64 * dt);
    assert!((msd_rate - 2.0).abs() < 0.04, "{msd_rate}");
}

#[test]
fn thin_rectangle_matches_exit_series() {
    let (dom, target) = thin_rectangle();
    let est = hitting_probability(&dom, Point2::new(6.0, 0.0), &target, &cfg(10_000, 1e-4, 1)).unwrap();
    let exact = exit_probability_series(0.5);
    assert!(
        (est.probability - exact).abs() <= 3.0 * est.half_width,
        "{} ± {} vs {exact}",
        est.probability,
        est.half_width
    );
}

#[test]
fn estimates_are_seed_deterministic() {
    let (dom, target) = thin_rectangle();
    let start = Point2::new(6.0, 0.0);
    let a = hitting_probability(&dom, start, &target, &cfg(2000, 1e-4, 9)).unwrap();
    let b = hitting_probability(&dom, start, &target, &cfg(2000, 1e-4, 9)).unwrap();
    assert_eq!(a, b);
    let c = hitting_probability(&dom, start, &target, &cfg(2000, 1e-4, 10)).unwrap();
    assert_ne!(a.hits, c.hits);
}

/// Quadrupling the path count halves the interval; doubling divides it by √2.
#[test]
fn interval_width_follows_root_n() {
    let (dom, target) = thin_rectangle();
    let start = Point2::new(6.0, 0.0);
    let w = |n| hitting_probability(&dom, start, &target, &cfg(n, 1e-4, 3)).unwrap().half_width;
    let (w1, w2, w4) = (w(2500), w(5000), w(10_000));
    let r2 = w1 / w2 / 2f64.sqrt();
    let r4 = w1 / w4 / 2.0;
    assert!((r2 - 1.0).abs() < 0.2, "{r2}");
    assert!((r4 - 1.0).abs() < 0.2, "{r4}");
}

#[test]
fn halving_dt_is_stable() {
    let (dom, target) = thin_rectangle();
    let start = Point2::new(6.0, 0.0);
    let a = hitting_probability(&dom, start, &target, &cfg(10_000, 1e-4, 4)).unwrap();
    let b = hitting_probability(&dom, start, &target, &cfg(10_000, 5e-5, 4)).unwrap();
    let hw = a.half_width.max(b.half_width);
    assert!((a.probability - b.probability).abs() < 2.0 * hw, "{} vs {}", a.probability, b.probability);
}

#[test]
fn start_in_inner_region_is_a_sure_hit() {
    let spec = DomainSpec::new(1.0 / 3200.0).unwrap();
    let dom = RbmDomain::for_spec(&spec).unwrap();
    let inner = Target::region(&spec, RegionLabel::Inner).unwrap();
    let est = hitting_probability(&dom, Point2::ORIGIN, &inner, &RbmConfig { n_paths: 1000, ..Default::default() }).unwrap();
    assert_eq!(est.probability, 1.0);
    assert!(hitting_probability(&dom, Point2::new(300.0, 0.0), &inner, &RbmConfig::default()).is_err());
}

#[test]
fn bridges_agree_under_rotation() {
    let spec = DomainSpec::new(1.0 / 3200.0).unwrap();
    let dom = RbmDomain::for_spec(&spec).unwrap();
    let inner = Target::region(&spec, RegionLabel::Inner).unwrap();
    let c = RbmConfig { n_paths: 2000, seed: 21, ..Default::default() };
    let est: Vec<_> = [0u8, 1, 2]
        .iter()
        .map(|&r| {
            let start = SymmetryElement::new(r, false).apply(Point2::new(5.75, 0.0));
            hitting_probability(&dom, start, &inner, &c).unwrap()
        })
        .collect();
    for a in &est {
        for b in &est {
            assert!((a.probability - b.probability).abs() <= a.half_width + b.half_width);
        }
    }
}

#[test]
fn small_loop_around_start_is_hit() {
    let spec = DomainSpec::new(1.0 / 3200.0).unwrap();
    let dom = RbmDomain::for_spec(&spec).unwrap();
    let s = Point2::new(3.0, 0.0);
    let d = 1e-3;
    let gamma = vec![
        Point2::new(s.x - d, s.y - d),
        Point2::new(s.x + d, s.y - d),
        Point2::new(s.x + d, s.y + d),
        Point2::new(s.x - d, s.y + d),
        Point2::new(s.x - d, s.y - d),
    ];
    assert!(gamma.iter().all(|&p| dom.contains(p)));
    let est = p2_probability(&dom, &spec, s, &gamma, &RbmConfig { n_paths: 1000, ..Default::default() }).unwrap();
    assert!(est.probability >= 0.99, "{}", est.probability);
}

#[test]
fn gamma_preconditions() {
    let spec = DomainSpec::new(1.0 / 3200.0).unwrap();
    let c = RbmConfig { n_paths: 1000, ..Default::default() };
    let bad = [
        vec![Point2::new(1.0, 0.0)],
        vec![Point2::new(1.0, 0.0), Point2::new(1.0, 1e-12)],
        vec![Point2::new(100.0, 0.0), Point2::new(101.0, 0.0)],
        vec![Point2::new(1.0, 0.0), Point2::new(f64::NAN, 0.0)],
    ];
    for g in bad {
        assert!(rbm::estimate_p2(&spec, &g, &c).is_err(), "{g:?}");
    }
    assert!(rbm::estimate_p2(&spec, &rbm::default_gamma(), &RbmConfig { n_paths: 10, ..c }).is_err());
}

#[test]
fn p2_does_not_depend_on_epsilon() {
    let c = RbmConfig { n_paths: 2000, seed: 8, ..Default::default() };
    let est: Vec<_> = [1.0 / 250.0, 1.0 / 3200.0]
        .iter()
        .map(|&e| rbm::estimate_p2(&DomainSpec::new(e).unwrap(), &rbm::default_gamma(), &c).unwrap().min)
        .collect();
    assert!(
        (est[0].probability - est[1].probability).abs() <= est[0].half_width + est[1].half_width,
        "{} vs {}",
        est[0].probability,
        est[1].probability
    );
}

#[test]
fn mu2_bound_matches_series() {
    let v = mu2_lower_bound(0.5, 0.5).unwrap();
    let series: f64 = (1..200).map(|n| 0.25f64.powi(n) / n as f64).sum();
    assert_relative_eq!(v.value, series, max_relative = 1e-14);
    assert_relative_eq!(v.value, 0.287_682_072_451_780_9, max_relative = 1e-14);
    assert_eq!(mu2_lower_bound(0.0, 0.0).unwrap().value, 0.0);
    assert!(mu2_lower_bound(1.0, 1.0).unwrap().saturated);
    assert!(mu2_lower_bound(1.5, 0.5).is_err());
    assert!(mu2_lower_bound(f64::NAN, 0.5).is_err());
}

fn neck_start() -> impl Strategy<Value = Point2> {
    // bridge interiors and the hub, where the walls are closest together
    (0u8..3, 3.5..8.0f64, -0.9..0.9f64).prop_map(|(r, x, u)| {
        let w = if (5.0..=7.0).contains(&x) { 0.0025 } else { 0.3 };
        SymmetryElement::new(r, false).apply(Point2::new(x, u * w))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Every simulated position, including intermediate reflection points, stays in the closure of `D`.
    #[test]
    fn reflection_preserves_containment(start in neck_start(), seed in any::<u64>()) {
        let spec = DomainSpec::new(1.0 / 3200.0).unwrap();
        let dom = RbmDomain::for_spec(&spec).unwrap();
        prop_assume!(dom.contains(start));
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut p = start;
        for k in 0..2000 {
            // occasional oversized kicks exercise multiple reflections
            let scale = if k % 97 == 0 { 20.0 } else { 1.0 };
            let n = normal2(&mut rng);
            let dt = dom.local_dt(p, 1e-4);
            let s = simulate_step(&dom, p, dt, [n[0] * scale, n[1] * scale]);
            for (a, b) in s.pieces() {
                prop_assert!(dom.contains(a) && dom.contains(b), "{a:?} -> {b:?}");
            }
            p = s.end;
        }
    }
}
