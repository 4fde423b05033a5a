use proptest::prelude::*;
use stabscope::damping::*;
use stabscope::dynamics::PhaseState;
use stabscope::potentials::Potential;

fn build(name: &str, dim: usize) -> Damping {
    DampingSpec::named(name).build(dim).unwrap()
}

fn with_radius(name: &str, dim: usize, radius: f64) -> Damping {
    let mut spec = DampingSpec::named(name);
    spec.radius_space = Some(radius);
    spec.build(dim).unwrap()
}

fn settings(dim: usize) -> ScanSettings {
    ScanSettings::default_for(dim).unwrap()
}

/// Length of `(a, b) ∩ (c, d)`.
fn overlap(a: f64, b: f64, c: f64, d: f64) -> f64 {
    (b.min(d) - a.max(c)).max(0.0)
}

#[test]
fn interval_mollifier_matches_overlap_oracle() {
    let q = Quadrature::default_for(1).unwrap();
    let b = build("ball", 1);
    for &(x, r) in &[(0.0, 2.0), (0.3, 0.5), (1.2, 0.7), (-0.9, 3.0), (5.0, 1.0)] {
        let exact = overlap(-1.0, 1.0, x - r, x + r) / (2.0 * r);
        let got = mollify_at(&b, r, &[x], &q).unwrap();
        assert!((got - exact).abs() <= 2.0 / 512.0, "x={x} r={r}: {got} vs {exact}");
    }
}

#[test]
fn exterior_ray_matches_segment_oracle() {
    let q = Quadrature::default_for(1).unwrap();
    let b = build("exterior", 1);
    for &(x0, t) in &[(0.0, 2.0), (0.5, 3.0), (-2.0, 0.5)] {
        // exact line average of |x| >= 1 over [x0 - t, x0 + t]
        let len = 2.0 * t;
        let inside = overlap(-1.0, 1.0, x0 - t, x0 + t);
        let exact = (len - inside) / len;
        let got = ray_average(&b, &[x0], &[1.0], t, 1e-3, &q).unwrap();
        assert!((got - exact).abs() < 0.01, "x0={x0}: {got} vs {exact}");
    }
}

#[test]
fn ugcc_examples() {
    let s = settings(2);
    let pts = ugcc_lattice(2, 10.0, 6, 16);
    let one = ugcc_scan(&build("constant", 2), 4.0, 0.1, &pts, &s).unwrap();
    assert_eq!(one.infimum, 1.0);
    assert!(one.pass);

    let cb = ugcc_scan(&build("checkerboard", 2), 4.0, 0.1, &ugcc_lattice(2, 1.0, 5, 32), &s).unwrap();
    assert!(cb.infimum > 0.0 && cb.pass, "checkerboard infimum {}", cb.infimum);

    let ball = ugcc_scan(&build("ball", 2), 4.0, 0.1, &pts, &s).unwrap();
    assert_eq!(ball.infimum, 0.0);
    assert!(!ball.pass);
}

#[test]
fn ugcc_checkerboard_segment_coverage_on_one_period() {
    // segments of length 8 through one period, in 32 directions
    let s = settings(2);
    let pts = ugcc_lattice(2, 0.5, 6, 32);
    let rep = ugcc_scan(&build("checkerboard", 2), 4.0, 0.1, &pts, &s).unwrap();
    assert!(rep.infimum > 0.0);
}

#[test]
fn tpc_examples() {
    let s = settings(2);
    let harm = Potential::harmonic(2).unwrap();
    let mut c = DampingSpec::named("constant");
    c.amplitude = 0.3;
    let rep = tpc_scan(&c.build(2).unwrap(), &harm, 1.0, &[5.0, 10.0], 64, &s).unwrap();
    assert!(rep.samples.iter().all(|x| x.average == 0.3));

    let ext = tpc_scan(&build("exterior", 2), &harm, 1.0, &[5.0, 10.0, 20.0], 256, &s).unwrap();
    assert!(ext.trend.windows(2).all(|w| w[1].infimum >= w[0].infimum));
    assert!((ext.liminf_proxy - 1.0).abs() < 1e-12);
    assert!(ext.pass);

    let cb = tpc_scan(&build("checkerboard", 2), &harm, 1.0, &[10.0, 20.0, 40.0], 4096, &s).unwrap();
    assert_eq!(cb.liminf_proxy, 0.0);
    assert!(!cb.pass);
}

#[test]
fn tpc_rejects_unsorted_shells() {
    let harm = Potential::harmonic(1).unwrap();
    assert!(tpc_scan(&build("constant", 1), &harm, 1.0, &[10.0, 5.0], 2, &settings(1)).is_err());
}

#[test]
fn flow_average_follows_straight_line_at_high_energy() {
    let q = Quadrature::default_for(1).unwrap();
    let harm = Potential::harmonic(1).unwrap();
    let b = build("exterior", 1);
    let lam = 100.0;
    let speed = lam * 2f64.sqrt();
    let rho = PhaseState::new(vec![0.0], vec![speed]).unwrap();
    let (t, r) = (2.0, 1.0);
    let along_flow = flow_average(&b, &harm, &rho, t, r, lam, &q).unwrap();
    let along_line = ray_average(&b, &[0.0], &[1.0], speed * t / lam, r / lam.sqrt(), &q).unwrap();
    assert!((along_flow - along_line).abs() <= 0.05, "{along_flow} vs {along_line}");

    let c = Damping::constant(1, 0.4).unwrap();
    assert_eq!(flow_average(&c, &harm, &rho, t, r, lam, &q).unwrap(), 0.4);
}

#[test]
fn flow_average_rejects_off_shell_state() {
    let q = Quadrature::default_for(1).unwrap();
    let harm = Potential::harmonic(1).unwrap();
    let rho = PhaseState::new(vec![0.0], vec![1.0]).unwrap();
    assert!(flow_average(&build("exterior", 1), &harm, &rho, 1.0, 1.0, 10.0, &q).is_err());
}

#[test]
fn dsc_examples() {
    let s = settings(2);
    let harm = Potential::harmonic(2).unwrap();
    let lams = [25.0, 100.0, 400.0];
    let one = dsc_scan(&build("constant", 2), &harm, 2.0, 1.0, &lams, 50, 7, &s).unwrap();
    assert!(one.samples.iter().all(|x| x.average == 1.0));

    let ext = dsc_scan(&build("exterior", 2), &harm, 2.0, 1.0, &lams, 100, 7, &s).unwrap();
    assert!(ext.trend.iter().all(|g| g.infimum > 0.1), "{:?}", ext.trend);
    assert!(ext.pass);

    let cb = dsc_scan(&build("checkerboard", 2), &harm, 2.0, 1.0, &lams, 500, 7, &s).unwrap();
    assert!(cb.liminf_proxy < 1e-3, "{:?}", cb.trend);
    assert!(!cb.pass);
    let worst = cb
        .samples
        .iter()
        .filter(|x| x.group == 400.0)
        .min_by(|a, b| a.average.total_cmp(&b.average))
        .unwrap();
    let speed = worst.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(speed <= 0.1 * 400.0 + 1e-9, "minimizer is not a turning-point sample");
}

#[test]
fn dsc_is_deterministic() {
    let s = settings(2);
    let harm = Potential::harmonic(2).unwrap();
    let b = build("checkerboard", 2);
    let a = dsc_scan(&b, &harm, 1.0, 1.0, &[25.0], 20, 3, &s).unwrap();
    let c = dsc_scan(&b, &harm, 1.0, 1.0, &[25.0], 20, 3, &s).unwrap();
    assert_eq!(a, c);
}

#[test]
fn dsc_limit_examples() {
    let s = settings(1);
    let harm = Potential::harmonic(1).unwrap();
    let lams = [25.0, 100.0];
    let mut c = DampingSpec::named("constant");
    c.amplitude = 0.6;
    let t = dsc_limit_scan(&c.build(1).unwrap(), &harm, &[1.0, 2.0], &[0.5, 1.0], &lams, 10, 1, &s).unwrap();
    assert!(t.values.iter().flatten().all(|v| *v == 0.6));
    let z = Damping::constant(1, 0.0).unwrap();
    let t = dsc_limit_scan(&z, &harm, &[1.0, 2.0], &[0.5, 1.0], &lams, 10, 1, &s).unwrap();
    assert!(t.values.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn dsc_limit_exterior_grows_with_window() {
    let s = settings(2);
    let harm = Potential::harmonic(2).unwrap();
    let t = dsc_limit_scan(
        &build("exterior", 2),
        &harm,
        &[1.0, 2.0, 4.0],
        &[0.5, 1.0, 2.0],
        &[25.0, 100.0],
        100,
        5,
        &s,
    )
    .unwrap();
    for k in 1..3 {
        assert!(t.values[k][k] >= t.values[k - 1][k - 1] - 0.02, "{:?}", t.values);
    }
    assert!(t.margin > 0.1);
}

#[test]
fn mollification_examples() {
    let q = Quadrature::default_for(1).unwrap();
    let radii = [0.4, 0.2, 0.1, 0.05, 0.025];
    let c = Damping::constant(1, 0.8).unwrap();
    let tab = mollification_consistency(&c, &[0.0], &[1.0], 2.0, 0.5, &radii, &q).unwrap();
    assert!(tab.entries.iter().all(|e| (*e - 0.8).abs() < 1e-15));

    let ext = build("exterior", 1);
    let tab = mollification_consistency(&ext, &[0.0], &[1.0], 2.0, 0.5, &radii, &q).unwrap();
    let d = &tab.successive_differences;
    assert!(d.windows(2).all(|w| w[1] <= w[0] + 1e-4), "{d:?}");
    assert!(tab.final_gap() < 1e-2);

    let q2 = Quadrature::new(2, 256, 128).unwrap();
    let smooth = build("smooth_checkerboard", 2);
    let nu = [0.6, 0.8];
    let radii = [0.1, 0.03, 0.01, 0.003];
    let tab = mollification_consistency(&smooth, &[0.1, 0.2], &nu, 2.0, 0.05, &radii, &q2).unwrap();
    assert!(tab.final_gap() < 1e-3, "{tab:?}");
}

fn indicator_pair() -> impl Strategy<Value = (Damping, Damping)> {
    (0.2f64..3.0, 0.0f64..2.0, prop::bool::ANY).prop_map(|(r, extra, ball)| {
        if ball {
            (with_radius("ball", 2, r), with_radius("ball", 2, r + extra))
        } else {
            (with_radius("exterior", 2, r + extra), with_radius("exterior", 2, r))
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn averages_are_monotone_and_bounded(
        (small, large) in indicator_pair(),
        x in prop::array::uniform2(-4.0f64..4.0),
        theta in 0.0f64..std::f64::consts::TAU,
        r in 0.05f64..2.0,
    ) {
        let q = Quadrature::new(2, 256, 64).unwrap();
        let nu = [theta.cos(), theta.sin()];
        let m1 = mollify_at(&small, r, &x, &q).unwrap();
        let m2 = mollify_at(&large, r, &x, &q).unwrap();
        prop_assert!(m1 <= m2);
        prop_assert!((0.0..=1.0).contains(&m1) && (0.0..=1.0).contains(&m2));
        let a1 = ray_average(&small, &x, &nu, 3.0, r, &q).unwrap();
        let a2 = ray_average(&large, &x, &nu, 3.0, r, &q).unwrap();
        prop_assert!(a1 <= a2 + 1e-15);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a1));
    }

    #[test]
    fn averages_scale_linearly(
        alpha in 0.01f64..50.0,
        x in prop::array::uniform2(-3.0f64..3.0),
        r in 0.05f64..1.0,
    ) {
        let q = Quadrature::new(2, 256, 64).unwrap();
        let b = build("checkerboard", 2);
        let scaled = b.scaled(alpha).unwrap();
        let nu = [0.8, 0.6];
        let m = mollify_at(&b, r, &x, &q).unwrap();
        let ms = mollify_at(&scaled, r, &x, &q).unwrap();
        prop_assert!((ms - alpha * m).abs() <= 1e-12 * alpha);
        let a = ray_average(&b, &x, &nu, 2.0, r, &q).unwrap();
        let as_ = ray_average(&scaled, &x, &nu, 2.0, r, &q).unwrap();
        prop_assert!((as_ - alpha * a).abs() <= 1e-12 * alpha);
    }
}

#[test]
fn scan_infima_scale_linearly() {
    let s = ScanSettings {
        quadrature: Quadrature::new(2, 256, 64).unwrap(),
        threshold: None,
    };
    let harm = Potential::harmonic(2).unwrap();
    let b = build("exterior", 2);
    let alpha = 3.5;
    let b2 = b.scaled(alpha).unwrap();
    let t1 = tpc_scan(&b, &harm, 1.0, &[1.0, 2.0], 64, &s).unwrap();
    let t2 = tpc_scan(&b2, &harm, 1.0, &[1.0, 2.0], 64, &s).unwrap();
    assert!((t2.infimum - alpha * t1.infimum).abs() < 1e-12);
    let d1 = dsc_scan(&b, &harm, 1.0, 1.0, &[10.0], 20, 9, &s).unwrap();
    let d2 = dsc_scan(&b2, &harm, 1.0, 1.0, &[10.0], 20, 9, &s).unwrap();
    assert!((d2.infimum - alpha * d1.infimum).abs() < 1e-12);
}
