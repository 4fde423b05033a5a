use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use stabscope::damping::{Damping, DampingSpec};
use stabscope::evolution::*;
use stabscope::fields::{Field, Grid, GridOperator};
use stabscope::potentials::Potential;

fn harmonic() -> Potential {
    Potential::harmonic(1).unwrap()
}

fn constant(v: f64) -> Damping {
    Damping::constant(1, v).unwrap()
}

fn indicator() -> Damping {
    let mut s = DampingSpec::named("ball");
    s.center_space = Some(vec![0.0]);
    s.radius_space = Some(1.0);
    s.build(1).unwrap()
}

fn packet_state(grid: &Grid, k: f64) -> WaveState {
    let u = Field::from_fn(grid, |x| Complex64::new((-0.5 * x[0] * x[0]).exp() * (k * x[0]).cos(), 0.0));
    WaveState::new(u, Field::zeros(grid)).unwrap()
}

fn grid() -> Grid {
    Grid::cube(1, 10.0, 401).unwrap()
}

#[test]
fn conservative_run_keeps_energy() {
    let g = grid();
    let trace = evolve(&harmonic(), &constant(0.0), &packet_state(&g, 0.0), 10.0, 1e-4).unwrap();
    let ratio = trace.final_energy() / trace.initial_energy();
    assert!((ratio - 1.0).abs() <= 1e-6, "{ratio}");
    assert!(decay_fit(&trace).unwrap().no_decay);
}

#[test]
fn zero_data_has_zero_energy() {
    let g = grid();
    let trace = evolve(&harmonic(), &constant(1.0), &WaveState::zeros(&g), 1.0, 1e-3).unwrap();
    assert!(trace.samples.iter().all(|s| s.energy == 0.0 && s.dissipation == 0.0));
}

#[test]
fn constant_damping_rate_matches_modes() {
    let g = grid();
    let trace = evolve(&harmonic(), &constant(1.0), &packet_state(&g, 3.0), 10.0, 1e-3).unwrap();
    let fit = decay_fit(&trace).unwrap();
    assert!((0.9..=1.1).contains(&fit.tau), "{fit:?}");
    assert!(trace.max_increase <= 1e-12, "{}", trace.max_increase);
}

#[test]
fn balance_defect_is_second_order() {
    let g = grid();
    let defects: Vec<f64> = [0.003, 0.0015, 0.00075, 0.000375]
        .iter()
        .map(|dt| evolve(&harmonic(), &constant(1.0), &packet_state(&g, 3.0), 2.0, *dt).unwrap().balance_defect)
        .collect();
    for w in defects.windows(2) {
        assert!(w[0] / w[1] >= 3.5, "{defects:?}");
    }
}

#[test]
fn cfl_and_resolution_are_enforced() {
    let g = grid();
    let limit = cfl_limit(&harmonic(), &g).unwrap();
    let err = evolve(&harmonic(), &constant(0.0), &packet_state(&g, 0.0), 1.0, 1.01 * limit).unwrap_err();
    assert!(err.is_validation() && err.to_string().contains("CFL"));
    let rough = packet_state(&g, 15.0);
    assert!(evolve(&harmonic(), &constant(0.0), &rough, 1.0, 1e-3).unwrap_err().is_validation());
    let edge = Field::from_fn(&g, |_| Complex64::new(1.0, 0.0));
    assert!(WaveState::new(edge, Field::zeros(&g)).is_err());
}

fn synthetic(c: f64, tau: f64) -> EnergyTrace {
    EnergyTrace {
        dt: 0.01,
        steps: 1000,
        samples: (0..=1000)
            .map(|k| {
                let t = k as f64 * 0.01;
                EnergySample { t, energy: c * (-t / tau).exp(), dissipation: 0.0 }
            })
            .collect(),
        balance_defect: 0.0,
        balance_constant: 0.0,
        step_balance: 0.0,
        max_increase: 0.0,
    }
}

#[test]
fn exact_exponential_is_recovered() {
    let fit = decay_fit(&synthetic(3.0, 2.0)).unwrap();
    assert!((fit.c - 3.0).abs() <= 1e-10 && (fit.tau - 2.0).abs() <= 1e-10, "{fit:?}");
    assert!(fit.residual < 1e-12 && !fit.no_decay);
    assert!((fit.window.0 - 1.01).abs() < 1e-12);
}

#[test]
fn floor_truncates_the_window() {
    let fit = decay_fit(&synthetic(1.0, 0.1)).unwrap();
    assert!(fit.floor_truncated);
    assert!((fit.tau - 0.1).abs() < 1e-8);
}

fn board() -> Damping {
    let mut cb = DampingSpec::named("checkerboard");
    cb.period_space = Some(1.0);
    cb.duty = Some(0.5);
    cb.build(1).unwrap()
}

#[test]
fn probe_separates_undamped_quasimode() {
    let slow = turning_probe(&harmonic(), &board(), &[20.75], 1.0, 1201, None, 1.0).unwrap();
    assert!(slow.ratio >= 5.0, "{slow:?}");
    assert!((slow.reference.tau - 1.0).abs() <= 0.25, "{slow:?}");
    let same = turning_probe(&harmonic(), &constant(1.0), &[20.75], 1.0, 1201, None, 1.0).unwrap();
    assert!((same.ratio - 1.0).abs() <= 0.25, "{same:?}");
}

#[test]
fn probe_without_damping_is_conservative() {
    let pot = harmonic();
    let lam = pot.value(&[20.75]).sqrt();
    let cmp = turning_probe(&pot, &constant(0.0), &[20.75], 1.0, 1201, None, 1.0).unwrap();
    let (trace, _) = cmp.traces.unwrap();
    assert!(cmp.probe.no_decay, "{:?}", cmp.probe);
    assert!((trace.final_energy() / trace.initial_energy() - 1.0).abs() <= 1e-6);
    assert!((cmp.t_final - 2.0 / lam).abs() < 1e-12);
}

fn lambda_grid() -> Vec<f64> {
    (0..=200).map(|n| (n as f64 + 0.5).sqrt()).collect()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

#[test]
fn resolvent_dichotomy() {
    let pot = harmonic();
    let lams = lambda_grid();
    let g = resolvent_grid(&pot, *lams.last().unwrap(), 16.0).unwrap();
    let bounded = resolvent_scan(&pot, &constant(1.0), &lams, &g).unwrap();
    let max = bounded.values.iter().cloned().fold(0.0, f64::max);
    assert!(max / median(&bounded.values) <= 10.0, "{max}");
    let growing = resolvent_scan(&pot, &indicator(), &lams, &g).unwrap();
    let decade = |lo: f64, hi: f64| {
        lams.iter()
            .zip(&growing.values)
            .filter(|(l, _)| **l >= lo && **l < hi)
            .map(|(_, v)| *v)
            .fold(0.0, f64::max)
    };
    let (first, last) = (decade(0.1, 1.0), decade(10.0, 100.0));
    assert!(last >= 10.0 * first, "{first} {last}");
    assert!(growing.flags.iter().all(|f| *f == ScanFlag::Converged));
}

fn p_spectrum(g: &Grid) -> Vec<f64> {
    let op = GridOperator::new(&harmonic(), g).unwrap();
    let [d0, d1, d2] = op.banded_1d().unwrap();
    let n = g.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = d0[i];
        if i + 1 < n {
            m[(i, i + 1)] = d1[i];
            m[(i + 1, i)] = d1[i];
        }
        if i + 2 < n {
            m[(i, i + 2)] = d2[i];
            m[(i + 2, i)] = d2[i];
        }
    }
    let mut e: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().cloned().collect();
    e.sort_by(f64::total_cmp);
    e
}

#[test]
fn undamped_resolvent_is_spectral_distance() {
    let pot = harmonic();
    let g = resolvent_grid(&pot, 6.0, 16.0).unwrap();
    let spec = p_spectrum(&g);
    let lams = [1.0, 1.7, 2.3, 3.1, 4.2];
    let scan = resolvent_scan(&pot, &constant(0.0), &lams, &g).unwrap();
    for (l, s) in lams.iter().zip(&scan.sigma_min) {
        let dist = spec.iter().map(|m| (m - l * l).abs()).fold(f64::INFINITY, f64::min);
        assert!((s - dist).abs() <= 0.05 * dist, "λ = {l}: {s} vs {dist}");
    }
}

#[test]
fn bisection_fallback_agrees() {
    let pot = harmonic();
    let lams = [2.0, 3.3];
    let g = resolvent_grid(&pot, 4.0, 16.0).unwrap();
    let direct = resolvent_scan(&pot, &indicator(), &lams, &g).unwrap();
    let settings = ResolventSettings { max_iterations: 3, ..Default::default() };
    let fallback = resolvent_scan_with(&pot, &indicator(), &lams, &g, &settings).unwrap();
    assert!(fallback.flags.iter().all(|f| *f == ScanFlag::Bisection));
    for (a, b) in direct.sigma_min.iter().zip(&fallback.sigma_min) {
        assert!((a - b).abs() <= 1e-6 * a, "{a} vs {b}");
    }
}

#[test]
fn resolvent_rejects_two_dimensions() {
    let pot = Potential::harmonic(2).unwrap();
    let b = Damping::constant(2, 1.0).unwrap();
    let g = Grid::cube(2, 5.0, 32).unwrap();
    let err = resolvent_scan(&pot, &b, &[1.0], &g).unwrap_err();
    assert_eq!(err.to_string(), "resolvent scan requires d = 1");
    assert!(err.is_validation());
}

#[test]
fn damped_spectrum_constant_damping() {
    let g = Grid::cube(1, 8.0, 321).unwrap();
    let spec = damped_spectrum_1d(&harmonic(), &constant(1.0), &g, 40).unwrap();
    let mu2 = p_spectrum(&g);
    for z in &spec.eigenvalues {
        let q = mu2.iter().map(|m| (z * z + z + m).norm()).fold(f64::INFINITY, f64::min);
        assert!(q <= 1e-6, "{z}: {q}");
    }
    assert!((spec.abscissa + 0.5).abs() <= 0.025, "{}", spec.abscissa);
    assert!(spec.residuals.iter().all(|r| *r <= 1e-10), "{:?}", spec.residuals);
}

#[test]
fn undamped_spectrum_is_imaginary() {
    let g = Grid::cube(1, 8.0, 321).unwrap();
    let spec = damped_spectrum_1d(&harmonic(), &constant(0.0), &g, 20).unwrap();
    let mu = p_spectrum(&g);
    for z in &spec.eigenvalues {
        assert!(z.re.abs() <= 1e-8, "{z}");
        let d = mu.iter().map(|m| (m.sqrt() - z.im.abs()).abs()).fold(f64::INFINITY, f64::min);
        assert!(d <= 1e-8, "{z}");
    }
}

#[test]
fn spectrum_csv_header() {
    let g = Grid::cube(1, 6.0, 64).unwrap();
    let spec = damped_spectrum_1d(&harmonic(), &indicator(), &g, 6).unwrap();
    let mut buf = Vec::new();
    spec.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("re,im,residual\n"));
    assert_eq!(text.lines().count(), 7);
    assert!(spec.eigenvalues.iter().all(|z| z.re < 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn scan_is_even_in_lambda(l in 0.5f64..4.0, amp in 0.1f64..2.0) {
        let pot = harmonic();
        let g = resolvent_grid(&pot, 4.0, 16.0).unwrap();
        let b = indicator().scaled(amp).unwrap();
        let s = resolvent_scan(&pot, &b, &[l, -l], &g).unwrap();
        prop_assert!((s.values[0] - s.values[1]).abs() <= 1e-10 * s.values[0]);
    }

    #[test]
    fn damped_energy_never_grows(amp in 0.0f64..3.0, k in 0.0f64..4.0) {
        let g = Grid::cube(1, 8.0, 321).unwrap();
        let u = Field::from_fn(&g, |x| Complex64::new((-0.5 * x[0] * x[0]).exp() * (k * x[0]).cos(), 0.0));
        let state = WaveState::new(u, Field::zeros(&g)).unwrap();
        let trace = evolve(&harmonic(), &indicator().scaled(amp).unwrap(), &state, 2.0, 2e-3).unwrap();
        prop_assert!(trace.max_increase <= 1e-6 * 2e-3 * 2e-3 * (1.0 + trace.initial_energy()));
    }
}
