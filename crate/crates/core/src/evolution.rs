//! Damped wave evolution `∂²u + P u + b ∂u = 0`, decay fitting, and the
//! stationary resolvent and spectral scans in one dimension.

use std::io::Write;

use log::{debug, warn};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::damping::Damping;
use crate::dynamics::fmt_f64;
use crate::fields::{weighted_inner, weighted_norm_sqr, Field, Grid, GridOperator, DEFAULT_PPW};
use crate::potentials::{sublevel_radius, Potential};
use crate::quasimodes::{bin_frequency, spectrum};
use crate::{Error, Result};

/// Courant number for the explicit stepper.
pub const CFL: f64 = 0.5;

/// Fraction of the leading trace samples dropped by [`decay_fit`].
pub const TRANSIENT_FRACTION: f64 = 0.1;

/// Largest admissible spectral mass above the resolved frequency band.
const SPECTRAL_TAIL: f64 = 1e-6;

/// Target number of stored trace rows; the balance bookkeeping uses every step.
const TRACE_ROWS: usize = 4000;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Displacement and velocity at a given time.
#[derive(Debug, Clone)]
pub struct WaveState {
    pub u: Field,
    pub v: Field,
    pub time: f64,
}

impl WaveState {
    pub fn new(u: Field, v: Field) -> Result<Self> {
        if u.grid() != v.grid() {
            return Err(Error::precondition("wave state: u and v live on different grids"));
        }
        let scale = u
            .values()
            .iter()
            .chain(v.values())
            .fold(0.0f64, |m, z| m.max(z.norm()));
        let edge = u.boundary_max(2).max(v.boundary_max(2));
        if edge > 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::precondition(format!(
                "wave state must vanish on the two outer grid layers (found {edge:e})"
            )));
        }
        Ok(WaveState { u, v, time: 0.0 })
    }

    pub fn zeros(grid: &Grid) -> Self {
        WaveState { u: Field::zeros(grid), v: Field::zeros(grid), time: 0.0 }
    }

    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub t: f64,
    pub energy: f64,
    /// `∫ b |∂_t u|²`.
    pub dissipation: f64,
}

/// Energy history of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub dt: f64,
    pub steps: usize,
    pub samples: Vec<EnergySample>,
    /// `|E(T) - E(0) + ∫ D dt|`, trapezoid in time over every step.
    pub balance_defect: f64,
    /// `balance_defect / (dt² T)`.
    pub balance_constant: f64,
    /// `max_k |E_{k+1} - E_k + dt (D_k + D_{k+1})/2| / (dt (E_k + 1))`.
    pub step_balance: f64,
    /// Largest single-step energy increase.
    pub max_increase: f64,
}

impl EnergyTrace {
    pub fn initial_energy(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.energy)
    }

    pub fn final_energy(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.energy)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,E,D")?;
        for s in &self.samples {
            writeln!(w, "{},{},{}", fmt_f64(s.t), fmt_f64(s.energy), fmt_f64(s.dissipation))?;
        }
        Ok(())
    }
}

/// Largest stable step: `CFL h / √(1 + max V)` on the grid.
pub fn cfl_limit(pot: &Potential, grid: &Grid) -> Result<f64> {
    let op = GridOperator::new(pot, grid)?;
    Ok(cfl_of(&op))
}

fn cfl_of(op: &GridOperator) -> f64 {
    let g = op.grid();
    let h = (0..g.dim()).map(|a| g.spacing(a)).fold(f64::INFINITY, f64::min);
    let vmax = op.potential_values().iter().cloned().fold(0.0f64, f64::max);
    CFL * h / (1.0 + vmax).sqrt()
}

/// Fraction of `‖û‖²` above `2π / (ppw h)` on some axis.
pub fn spectral_tail(f: &Field, ppw: f64) -> f64 {
    let g = f.grid();
    let d = g.dim();
    let data = spectrum(f);
    let limits: Vec<f64> = (0..d).map(|a| 2.0 * std::f64::consts::PI / (ppw * g.spacing(a))).collect();
    let (mut total, mut tail) = (0.0, 0.0);
    for (i, z) in data.iter().enumerate() {
        let k = g.unravel(i);
        let m = z.norm_sqr();
        total += m;
        if (0..d).any(|a| bin_frequency(g, a, k[a]).abs() > limits[a]) {
            tail += m;
        }
    }
    if total > 0.0 {
        tail / total
    } else {
        0.0
    }
}

struct Stepper<'a> {
    op: &'a GridOperator,
    damping: Vec<f64>,
    dt: f64,
}

impl Stepper<'_> {
    fn energy(&self, u: &[Complex64], pu: &[Complex64], v: &[Complex64]) -> (f64, f64) {
        let g = self.op.grid();
        let e = 0.5 * weighted_norm_sqr(g, v) + 0.5 * weighted_inner(g, u, pu).re;
        let d = (0..g.len())
            .map(|i| g.weight(i) * self.damping[i] * v[i].norm_sqr())
            .sum();
        (e, d)
    }

    /// `(1 + dt b/2) u⁺ = 2u - (1 - dt b/2) u⁻ - dt² P u`.
    fn advance(&self, prev: &[Complex64], cur: &[Complex64], pu: &[Complex64], next: &mut [Complex64]) {
        let dt = self.dt;
        next.par_iter_mut().enumerate().for_each(|(i, n)| {
            let half = 0.5 * dt * self.damping[i];
            *n = (2.0 * cur[i] - (1.0 - half) * prev[i] - dt * dt * pu[i]) / (1.0 + half);
        });
    }
}

/// Leapfrog evolution with the damping term centred in time.
///
/// Energies are `E = ½‖v‖² + ½⟨u, Pu⟩` with the centred velocity
/// `v_k = (u_{k+1} - u_{k-1}) / 2dt`.
pub fn evolve(pot: &Potential, b: &Damping, initial: &WaveState, t_final: f64, dt: f64) -> Result<EnergyTrace> {
    let grid = initial.grid().clone();
    if b.dim() != grid.dim() {
        return Err(Error::precondition("damping and grid dimensions differ"));
    }
    if !(dt > 0.0) || !(t_final >= dt) {
        return Err(Error::precondition(format!(
            "evolve needs 0 < dt <= T_final, got dt = {dt}, T_final = {t_final}"
        )));
    }
    let op = GridOperator::new(pot, &grid)?;
    let limit = cfl_of(&op);
    if dt > limit {
        return Err(Error::precondition(format!(
            "CFL violation: dt = {dt:e} exceeds {CFL} h / sqrt(1 + max V) = {limit:e}"
        )));
    }
    for (name, f) in [("u", &initial.u), ("v", &initial.v)] {
        let tail = spectral_tail(f, DEFAULT_PPW);
        if tail > SPECTRAL_TAIL {
            return Err(Error::precondition(format!(
                "initial {name} is under-resolved: {tail:e} of its spectral mass lies above {DEFAULT_PPW} points per wavelength"
            )));
        }
    }
    let steps = (t_final / dt - 1e-9).ceil() as usize;
    let stride = steps.div_ceil(TRACE_ROWS).max(1);
    let stepper = Stepper { op: &op, damping: grid.sample(|x| b.value(x)), dt };
    let n = grid.len();

    let u0 = initial.u.values();
    let v0 = initial.v.values();
    let mut pu = vec![ZERO; n];
    op.apply_into(u0, &mut pu);
    // second-order start consistent with the centred velocity v_0
    let mut next: Vec<Complex64> = (0..n)
        .map(|i| u0[i] + dt * v0[i] - 0.5 * dt * dt * (pu[i] + stepper.damping[i] * v0[i]))
        .collect();
    let mut prev: Vec<Complex64> = (0..n).map(|i| next[i] - 2.0 * dt * v0[i]).collect();
    let mut cur = u0.to_vec();
    let mut vel = v0.to_vec();

    let mut samples = Vec::with_capacity(steps / stride + 2);
    let (mut e_prev, mut d_prev) = stepper.energy(&cur, &pu, &vel);
    let e0 = e_prev;
    samples.push(EnergySample { t: 0.0, energy: e_prev, dissipation: d_prev });
    let (mut integral, mut step_balance, mut max_increase) = (0.0f64, 0.0f64, f64::NEG_INFINITY);

    for k in 1..=steps {
        prev.copy_from_slice(&cur);
        cur.copy_from_slice(&next);
        op.apply_into(&cur, &mut pu);
        stepper.advance(&prev, &cur, &pu, &mut next);
        for i in 0..n {
            vel[i] = (next[i] - prev[i]) / (2.0 * dt);
        }
        let (e, d) = stepper.energy(&cur, &pu, &vel);
        if !e.is_finite() || !d.is_finite() {
            return Err(Error::numerical(format!(
                "evolution produced non-finite energy at t = {}",
                k as f64 * dt
            )));
        }
        let flux = 0.5 * dt * (d + d_prev);
        integral += flux;
        step_balance = step_balance.max((e - e_prev + flux).abs() / (dt * (e_prev + 1.0)));
        max_increase = max_increase.max(e - e_prev);
        if k % stride == 0 || k == steps {
            samples.push(EnergySample { t: k as f64 * dt, energy: e, dissipation: d });
        }
        e_prev = e;
        d_prev = d;
    }
    let t_end = steps as f64 * dt;
    let defect = (e_prev - e0 + integral).abs();
    debug!("evolve: {steps} steps, E {e0:e} -> {e_prev:e}, balance defect {defect:e}");
    Ok(EnergyTrace {
        dt,
        steps,
        samples,
        balance_defect: defect,
        balance_constant: defect / (dt * dt * t_end),
        step_balance,
        max_increase,
    })
}

/// Exponential fit `E(t) ≈ C e^{-t/τ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub c: f64,
    /// `f64::INFINITY` when no decay is detected.
    pub tau: f64,
    /// RMS deviation of `log E` from the fitted line.
    pub residual: f64,
    pub window: (f64, f64),
    pub no_decay: bool,
    /// The window was cut where the energy reached the round-off floor.
    pub floor_truncated: bool,
}

/// Least squares on `log E` after dropping the first 10% of samples.
///
/// A fit is flagged as showing no decay when the slope is at least
/// `-1e-12`, or when the fitted decay across the window is below `1e-6`
/// relative, which is the level of the discrete energy oscillation.
pub fn decay_fit(trace: &EnergyTrace) -> Result<DecayFit> {
    let s = &trace.samples;
    let start = ((s.len() as f64) * TRANSIENT_FRACTION).ceil() as usize;
    if s.len() < start + 3 {
        return Err(Error::precondition("decay fit needs at least 3 samples after the transient"));
    }
    let floor = 1e-13 * s[start].energy.abs();
    let mut end = s.len();
    let mut floor_truncated = false;
    for (k, p) in s.iter().enumerate().skip(start) {
        if p.energy <= floor {
            end = k;
            floor_truncated = true;
            break;
        }
    }
    if end < start + 3 {
        return Err(Error::numerical("energy reached the round-off floor before the fit window"));
    }
    let window = &s[start..end];
    if window.iter().any(|p| !(p.energy > 0.0)) {
        return Err(Error::precondition("decay fit needs positive energies"));
    }
    let m = window.len() as f64;
    let mt = window.iter().map(|p| p.t).sum::<f64>() / m;
    let my = window.iter().map(|p| p.energy.ln()).sum::<f64>() / m;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for p in window {
        sxy += (p.t - mt) * (p.energy.ln() - my);
        sxx += (p.t - mt) * (p.t - mt);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mt;
    let residual = (window
        .iter()
        .map(|p| (p.energy.ln() - intercept - slope * p.t).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    let span = window[window.len() - 1].t - window[0].t;
    let no_decay = slope >= -1e-12 || -slope * span < 1e-6;
    if floor_truncated {
        warn!("decay fit window truncated at the energy floor");
    }
    Ok(DecayFit {
        c: intercept.exp(),
        tau: if no_decay { f64::INFINITY } else { -1.0 / slope },
        residual,
        window: (window[0].t, window[window.len() - 1].t),
        no_decay,
        floor_truncated,
    })
}

/// Evolves `(f, iλf)` up to `t_final` and fits its energy decay.
///
/// The step is a quarter of the stability limit, capped at `t_final / 400`.
pub fn quasimode_probe(
    pot: &Potential,
    b: &Damping,
    f: &Field,
    lambda: f64,
    t_final: f64,
) -> Result<(EnergyTrace, DecayFit)> {
    if !(lambda > 0.0) || !(t_final > 0.0) {
        return Err(Error::precondition("quasimode probe needs λ > 0 and T_final > 0"));
    }
    let velocity: Vec<Complex64> = f.values().iter().map(|z| Complex64::new(0.0, lambda) * z).collect();
    let state = WaveState::new(f.clone(), Field::from_values(f.grid(), velocity)?)?;
    let dt = (0.5 * cfl_limit(pot, f.grid())?).min(t_final / 400.0);
    let trace = evolve(pot, b, &state, t_final, dt)?;
    let fit = decay_fit(&trace)?;
    Ok((trace, fit))
}

/// Paired run of [`quasimode_probe`] on a turning-point bump: once with
/// `b`, once with the constant damping `reference`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeComparison {
    pub lambda: f64,
    pub t_final: f64,
    pub pairing: f64,
    pub probe: DecayFit,
    pub reference: DecayFit,
    /// `τ(probe) / τ(reference)`; infinite when the probe shows no decay.
    pub ratio: f64,
    #[serde(skip)]
    pub traces: Option<(EnergyTrace, EnergyTrace)>,
}

/// Turning-point bump at `x0` with `λ = √V(x0)` and radius `R/√λ`, probed
/// over `t_final` (default `2/λ`) against `b ≡ reference`.
pub fn turning_probe(
    pot: &Potential,
    b: &Damping,
    x0: &[f64],
    big_r: f64,
    grid_points: usize,
    t_final: Option<f64>,
    reference: f64,
) -> Result<ProbeComparison> {
    let d = pot.dim();
    if x0.len() != d || b.dim() != d {
        return Err(Error::precondition("turning probe: dimension mismatch"));
    }
    if !(reference > 0.0) {
        return Err(Error::precondition("turning probe: reference damping must be positive"));
    }
    let lambda = pot.value(x0).sqrt();
    let r = big_r / lambda.sqrt();
    let grid = Grid::new(x0.to_vec(), vec![3.0 * r; d], vec![grid_points; d])?;
    let eps = crate::potentials::epsilon_lambda(pot, &[lambda.max(1.0), 2.0 * lambda.max(1.0)])?;
    let norms = crate::quasimodes::BumpNorms::compute(d)?;
    let (bump, report) = crate::quasimodes::turning_point_bump(pot, x0, big_r, &grid, Some(b), &eps, &norms)?;
    let t_final = t_final.unwrap_or(2.0 / lambda);
    let (probe_trace, probe) = quasimode_probe(pot, b, &bump, lambda, t_final)?;
    let constant = Damping::constant(d, reference)?;
    let (ref_trace, reference_fit) = quasimode_probe(pot, &constant, &bump, lambda, t_final)?;
    Ok(ProbeComparison {
        lambda,
        t_final,
        pairing: report.damping_pairing.unwrap_or(0.0),
        ratio: probe.tau / reference_fit.tau,
        probe,
        reference: reference_fit,
        traces: Some((probe_trace, ref_trace)),
    })
}

/// Complex band matrix with `kl` sub- and `ku` super-diagonals, factored by
/// Gaussian elimination with partial pivoting.
struct BandLu {
    n: usize,
    kl: usize,
    width: usize,
    upper: usize,
    data: Vec<Complex64>,
    pivots: Vec<usize>,
}

impl BandLu {
    /// `entry(i, j)` is queried for `|i - j|` within the band.
    fn factor(n: usize, kl: usize, ku: usize, entry: impl Fn(usize, usize) -> Complex64) -> Option<Self> {
        let upper = ku + kl;
        let width = kl + upper + 1;
        let mut data = vec![ZERO; n * width];
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                data[i * width + j + kl - i] = entry(i, j);
            }
        }
        let mut lu = BandLu { n, kl, width, upper, data, pivots: vec![0; n] };
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            for i in k + 1..=last {
                if lu.at(i, k).norm() > lu.at(p, k).norm() {
                    p = i;
                }
            }
            lu.pivots[k] = p;
            let right = (k + upper).min(n - 1);
            if p != k {
                for j in k..=right {
                    let (a, b) = (lu.idx(k, j), lu.idx(p, j));
                    lu.data.swap(a, b);
                }
            }
            let pivot = lu.at(k, k);
            if pivot == ZERO {
                return None;
            }
            for i in k + 1..=last {
                let l = lu.at(i, k) / pivot;
                let ik = lu.idx(i, k);
                lu.data[ik] = l;
                for j in k + 1..=right {
                    let (ij, kj) = (lu.idx(i, j), lu.idx(k, j));
                    let v = lu.data[kj];
                    lu.data[ij] -= l * v;
                }
            }
        }
        Some(lu)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + j + self.kl - i
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> Complex64 {
        self.data[self.idx(i, j)]
    }

    fn solve(&self, x: &mut [Complex64]) {
        let n = self.n;
        for k in 0..n {
            x.swap(k, self.pivots[k]);
            let t = x[k];
            for i in k + 1..=(k + self.kl).min(n - 1) {
                x[i] -= self.at(i, k) * t;
            }
        }
        for k in (0..n).rev() {
            let mut acc = x[k];
            for j in k + 1..=(k + self.upper).min(n - 1) {
                acc -= self.at(k, j) * x[j];
            }
            x[k] = acc / self.at(k, k);
        }
    }
}

fn euclid(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Pentadiagonal `P + c₁ B + c₀` in 1D.
fn shifted_band<'a>(
    bands: &'a [Vec<f64>; 3],
    damping: &'a [f64],
    c1: Complex64,
    c0: Complex64,
) -> impl Fn(usize, usize) -> Complex64 + 'a {
    move |i, j| match i.abs_diff(j) {
        0 => bands[0][i] + c1 * damping[i] + c0,
        1 => Complex64::new(bands[1][i.min(j)], 0.0),
        _ => Complex64::new(bands[2][i.min(j)], 0.0),
    }
}

/// Largest eigenvalue of the symmetric tridiagonal matrix by Sturm bisection.
fn tridiagonal_max(alpha: &[f64], beta: &[f64]) -> f64 {
    let k = alpha.len();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..k {
        let r = if i > 0 { beta[i - 1].abs() } else { 0.0 } + if i + 1 < k { beta[i].abs() } else { 0.0 };
        lo = lo.min(alpha[i] - r);
        hi = hi.max(alpha[i] + r);
    }
    // number of eigenvalues below x
    let count = |x: f64| {
        let mut c = 0;
        let mut q = alpha[0] - x;
        if q < 0.0 {
            c += 1;
        }
        for i in 1..k {
            let denom = if q == 0.0 { f64::EPSILON * beta[i - 1].abs().max(1e-300) } else { q };
            q = alpha[i] - x - beta[i - 1] * beta[i - 1] / denom;
            if q < 0.0 {
                c += 1;
            }
        }
        c
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count(mid) >= k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Tuning of the smallest-singular-value solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolventSettings {
    /// Krylov steps of the inverse iteration before falling back.
    pub max_iterations: usize,
    /// Relative change of the Ritz value accepted as converged.
    pub tolerance: f64,
    /// Seed of the start vector; the same vector is used at every λ.
    pub seed: u64,
}

impl Default for ResolventSettings {
    fn default() -> Self {
        ResolventSettings { max_iterations: 400, tolerance: 1e-11, seed: 7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanFlag {
    Converged,
    /// Inverse iteration stalled; the value comes from inertia bisection.
    Bisection,
    Unconverged,
}

impl ScanFlag {
    fn as_str(self) -> &'static str {
        match self {
            ScanFlag::Converged => "converged",
            ScanFlag::Bisection => "bisection",
            ScanFlag::Unconverged => "unconverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventScan {
    pub lambdas: Vec<f64>,
    pub sigma_min: Vec<f64>,
    /// `|λ| / σ_min`.
    pub values: Vec<f64>,
    pub flags: Vec<ScanFlag>,
    pub grid_points: usize,
    pub half_width: f64,
}

impl ResolventScan {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "lambda,sigma_min,lambda_over_sigma_min,flag")?;
        for i in 0..self.lambdas.len() {
            writeln!(
                w,
                "{},{},{},{}",
                fmt_f64(self.lambdas[i]),
                fmt_f64(self.sigma_min[i]),
                fmt_f64(self.values[i]),
                self.flags[i].as_str()
            )?;
        }
        Ok(())
    }
}

/// Grid on `[-ρ, ρ]` with `ρ = sublevel_radius(4 λ_max²)`, resolving
/// momenta up to `√2 λ_max` at `ppw` points per wavelength.
pub fn resolvent_grid(pot: &Potential, lambda_max: f64, ppw: f64) -> Result<Grid> {
    if pot.dim() != 1 {
        return Err(Error::precondition("resolvent scan requires d = 1"));
    }
    let radius = sublevel_radius(pot, 4.0 * lambda_max * lambda_max)?;
    let h = 2.0 * std::f64::consts::PI / (ppw * 2f64.sqrt() * lambda_max.abs());
    let n = ((2.0 * radius / h).ceil() as usize + 1).max(16);
    Grid::cube(1, radius, n)
}

/// `|λ| ‖(P - λ² + iλb)⁻¹‖` on a 1D grid with Dirichlet truncation.
pub fn resolvent_scan(pot: &Potential, b: &Damping, lambdas: &[f64], grid: &Grid) -> Result<ResolventScan> {
    resolvent_scan_with(pot, b, lambdas, grid, &ResolventSettings::default())
}

pub fn resolvent_scan_with(
    pot: &Potential,
    b: &Damping,
    lambdas: &[f64],
    grid: &Grid,
    settings: &ResolventSettings,
) -> Result<ResolventScan> {
    if pot.dim() != 1 || grid.dim() != 1 || b.dim() != 1 {
        return Err(Error::precondition("resolvent scan requires d = 1"));
    }
    if lambdas.is_empty() || lambdas.iter().any(|l| !(l.abs() > 0.0) || !l.is_finite()) {
        return Err(Error::precondition("resolvent scan needs nonzero finite λ values"));
    }
    let lmax = lambdas.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let radius = sublevel_radius(pot, 4.0 * lmax * lmax)?;
    let (c, hw) = (grid.centers()[0], grid.half_widths()[0]);
    if c - hw > -radius + 1e-9 * radius || c + hw < radius - 1e-9 * radius {
        return Err(Error::precondition(format!(
            "resolvent grid must cover the truncation radius {radius:.6} (sublevel of 4 λ_max²)"
        )));
    }
    crate::fields::check_resolution(grid, 2f64.sqrt() * lmax, DEFAULT_PPW)?;
    let op = GridOperator::new(pot, grid)?;
    let bands = op.banded_1d()?;
    let damping = grid.sample(|x| b.value(x));
    let n = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let start: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), 0.0)).collect();

    let rows: Vec<(f64, ScanFlag)> = lambdas
        .par_iter()
        .map(|&lam| smallest_singular(&bands, &damping, lam, &start, settings))
        .collect::<Result<_>>()?;
    let sigma_min: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let values = lambdas.iter().zip(&sigma_min).map(|(l, s)| l.abs() / s).collect();
    Ok(ResolventScan {
        lambdas: lambdas.to_vec(),
        sigma_min,
        values,
        flags: rows.iter().map(|r| r.1).collect(),
        grid_points: n,
        half_width: hw,
    })
}

/// `σ_min(P - λ² + iλB)` by Lanczos-accelerated inverse iteration on the
/// normal equations, with inertia bisection as fallback.
fn smallest_singular(
    bands: &[Vec<f64>; 3],
    damping: &[f64],
    lambda: f64,
    start: &[Complex64],
    settings: &ResolventSettings,
) -> Result<(f64, ScanFlag)> {
    let n = start.len();
    let c1 = Complex64::new(0.0, lambda);
    let c0 = Complex64::new(-lambda * lambda, 0.0);
    let entry = shifted_band(bands, damping, c1, c0);
    let (Some(lu), Some(lu_adj)) = (
        BandLu::factor(n, 2, 2, &entry),
        BandLu::factor(n, 2, 2, |i, j| entry(j, i).conj()),
    ) else {
        // exactly singular
        return Ok((0.0, ScanFlag::Converged));
    };
    let apply = |x: &mut [Complex64]| {
        lu.solve(x);
        lu_adj.solve(x);
    };
    let mut q = start.to_vec();
    let norm = euclid(&q);
    q.iter_mut().for_each(|z| *z /= norm);
    let mut q_prev = vec![ZERO; n];
    let mut w = vec![ZERO; n];
    let (mut alpha, mut beta) = (Vec::new(), Vec::new());
    let mut theta = 0.0f64;
    for k in 0..settings.max_iterations {
        w.copy_from_slice(&q);
        apply(&mut w);
        let a: f64 = q.iter().zip(&w).map(|(x, y)| (x.conj() * y).re).sum();
        let b_prev = beta.last().copied().unwrap_or(0.0);
        for i in 0..n {
            w[i] -= a * q[i] + b_prev * q_prev[i];
        }
        alpha.push(a);
        let next_theta = tridiagonal_max(&alpha, &beta);
        let bnorm = euclid(&w);
        let done = (k >= 4 && (next_theta - theta).abs() <= settings.tolerance * next_theta)
            || bnorm <= 1e-14 * next_theta;
        theta = next_theta;
        if done {
            return Ok((1.0 / theta.sqrt(), ScanFlag::Converged));
        }
        beta.push(bnorm);
        std::mem::swap(&mut q_prev, &mut q);
        for i in 0..n {
            q[i] = w[i] / bnorm;
        }
    }
    warn!("inverse iteration did not converge at λ = {lambda}; bisecting");
    Ok(match bisect_smallest(bands, damping, lambda, 1.0 / theta.sqrt()) {
        Some(s) => (s, ScanFlag::Bisection),
        None => (1.0 / theta.sqrt(), ScanFlag::Unconverged),
    })
}

/// Number of negative pivots of the banded Hermitian `M - s` via `LDLᴴ`.
fn negative_pivots(m: &[Vec<Complex64>], s: f64) -> Option<usize> {
    // m[o][i] = M[i][i + o], o = 0..=4
    let n = m[0].len();
    let bw = m.len() - 1;
    let mut l = vec![vec![ZERO; bw + 1]; n]; // l[i][o] = L[i][i - o]
    let mut dvals = vec![0.0f64; n];
    let mut count = 0;
    for i in 0..n {
        for o in (1..=bw.min(i)).rev() {
            let j = i - o;
            let mut acc = m[o][j].conj();
            for p in 1..=bw {
                let (Some(ip), Some(jp)) = (o.checked_add(p), j.checked_sub(p)) else { continue };
                if ip > bw {
                    continue;
                }
                acc -= l[i][ip] * dvals[jp] * l[j][p].conj();
            }
            l[i][o] = acc / dvals[j];
        }
        let mut d = m[0][i].re - s;
        for o in 1..=bw.min(i) {
            d -= l[i][o].norm_sqr() * dvals[i - o];
        }
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        if d < 0.0 {
            count += 1;
        }
        dvals[i] = d;
    }
    Some(count)
}

fn bisect_smallest(bands: &[Vec<f64>; 3], damping: &[f64], lambda: f64, guess: f64) -> Option<f64> {
    let n = damping.len();
    let c1 = Complex64::new(0.0, lambda);
    let c0 = Complex64::new(-lambda * lambda, 0.0);
    let entry = shifted_band(bands, damping, c1, c0);
    let a = |i: isize, j: isize| -> Complex64 {
        if i < 0 || j < 0 || i >= n as isize || j >= n as isize || i.abs_diff(j) > 2 {
            ZERO
        } else {
            entry(i as usize, j as usize)
        }
    };
    // M = Aᴴ A, bandwidth 4
    let m: Vec<Vec<Complex64>> = (0..=4)
        .map(|o| {
            (0..n)
                .map(|i| {
                    let (i, j) = (i as isize, (i + o) as isize);
                    (i - 2..=i + 2).map(|k| a(k, i).conj() * a(k, j)).sum()
                })
                .collect()
        })
        .collect();
    let (mut lo, mut hi) = (0.0, (2.0 * guess).powi(2).max(f64::MIN_POSITIVE));
    let mut grow = 0;
    while negative_pivots(&m, hi)? == 0 {
        hi *= 4.0;
        grow += 1;
        if grow > 60 {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-12 * hi {
            break;
        }
        match negative_pivots(&m, mid) {
            Some(0) => lo = mid,
            Some(_) => hi = mid,
            None => lo = mid,
        }
    }
    Some((0.5 * (lo + hi)).sqrt())
}

/// Eigenvalues of the damped wave generator on a 1D grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampedSpectrum {
    pub eigenvalues: Vec<Complex64>,
    /// Relative backward error of `z² + z B + P` at each eigenvalue.
    pub residuals: Vec<f64>,
    pub abscissa: f64,
}

impl DampedSpectrum {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "re,im,residual")?;
        for (z, r) in self.eigenvalues.iter().zip(&self.residuals) {
            writeln!(w, "{},{},{}", fmt_f64(z.re), fmt_f64(z.im), fmt_f64(*r))?;
        }
        Ok(())
    }
}

/// The `count` smallest-modulus eigenvalues of `(0 I; -P -B)`.
pub fn damped_spectrum_1d(pot: &Potential, b: &Damping, grid: &Grid, count: usize) -> Result<DampedSpectrum> {
    if pot.dim() != 1 || grid.dim() != 1 || b.dim() != 1 {
        return Err(Error::precondition("damped spectrum requires d = 1"));
    }
    let n = grid.len();
    if count == 0 || count > 200 || count > 2 * n {
        return Err(Error::precondition(format!(
            "damped spectrum count must lie in 1..=min(200, 2N), got {count}"
        )));
    }
    let op = GridOperator::new(pot, grid)?;
    let bands = op.banded_1d()?;
    let damping = grid.sample(|x| b.value(x));
    let mut m = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        m[(i, n + i)] = 1.0;
        m[(n + i, n + i)] = -damping[i];
        m[(n + i, i)] = -bands[0][i];
        if i + 1 < n {
            m[(n + i, i + 1)] = -bands[1][i];
            m[(n + i + 1, i)] = -bands[1][i];
        }
        if i + 2 < n {
            m[(n + i, i + 2)] = -bands[2][i];
            m[(n + i + 2, i)] = -bands[2][i];
        }
    }
    nalgebra::linalg::balancing::balance_parlett_reinsch(&mut m);
    let schur = nalgebra::linalg::Schur::try_new(m, f64::EPSILON, 10_000 * n)
        .ok_or_else(|| Error::numerical("eigensolver failed: Schur iteration did not converge"))?;
    let mut all: Vec<Complex64> = schur.complex_eigenvalues().iter().cloned().collect();
    all.sort_by(|a, b| a.norm().total_cmp(&b.norm()).then(a.im.total_cmp(&b.im)));
    all.truncate(count);

    let p_norm = (0..n)
        .map(|i| bands[0][i].abs() + 2.0 * bands[1][0].abs() + 2.0 * bands[2][0].abs())
        .fold(0.0, f64::max);
    let b_max = damping.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), 0.0)).collect();
    let residuals = all
        .iter()
        .map(|&z| {
            let scale = p_norm + z.norm() * b_max + z.norm_sqr();
            let Some(lu) = BandLu::factor(n, 2, 2, shifted_band(&bands, &damping, z, z * z)) else {
                return 0.0;
            };
            let mut x = start.clone();
            let mut r = 0.0;
            for _ in 0..2 {
                let nx = euclid(&x);
                x.iter_mut().for_each(|v| *v /= nx);
                lu.solve(&mut x);
                r = 1.0 / euclid(&x);
            }
            r / scale
        })
        .collect();
    let abscissa = all.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(DampedSpectrum { eigenvalues: all, residuals, abscissa })
}
