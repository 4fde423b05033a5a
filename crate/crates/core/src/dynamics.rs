//! Hamiltonian flow of `p(x, ξ) = V(x) + |ξ|²/2`, its rescaled form on the
//! energy shell `{p = λ²}`, and the straight-line deviation of rescaled
//! trajectories.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{norm, sphere_directions, Point, MAX_DIM};
use crate::potentials::{sample_sublevel, sublevel_radius, Potential};

/// Default bound on the relative energy drift of a trajectory.
pub const DEFAULT_DRIFT_TOL: f64 = 1e-6;

/// A point `(x, ξ)` of phase space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
}

impl PhaseState {
    pub fn new(x: Vec<f64>, xi: Vec<f64>) -> Result<Self> {
        if x.len() != xi.len() || x.is_empty() {
            return Err(Error::precondition(format!(
                "phase state: position has {} components, momentum {}",
                x.len(),
                xi.len()
            )));
        }
        if x.iter().chain(&xi).any(|v| !v.is_finite()) {
            return Err(Error::precondition("phase state: non-finite component"));
        }
        Ok(PhaseState { x, xi })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// `p(x, ξ) = V(x) + |ξ|²/2`.
    pub fn energy(&self, pot: &Potential) -> f64 {
        pot.value(&self.x) + 0.5 * self.xi.iter().map(|v| v * v).sum::<f64>()
    }

    /// The same point with momentum reversed.
    pub fn reversed(&self) -> Self {
        PhaseState {
            x: self.x.clone(),
            xi: self.xi.iter().map(|v| -v).collect(),
        }
    }
}

/// Returns `(ξ, -∇V(x))`.
pub fn hamiltonian_field(pot: &Potential, s: &PhaseState) -> (Vec<f64>, Vec<f64>) {
    let mut force = pot.gradient(&s.x);
    for f in force.iter_mut() {
        *f = -*f;
    }
    (s.xi.clone(), force)
}

/// Sampled orbit of the flow, stored row-major as `[x_1..x_d, ξ_1..ξ_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    data: Vec<f64>,
    /// Step actually used (the requested `dt` shrunk so that it divides `T`).
    pub dt: f64,
    /// Energy at `t = 0`.
    pub p0: f64,
    /// `max_k |p_k - p0| / max(p0, 1)`.
    pub drift: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn position(&self, k: usize) -> &[f64] {
        let w = 2 * self.dim;
        &self.data[k * w..k * w + self.dim]
    }

    pub fn momentum(&self, k: usize) -> &[f64] {
        let w = 2 * self.dim;
        &self.data[k * w + self.dim..(k + 1) * w]
    }

    pub fn state(&self, k: usize) -> PhaseState {
        PhaseState {
            x: self.position(k).to_vec(),
            xi: self.momentum(k).to_vec(),
        }
    }

    pub fn last(&self) -> PhaseState {
        self.state(self.len() - 1)
    }

    /// CSV with columns `t, x_1..x_d, xi_1..xi_d, p`.
    pub fn write_csv<W: Write>(&self, pot: &Potential, mut w: W) -> Result<()> {
        let d = self.dim;
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("x_{i}")));
        header.extend((1..=d).map(|i| format!("xi_{i}")));
        header.push("p".into());
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let s = self.state(k);
            let mut row = vec![fmt_f64(self.times[k])];
            row.extend(s.x.iter().map(|v| fmt_f64(*v)));
            row.extend(s.xi.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(s.energy(pot)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Shortest round-trip representation used in all CSV output.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

/// One velocity-Verlet step in place.
#[inline]
fn verlet_step(pot: &Potential, x: &mut [f64], xi: &mut [f64], force: &mut [f64], dt: f64) {
    let d = x.len();
    for i in 0..d {
        xi[i] -= 0.5 * dt * force[i];
        x[i] += dt * xi[i];
    }
    pot.gradient_into(x, force);
    for i in 0..d {
        xi[i] -= 0.5 * dt * force[i];
    }
}

/// Substep weights of the symmetric triple-jump composition that lifts
/// velocity Verlet to fourth order while keeping it symplectic and
/// time-reversible.
const TRIPLE_JUMP: [f64; 2] = [1.351_207_191_959_657_6, -1.702_414_383_919_315_3];

/// Advances `s` by `steps` composed Verlet steps of size `dt`, calling `visit` after
/// every step with the step index (1-based) and the current `(x, ξ)`.
pub(crate) fn verlet_walk<F>(pot: &Potential, s: &PhaseState, dt: f64, steps: usize, mut visit: F) -> PhaseState
where
    F: FnMut(usize, &[f64], &[f64]),
{
    let d = s.dim();
    let mut x: Point = [0.0; MAX_DIM];
    let mut xi: Point = [0.0; MAX_DIM];
    let mut f: Point = [0.0; MAX_DIM];
    x[..d].copy_from_slice(&s.x);
    xi[..d].copy_from_slice(&s.xi);
    pot.gradient_into(&x[..d], &mut f[..d]);
    let (outer, inner) = (TRIPLE_JUMP[0] * dt, TRIPLE_JUMP[1] * dt);
    for k in 1..=steps {
        verlet_step(pot, &mut x[..d], &mut xi[..d], &mut f[..d], outer);
        verlet_step(pot, &mut x[..d], &mut xi[..d], &mut f[..d], inner);
        verlet_step(pot, &mut x[..d], &mut xi[..d], &mut f[..d], outer);
        visit(k, &x[..d], &xi[..d]);
    }
    PhaseState {
        x: x[..d].to_vec(),
        xi: xi[..d].to_vec(),
    }
}

/// Moves `s` by signed time `t` with steps no larger than `dt`.
///
/// Negative times are handled by reversing momentum, integrating forward and
/// reversing again; velocity Verlet is time-reversible so this is the exact
/// backward scheme.
pub fn flow_to(pot: &Potential, s: &PhaseState, t: f64, dt: f64) -> PhaseState {
    if t == 0.0 {
        return s.clone();
    }
    let steps = (t.abs() / dt).ceil().max(1.0) as usize;
    let h = t.abs() / steps as f64;
    if t > 0.0 {
        verlet_walk(pot, s, h, steps, |_, _, _| {})
    } else {
        verlet_walk(pot, &s.reversed(), h, steps, |_, _, _| {}).reversed()
    }
}

/// Integrates the flow on `[0, T]` with the default drift tolerance.
pub fn flow_integrate(pot: &Potential, s0: &PhaseState, t_final: f64, dt: f64) -> Result<Trajectory> {
    flow_integrate_with_tol(pot, s0, t_final, dt, DEFAULT_DRIFT_TOL)
}

/// Integrates the flow on `[0, T]` with the composed velocity-Verlet scheme.
///
/// Drift above `tol` is logged; drift above `100 tol` aborts.
pub fn flow_integrate_with_tol(
    pot: &Potential,
    s0: &PhaseState,
    t_final: f64,
    dt: f64,
    tol: f64,
) -> Result<Trajectory> {
    if s0.dim() != pot.dim() {
        return Err(Error::precondition(format!(
            "flow_integrate: state dimension {} does not match potential dimension {}",
            s0.dim(),
            pot.dim()
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::precondition(format!("flow_integrate: dt must be positive, got {dt}")));
    }
    if !(t_final >= dt) {
        return Err(Error::precondition(format!(
            "flow_integrate: need T >= dt, got T = {t_final}, dt = {dt}"
        )));
    }
    let d = s0.dim();
    let steps = (t_final / dt - 1e-9).ceil().max(1.0) as usize;
    let h = t_final / steps as f64;
    let p0 = s0.energy(pot);
    let scale = p0.max(1.0);
    let mut times = Vec::with_capacity(steps + 1);
    let mut data = Vec::with_capacity((steps + 1) * 2 * d);
    times.push(0.0);
    data.extend_from_slice(&s0.x);
    data.extend_from_slice(&s0.xi);
    let mut drift = 0.0f64;
    let mut blown = false;
    verlet_walk(pot, s0, h, steps, |k, x, xi| {
        times.push(k as f64 * h);
        data.extend_from_slice(x);
        data.extend_from_slice(xi);
        let p = pot.value(x) + 0.5 * xi.iter().map(|v| v * v).sum::<f64>();
        let e = (p - p0).abs() / scale;
        if !e.is_finite() {
            blown = true;
        }
        drift = drift.max(e);
    });
    if blown || drift > 100.0 * tol {
        return Err(Error::numerical(format!(
            "integrator unstable — reduce dt (relative energy drift {drift:.3e})"
        )));
    }
    if drift > tol {
        log::warn!("flow_integrate: relative energy drift {drift:.3e} exceeds tolerance {tol:.1e}");
    }
    Ok(Trajectory {
        dim: d,
        times,
        data,
        dt: h,
        p0,
        drift,
    })
}

/// Default step for computations on the shell `{p = λ²}`.
pub fn shell_dt(lambda: f64) -> f64 {
    1e-3 * 1f64.min(1.0 / lambda.sqrt())
}

fn check_shell(pot: &Potential, s0: &PhaseState, lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::precondition(format!("λ must be positive, got {lambda}")));
    }
    if s0.dim() != pot.dim() {
        return Err(Error::precondition("rescaled state dimension mismatch"));
    }
    let l2 = lambda * lambda;
    let p = pot.value(&s0.x) + 0.5 * l2 * s0.xi.iter().map(|v| v * v).sum::<f64>();
    if (p - l2).abs() > 1e-9 * l2 {
        return Err(Error::precondition(format!(
            "inconsistent energy in rescaled state: p(y, λη) = {p} but λ² = {l2}"
        )));
    }
    Ok(())
}

/// Rescaled flow `(y_s, η_s) = (x^{s/λ}, ξ^{s/λ}/λ)`.
///
/// `s0` is given in rescaled variables `(y, η)` and must satisfy
/// `p(y, λη) = λ²` to relative accuracy 1e-9.
pub fn rescaled_flow(pot: &Potential, s0: &PhaseState, s: f64, lambda: f64, dt: f64) -> Result<PhaseState> {
    check_shell(pot, s0, lambda)?;
    let original = PhaseState {
        x: s0.x.clone(),
        xi: s0.xi.iter().map(|v| v * lambda).collect(),
    };
    let end = flow_to(pot, &original, s / lambda, dt);
    let l2 = lambda * lambda;
    let drift = (end.energy(pot) - l2).abs() / l2;
    if drift > 100.0 * DEFAULT_DRIFT_TOL {
        return Err(Error::numerical(format!(
            "integrator unstable — reduce dt (rescaled energy drift {drift:.3e})"
        )));
    }
    Ok(PhaseState {
        x: end.x,
        xi: end.xi.iter().map(|v| v / lambda).collect(),
    })
}

/// Measured deviation of a rescaled trajectory from its tangent line,
/// against the bounds `(T/√λ) ε̂(λ)` and `(T²/√λ) ε̂(λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearizationReport {
    pub lambda: f64,
    pub horizon: f64,
    pub dev_eta: f64,
    pub dev_y: f64,
    pub bound_eta: f64,
    pub bound_y: f64,
    /// Largest relative energy drift seen along the rescaled orbit.
    pub drift: f64,
}

impl LinearizationReport {
    pub fn passes(&self) -> bool {
        self.dev_eta <= self.bound_eta && self.dev_y <= self.bound_y
    }

    /// `max(dev_η / bound_η, dev_y / bound_y) - 1`; positive when a bound fails.
    pub fn relative_excess(&self) -> f64 {
        let r = |dev: f64, bound: f64| {
            if bound > 0.0 {
                dev / bound
            } else if dev > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        };
        r(self.dev_eta, self.bound_eta).max(r(self.dev_y, self.bound_y)) - 1.0
    }
}

/// Sup over `|s| <= T` of `|η_s - η|` and `|y_s - (y + sη)|`, sampled at
/// every integrator step.
pub fn linearization_deviation(
    pot: &Potential,
    s0: &PhaseState,
    horizon: f64,
    lambda: f64,
    epsilon: f64,
    dt: f64,
) -> Result<LinearizationReport> {
    check_shell(pot, s0, lambda)?;
    if !(horizon >= 0.0) {
        return Err(Error::precondition("linearization_deviation: T must be non-negative"));
    }
    let d = s0.dim();
    let l2 = lambda * lambda;
    let bound_eta = horizon / lambda.sqrt() * epsilon;
    let bound_y = horizon * horizon / lambda.sqrt() * epsilon;
    let mut report = LinearizationReport {
        lambda,
        horizon,
        dev_eta: 0.0,
        dev_y: 0.0,
        bound_eta,
        bound_y,
        drift: 0.0,
    };
    if horizon == 0.0 {
        return Ok(report);
    }
    let t_end = horizon / lambda;
    let steps = (t_end / dt).ceil().max(1.0) as usize;
    let h = t_end / steps as f64;
    for sign in [1.0, -1.0] {
        let start = PhaseState {
            x: s0.x.clone(),
            xi: s0.xi.iter().map(|v| sign * v * lambda).collect(),
        };
        let mut diff = [0.0; MAX_DIM];
        verlet_walk(pot, &start, h, steps, |k, x, xi| {
            // time t = k h, rescaled time s = sign λ t; momentum sign undone
            let s = sign * lambda * k as f64 * h;
            for i in 0..d {
                diff[i] = sign * xi[i] / lambda - s0.xi[i];
            }
            report.dev_eta = report.dev_eta.max(norm(&diff[..d]));
            for i in 0..d {
                diff[i] = x[i] - (s0.x[i] + s * s0.xi[i]);
            }
            report.dev_y = report.dev_y.max(norm(&diff[..d]));
            let p = pot.value(x) + 0.5 * xi.iter().map(|v| v * v).sum::<f64>();
            report.drift = report.drift.max((p - l2).abs() / l2);
        });
    }
    if report.drift > 100.0 * DEFAULT_DRIFT_TOL {
        return Err(Error::numerical(format!(
            "integrator unstable — reduce dt (rescaled energy drift {:.3e})",
            report.drift
        )));
    }
    Ok(report)
}

/// Converts an original-variable shell point to rescaled variables.
pub fn to_rescaled(s: &PhaseState, lambda: f64) -> PhaseState {
    PhaseState {
        x: s.x.clone(),
        xi: s.xi.iter().map(|v| v / lambda).collect(),
    }
}

/// Draws phase-space points on `{p = λ²}` (original variables).
///
/// Uniform samples take `x` uniformly in `{V <= λ²}` and `ξ` uniformly on
/// the sphere of radius `√(2(λ² - V(x)))`. Turning-point samples take a
/// uniform direction `ω`, a momentum size `|ξ| = κλ u` with `u ~ U[0,1]` and
/// place `x` on the ray `ℝ₊ω` at the level `V = λ² - |ξ|²/2`.
#[derive(Debug, Clone)]
pub struct ShellSampler<'a> {
    pot: &'a Potential,
    lambda: f64,
    box_radius: f64,
}

impl<'a> ShellSampler<'a> {
    pub fn new(pot: &'a Potential, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::precondition(format!("shell sampling: λ must be positive, got {lambda}")));
        }
        let box_radius = sublevel_radius(pot, lambda * lambda)?;
        Ok(ShellSampler {
            pot,
            lambda,
            box_radius,
        })
    }

    pub fn uniform<R: Rng>(&self, rng: &mut R) -> PhaseState {
        let l2 = self.lambda * self.lambda;
        let x = sample_sublevel(self.pot, l2, self.box_radius, rng);
        let speed = (2.0 * (l2 - self.pot.value(&x))).max(0.0).sqrt();
        let dir = random_direction(self.pot.dim(), rng);
        let xi = dir.iter().map(|v| v * speed).collect();
        self.project(PhaseState { x, xi })
    }

    /// Sample with `|ξ| <= momentum_fraction · λ`.
    pub fn turning<R: Rng>(&self, momentum_fraction: f64, rng: &mut R) -> PhaseState {
        let d = self.pot.dim();
        let l2 = self.lambda * self.lambda;
        let speed = momentum_fraction * self.lambda * rng.gen::<f64>();
        let level = l2 - 0.5 * speed * speed;
        let omega = random_direction(d, rng);
        // bisection along the ray; builtins increase radially
        let (mut lo, mut hi) = (0.0, self.box_radius * 2.0);
        let mut y = vec![0.0; d];
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            for i in 0..d {
                y[i] = mid * omega[i];
            }
            if self.pot.value(&y) < level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x: Vec<f64> = omega.iter().map(|w| w * lo).collect();
        let dir = random_direction(d, rng);
        let xi = dir.iter().map(|v| v * speed).collect();
        self.project(PhaseState { x, xi })
    }

    /// Rescales `ξ` so that `p = λ²` holds to round-off.
    fn project(&self, mut s: PhaseState) -> PhaseState {
        let l2 = self.lambda * self.lambda;
        let kin = (l2 - self.pot.value(&s.x)).max(0.0);
        let cur = 0.5 * s.xi.iter().map(|v| v * v).sum::<f64>();
        if cur > 0.0 {
            let f = (kin / cur).sqrt();
            for v in s.xi.iter_mut() {
                *v *= f;
            }
        }
        s
    }
}

pub(crate) fn random_direction<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    if dim == 1 {
        return vec![if rng.gen::<bool>() { 1.0 } else { -1.0 }];
    }
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = norm(&v);
        if n > 1e-3 && n <= 1.0 {
            return v.iter().map(|c| c / n).collect();
        }
    }
}

/// Evenly spaced unit directions, re-exported for callers building lattices.
pub fn direction_lattice(dim: usize, count: usize) -> Vec<Vec<f64>> {
    sphere_directions(dim, count)
        .into_iter()
        .map(|p| p[..dim].to_vec())
        .collect()
}
