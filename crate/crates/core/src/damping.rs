//! Damping coefficients and the averaged positivity conditions on them:
//! uniform geometric control along lines, ball averages near turning points,
//! and mollified averages along rescaled Hamiltonian trajectories.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{fmt_f64, shell_dt, verlet_walk, flow_to, PhaseState, ShellSampler};
use crate::error::{Error, Result};
use crate::geometry::{norm, sphere_directions, BallRule, MAX_DIM};
use crate::potentials::Potential;

/// Shape of a damping coefficient; the value is `amplitude` times the shape.
#[derive(Debug, Clone, PartialEq)]
pub enum DampingKind {
    Constant,
    /// `|x| >= radius`.
    Exterior { radius: f64 },
    /// `|x - center| <= radius`.
    Ball { radius: f64, center: Vec<f64> },
    /// Cells of side `period`; along each axis the fraction `duty` of the
    /// period starting at 0 is the "low" half. A point is damped when the
    /// number of axes in the high half is even, so `[0, duty·L)^d` is damped.
    Checkerboard { period: f64, duty: f64 },
    /// Checkerboard averaged over the cube of half-width `width`; Lipschitz.
    SmoothCheckerboard { period: f64, duty: f64, width: f64 },
    /// Spherical shells `frac(|x| / period) < duty`.
    RadialShells { period: f64, duty: f64 },
    /// Union over axes of the slabs `frac(x_i / period) < duty`.
    StripLattice { period: f64, duty: f64 },
    /// `x_axis > 0`.
    HalfSpace { axis: usize },
}

/// A damping coefficient `b : ℝ^d -> [0, b_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Damping {
    kind: DampingKind,
    dim: usize,
    amplitude: f64,
    label: String,
}

/// Parameters of a builtin damping as they appear in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DampingSpec {
    pub name: String,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default)]
    pub radius_space: Option<f64>,
    #[serde(default)]
    pub center_space: Option<Vec<f64>>,
    #[serde(default)]
    pub period_space: Option<f64>,
    #[serde(default)]
    pub duty: Option<f64>,
    #[serde(default)]
    pub width_space: Option<f64>,
    #[serde(default)]
    pub axis: Option<usize>,
}

fn one() -> f64 {
    1.0
}

impl DampingSpec {
    pub fn named(name: &str) -> Self {
        DampingSpec {
            name: name.to_string(),
            amplitude: 1.0,
            radius_space: None,
            center_space: None,
            period_space: None,
            duty: None,
            width_space: None,
            axis: None,
        }
    }

    pub fn build(&self, dim: usize) -> Result<Damping> {
        let radius = self.radius_space.unwrap_or(1.0);
        let period = self.period_space.unwrap_or(1.0);
        let duty = self.duty.unwrap_or(0.5);
        let kind = match self.name.as_str() {
            "constant" => DampingKind::Constant,
            "exterior" => DampingKind::Exterior { radius },
            "ball" => DampingKind::Ball {
                radius,
                center: self.center_space.clone().unwrap_or_else(|| vec![0.0; dim]),
            },
            "checkerboard" => DampingKind::Checkerboard { period, duty },
            "smooth_checkerboard" => DampingKind::SmoothCheckerboard {
                period,
                duty,
                width: self.width_space.unwrap_or(0.1 * period),
            },
            "radial_shells" => DampingKind::RadialShells { period, duty },
            "strip_lattice" => DampingKind::StripLattice { period, duty },
            "half_space" => DampingKind::HalfSpace {
                axis: self.axis.unwrap_or(0),
            },
            other => {
                return Err(Error::Unknown {
                    kind: "damping",
                    name: other.to_string(),
                })
            }
        };
        Damping::new(kind, dim, self.amplitude)
    }
}

impl Damping {
    pub fn new(kind: DampingKind, dim: usize, amplitude: f64) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::precondition(format!(
                "damping dimension must be in 1..={MAX_DIM}, got {dim}"
            )));
        }
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::precondition(format!(
                "damping amplitude must be non-negative, got {amplitude}"
            )));
        }
        let positive = |what: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::precondition(format!("damping {what} must be positive, got {v}")))
            }
        };
        let duty_ok = |duty: f64| {
            if duty > 0.0 && duty < 1.0 {
                Ok(())
            } else {
                Err(Error::precondition(format!("damping duty must lie in (0, 1), got {duty}")))
            }
        };
        let label = match &kind {
            DampingKind::Constant => "constant".to_string(),
            DampingKind::Exterior { radius } => {
                positive("radius", *radius)?;
                format!("exterior(R0={radius})")
            }
            DampingKind::Ball { radius, center } => {
                positive("radius", *radius)?;
                if center.len() != dim {
                    return Err(Error::precondition(format!(
                        "ball center has {} components, expected {dim}",
                        center.len()
                    )));
                }
                format!("ball(R0={radius})")
            }
            DampingKind::Checkerboard { period, duty } => {
                positive("period", *period)?;
                duty_ok(*duty)?;
                format!("checkerboard(L={period},duty={duty})")
            }
            DampingKind::SmoothCheckerboard { period, duty, width } => {
                positive("period", *period)?;
                positive("width", *width)?;
                duty_ok(*duty)?;
                format!("smooth_checkerboard(L={period},duty={duty},w={width})")
            }
            DampingKind::RadialShells { period, duty } => {
                positive("period", *period)?;
                duty_ok(*duty)?;
                format!("radial_shells(L={period},duty={duty})")
            }
            DampingKind::StripLattice { period, duty } => {
                positive("period", *period)?;
                duty_ok(*duty)?;
                format!("strip_lattice(L={period},duty={duty})")
            }
            DampingKind::HalfSpace { axis } => {
                if *axis >= dim {
                    return Err(Error::precondition(format!(
                        "half-space axis {axis} out of range for d = {dim}"
                    )));
                }
                format!("half_space(axis={axis})")
            }
        };
        Ok(Damping {
            kind,
            dim,
            amplitude,
            label,
        })
    }

    pub fn constant(dim: usize, amplitude: f64) -> Result<Self> {
        Damping::new(DampingKind::Constant, dim, amplitude)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn b_max(&self) -> f64 {
        self.amplitude
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn kind(&self) -> &DampingKind {
        &self.kind
    }

    /// The same shape with amplitude multiplied by `factor >= 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Damping::new(self.kind.clone(), self.dim, self.amplitude * factor)
    }

    /// True when `b` is the same constant everywhere.
    pub fn is_constant(&self) -> bool {
        matches!(self.kind, DampingKind::Constant)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.amplitude * self.shape(x)
    }

    #[inline]
    fn shape(&self, x: &[f64]) -> f64 {
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        match &self.kind {
            DampingKind::Constant => 1.0,
            DampingKind::Exterior { radius } => ind(sq(x) >= radius * radius),
            DampingKind::Ball { radius, center } => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                ind(r2 <= radius * radius)
            }
            DampingKind::Checkerboard { period, duty } => {
                let high = x.iter().filter(|v| frac(*v / period) >= *duty).count();
                ind(high % 2 == 0)
            }
            DampingKind::SmoothCheckerboard { period, duty, width } => {
                // probability that an even number of axes land in the high half
                let mut even = 1.0;
                for v in x {
                    let low = window_fraction(*v, *width, *period, *duty);
                    even = even * low + (1.0 - even) * (1.0 - low);
                }
                even
            }
            DampingKind::RadialShells { period, duty } => ind(frac(sq(x).sqrt() / period) < *duty),
            DampingKind::StripLattice { period, duty } => {
                ind(x.iter().any(|v| frac(v / period) < *duty))
            }
            DampingKind::HalfSpace { axis } => ind(x[*axis] > 0.0),
        }
    }
}

#[inline]
fn frac(u: f64) -> f64 {
    u - u.floor()
}

fn sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Fraction of `[v - w, v + w]` covered by `{frac(t / L) < duty}`.
fn window_fraction(v: f64, w: f64, period: f64, duty: f64) -> f64 {
    // antiderivative of the periodic indicator
    let cum = |t: f64| {
        let q = (t / period).floor();
        q * duty * period + ((t / period - q) * period).min(duty * period)
    };
    (cum(v + w) - cum(v - w)) / (2.0 * w)
}

/// Node counts for ball convolutions and line/time averages.
#[derive(Debug, Clone)]
pub struct Quadrature {
    ball: Arc<BallRule>,
    ray_nodes: usize,
}

impl Quadrature {
    pub fn new(dim: usize, conv_nodes: usize, ray_nodes: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::precondition(format!("quadrature dimension {dim} unsupported")));
        }
        if conv_nodes == 0 || ray_nodes < 2 {
            return Err(Error::precondition(
                "quadrature needs at least 1 convolution node and 2 ray nodes",
            ));
        }
        Ok(Quadrature {
            ball: Arc::new(BallRule::new(dim, conv_nodes)),
            ray_nodes,
        })
    }

    /// 512·d ball nodes and 256 line nodes.
    pub fn default_for(dim: usize) -> Result<Self> {
        Quadrature::new(dim, 512 * dim, 256)
    }

    pub fn conv_nodes(&self) -> usize {
        self.ball.len()
    }

    pub fn ray_nodes(&self) -> usize {
        self.ray_nodes
    }

    pub fn dim(&self) -> usize {
        self.ball.dim()
    }

    /// Equal-weight average of `f` over `B_r(x)`.
    #[inline]
    fn ball_average<F: Fn(&[f64]) -> f64>(&self, f: F, x: &[f64], r: f64) -> f64 {
        let d = x.len();
        let mut y = [0.0; MAX_DIM];
        let mut acc = 0.0;
        for node in self.ball.nodes() {
            for i in 0..d {
                y[i] = x[i] + r * node[i];
            }
            acc += f(&y[..d]);
        }
        acc / self.ball.len() as f64
    }

    /// Trapezoid weights (summing to 1) for `n` equispaced nodes.
    fn trapezoid_weight(&self, k: usize) -> f64 {
        let n = self.ray_nodes;
        let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
        w / (n - 1) as f64
    }
}

fn check_dim(b: &Damping, quad: &Quadrature, x: &[f64]) -> Result<()> {
    if x.len() != b.dim() || quad.dim() != b.dim() {
        return Err(Error::precondition(format!(
            "dimension mismatch: damping d = {}, quadrature d = {}, point d = {}",
            b.dim(),
            quad.dim(),
            x.len()
        )));
    }
    Ok(())
}

/// `(b ∗ κ_r)(x)`: average of `b` over `B_r(x)`.
pub fn mollify_at(b: &Damping, r: f64, x: &[f64], quad: &Quadrature) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::precondition(format!("mollifier radius must be positive, got {r}")));
    }
    check_dim(b, quad, x)?;
    Ok(mollify_unchecked(b, r, x, quad))
}

fn mollify_unchecked(b: &Damping, r: f64, x: &[f64], quad: &Quadrature) -> f64 {
    if b.is_constant() {
        return b.b_max();
    }
    b.amplitude * quad.ball_average(|y| b.shape(y), x, r)
}

fn check_unit(nu: &[f64]) -> Result<()> {
    let n = norm(nu);
    if (n - 1.0).abs() > 1e-12 {
        return Err(Error::precondition(format!("direction must be a unit vector, |ν| = {n}")));
    }
    Ok(())
}

/// Trapezoid average over `t ∈ [-T, T]` of `(b ∗ κ_r)(x0 + tν0)`.
pub fn ray_average(b: &Damping, x0: &[f64], nu0: &[f64], horizon: f64, r: f64, quad: &Quadrature) -> Result<f64> {
    check_dim(b, quad, x0)?;
    check_unit(nu0)?;
    if !(horizon > 0.0 && r > 0.0) {
        return Err(Error::precondition(format!(
            "ray average needs T > 0 and r > 0, got T = {horizon}, r = {r}"
        )));
    }
    Ok(line_average(b, r, x0, nu0, horizon, quad))
}

fn line_average(b: &Damping, r: f64, x0: &[f64], nu0: &[f64], horizon: f64, quad: &Quadrature) -> f64 {
    if b.is_constant() {
        return b.b_max();
    }
    ray_unchecked(|y| mollify_unchecked(b, r, y, quad), x0, nu0, horizon, quad)
}

fn ray_unchecked<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], nu0: &[f64], horizon: f64, quad: &Quadrature) -> f64 {
    let d = x0.len();
    let n = quad.ray_nodes;
    let mut y = [0.0; MAX_DIM];
    let mut acc = 0.0;
    for k in 0..n {
        let t = -horizon + 2.0 * horizon * k as f64 / (n - 1) as f64;
        for i in 0..d {
            y[i] = x0[i] + t * nu0[i];
        }
        acc += quad.trapezoid_weight(k) * f(&y[..d]);
    }
    acc
}

/// Which averaged condition a report describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionTag {
    #[serde(rename = "UGCC")]
    Ugcc,
    #[serde(rename = "TPC")]
    Tpc,
    #[serde(rename = "DSC")]
    Dsc,
    #[serde(rename = "DSC_LIMIT")]
    DscLimit,
}

impl ConditionTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConditionTag::Ugcc => "UGCC",
            ConditionTag::Tpc => "TPC",
            ConditionTag::Dsc => "DSC",
            ConditionTag::DscLimit => "DSC_LIMIT",
        }
    }
}

/// One averaged value. `group` is the mollifier radius for line scans, the
/// shell radius for ball scans and `λ` for trajectory scans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSample {
    pub group: f64,
    pub x: Vec<f64>,
    pub direction: Vec<f64>,
    pub average: f64,
}

/// Per-group infimum, used as the trend table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupInfimum {
    pub group: f64,
    pub infimum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub tag: ConditionTag,
    pub damping: String,
    pub params: BTreeMap<String, f64>,
    pub samples: Vec<ConditionSample>,
    pub trend: Vec<GroupInfimum>,
    /// Minimum over all samples.
    pub infimum: f64,
    /// Infimum over the last group (largest shell or `λ`).
    pub liminf_proxy: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl ConditionReport {
    fn assemble(
        tag: ConditionTag,
        b: &Damping,
        params: BTreeMap<String, f64>,
        samples: Vec<ConditionSample>,
        threshold: f64,
    ) -> Self {
        let mut trend: Vec<GroupInfimum> = Vec::new();
        for s in &samples {
            match trend.iter_mut().find(|g| g.group == s.group) {
                Some(g) => g.infimum = g.infimum.min(s.average),
                None => trend.push(GroupInfimum {
                    group: s.group,
                    infimum: s.average,
                }),
            }
        }
        let infimum = samples.iter().map(|s| s.average).fold(f64::INFINITY, f64::min);
        let liminf_proxy = trend.last().map_or(f64::INFINITY, |g| g.infimum);
        let decisive = if tag == ConditionTag::Ugcc { infimum } else { liminf_proxy };
        ConditionReport {
            tag,
            damping: b.label().to_string(),
            params,
            samples,
            trend,
            infimum,
            liminf_proxy,
            threshold,
            pass: decisive > 0.0 && decisive >= threshold,
        }
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// One row per sample: `group, x_1..x_d, dir_1..dir_d, average`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.samples.first().map_or(0, |s| s.x.len());
        let mut header = vec!["group".to_string()];
        header.extend((1..=d).map(|i| format!("x_{i}")));
        header.extend((1..=d).map(|i| format!("dir_{i}")));
        header.push("average".into());
        writeln!(w, "{}", header.join(","))?;
        for s in &self.samples {
            let mut row = vec![fmt_f64(s.group)];
            row.extend(s.x.iter().map(|v| fmt_f64(*v)));
            row.extend(s.direction.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(s.average));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Shared knobs for the condition scans.
#[derive(Debug, Clone)]
pub struct ScanSettings {
    pub quadrature: Quadrature,
    /// Pass threshold; `None` means `1e-3 · b_max`.
    pub threshold: Option<f64>,
}

impl ScanSettings {
    pub fn default_for(dim: usize) -> Result<Self> {
        Ok(ScanSettings {
            quadrature: Quadrature::default_for(dim)?,
            threshold: None,
        })
    }

    fn threshold_for(&self, b: &Damping) -> f64 {
        self.threshold.unwrap_or(1e-3 * b.b_max())
    }
}

/// Lattice of base points in `[-half_width, half_width]^d` times evenly
/// spread directions.
pub fn ugcc_lattice(dim: usize, half_width: f64, per_axis: usize, directions: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let per_axis = per_axis.max(1);
    let coord = |k: usize| {
        if per_axis == 1 {
            0.0
        } else {
            -half_width + 2.0 * half_width * k as f64 / (per_axis - 1) as f64
        }
    };
    let dirs = sphere_directions(dim, directions);
    let total = per_axis.pow(dim as u32);
    let mut out = Vec::with_capacity(total * dirs.len());
    for idx in 0..total {
        let mut rem = idx;
        let mut x = vec![0.0; dim];
        for xi in x.iter_mut() {
            *xi = coord(rem % per_axis);
            rem /= per_axis;
        }
        for dir in &dirs {
            out.push((x.clone(), dir[..dim].to_vec()));
        }
    }
    out
}

/// Line averages of `b ∗ κ_r` over `[-T, T]` at every base point.
pub fn ugcc_scan(
    b: &Damping,
    horizon: f64,
    r: f64,
    base_points: &[(Vec<f64>, Vec<f64>)],
    settings: &ScanSettings,
) -> Result<ConditionReport> {
    if base_points.is_empty() {
        return Err(Error::precondition("ugcc_scan: empty base point list"));
    }
    let quad = &settings.quadrature;
    for (x, nu) in base_points {
        check_dim(b, quad, x)?;
        check_unit(nu)?;
    }
    if !(horizon > 0.0 && r > 0.0) {
        return Err(Error::precondition(format!(
            "ugcc_scan needs T > 0 and r > 0, got T = {horizon}, r = {r}"
        )));
    }
    let samples: Vec<ConditionSample> = base_points
        .par_iter()
        .map(|(x, nu)| ConditionSample {
            group: r,
            x: x.clone(),
            direction: nu.clone(),
            average: line_average(b, r, x, nu, horizon, quad),
        })
        .collect();
    let params = BTreeMap::from([("T_time".to_string(), horizon), ("r_space".to_string(), r)]);
    Ok(ConditionReport::assemble(
        ConditionTag::Ugcc,
        b,
        params,
        samples,
        settings.threshold_for(b),
    ))
}

/// Ball averages of `b` over `B_{R/V(x)^{1/4}}(x)` for `x` on spheres
/// `|x| = shell`, with `directions` points per sphere.
pub fn tpc_scan(
    b: &Damping,
    pot: &Potential,
    big_r: f64,
    shells: &[f64],
    directions: usize,
    settings: &ScanSettings,
) -> Result<ConditionReport> {
    if shells.is_empty() || shells.windows(2).any(|w| w[1] <= w[0]) || shells[0] <= 0.0 {
        return Err(Error::precondition("tpc_scan: shells must be positive and increasing"));
    }
    if !(big_r > 0.0) {
        return Err(Error::precondition(format!("tpc_scan: R must be positive, got {big_r}")));
    }
    if pot.dim() != b.dim() {
        return Err(Error::precondition("tpc_scan: potential and damping dimensions differ"));
    }
    let d = b.dim();
    let quad = &settings.quadrature;
    let dirs = sphere_directions(d, directions);
    let points: Vec<(f64, Vec<f64>)> = shells
        .iter()
        .flat_map(|s| dirs.iter().map(move |w| (*s, w[..d].iter().map(|c| c * s).collect())))
        .collect();
    let samples: Vec<Result<ConditionSample>> = points
        .par_iter()
        .map(|(shell, x)| {
            let v = pot.value(x);
            if !(v > 0.0) {
                return Err(Error::numerical(format!(
                    "tpc_scan: V vanishes at sampled point with |x| = {shell}"
                )));
            }
            let radius = big_r / v.powf(0.25);
            Ok(ConditionSample {
                group: *shell,
                x: x.clone(),
                direction: vec![0.0; d],
                average: mollify_unchecked(b, radius, x, quad),
            })
        })
        .collect();
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    let params = BTreeMap::from([("R_space".to_string(), big_r)]);
    Ok(ConditionReport::assemble(
        ConditionTag::Tpc,
        b,
        params,
        samples,
        settings.threshold_for(b),
    ))
}

/// `⟨b ∗ κ_{R/√λ}⟩_{T/λ}(ρ)`: trapezoid average over `t ∈ [-T/λ, T/λ]` of
/// the mollified damping along the flow through `ρ` (original variables).
pub fn flow_average(
    b: &Damping,
    pot: &Potential,
    rho: &PhaseState,
    horizon: f64,
    big_r: f64,
    lambda: f64,
    quad: &Quadrature,
) -> Result<f64> {
    check_dim(b, quad, &rho.x)?;
    if !(lambda > 0.0 && big_r > 0.0 && horizon >= 0.0) {
        return Err(Error::precondition(format!(
            "flow_average needs λ > 0, R > 0, T >= 0; got λ = {lambda}, R = {big_r}, T = {horizon}"
        )));
    }
    let l2 = lambda * lambda;
    let p = rho.energy(pot);
    if (p - l2).abs() > 1e-8 * l2 {
        return Err(Error::precondition(format!(
            "flow_average: state is not on the shell p = λ² (p = {p}, λ² = {l2})"
        )));
    }
    Ok(flow_average_unchecked(b, pot, rho, horizon, big_r, lambda, quad))
}

fn flow_average_unchecked(
    b: &Damping,
    pot: &Potential,
    rho: &PhaseState,
    horizon: f64,
    big_r: f64,
    lambda: f64,
    quad: &Quadrature,
) -> f64 {
    let radius = big_r / lambda.sqrt();
    if horizon == 0.0 || b.is_constant() {
        return mollify_unchecked(b, radius, &rho.x, quad);
    }
    let dt = shell_dt(lambda);
    let t_end = horizon / lambda;
    let n = quad.ray_nodes;
    let spacing = 2.0 * t_end / (n - 1) as f64;
    let sub = (spacing / dt).ceil().max(1.0) as usize;
    let h = spacing / sub as f64;
    let start = flow_to(pot, rho, -t_end, dt);
    let mut acc = quad.trapezoid_weight(0) * mollify_unchecked(b, radius, &start.x, quad);
    verlet_walk(pot, &start, h, sub * (n - 1), |k, x, _| {
        if k % sub == 0 {
            acc += quad.trapezoid_weight(k / sub) * mollify_unchecked(b, radius, x, quad);
        }
    });
    acc
}

/// Flow averages at shell samples for each `λ`. A fifth of the samples are
/// drawn near turning points (`|ξ| <= 0.1 λ`).
#[allow(clippy::too_many_arguments)]
pub fn dsc_scan(
    b: &Damping,
    pot: &Potential,
    horizon: f64,
    big_r: f64,
    lambdas: &[f64],
    shell_samples: usize,
    seed: u64,
    settings: &ScanSettings,
) -> Result<ConditionReport> {
    if lambdas.is_empty() || lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::precondition("dsc_scan: λ list must be non-empty and positive"));
    }
    if shell_samples == 0 {
        return Err(Error::precondition("dsc_scan: need at least one shell sample"));
    }
    if pot.dim() != b.dim() {
        return Err(Error::precondition("dsc_scan: potential and damping dimensions differ"));
    }
    if !(horizon >= 0.0 && big_r > 0.0) {
        return Err(Error::precondition("dsc_scan: need T >= 0 and R > 0"));
    }
    let mut lambdas = lambdas.to_vec();
    lambdas.sort_by(f64::total_cmp);
    let turning = shell_samples / 5;
    let mut states: Vec<(f64, PhaseState)> = Vec::with_capacity(lambdas.len() * shell_samples);
    for (i, &lam) in lambdas.iter().enumerate() {
        let sampler = ShellSampler::new(pot, lam)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        for k in 0..shell_samples {
            let s = if k < turning {
                sampler.turning(0.1, &mut rng)
            } else {
                sampler.uniform(&mut rng)
            };
            states.push((lam, s));
        }
    }
    let quad = &settings.quadrature;
    let samples: Vec<ConditionSample> = states
        .par_iter()
        .map(|(lam, s)| ConditionSample {
            group: *lam,
            x: s.x.clone(),
            direction: s.xi.clone(),
            average: flow_average_unchecked(b, pot, s, horizon, big_r, *lam, quad),
        })
        .collect();
    let params = BTreeMap::from([
        ("T_time".to_string(), horizon),
        ("R_space".to_string(), big_r),
        ("shell_samples".to_string(), shell_samples as f64),
    ]);
    Ok(ConditionReport::assemble(
        ConditionTag::Dsc,
        b,
        params,
        samples,
        settings.threshold_for(b),
    ))
}

/// Liminf proxies of the trajectory condition over a `(T, R)` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DscLimitTable {
    pub damping: String,
    pub horizons: Vec<f64>,
    pub radii: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// `values[i][j]` at `(horizons[i], radii[j])`.
    pub values: Vec<Vec<f64>>,
    /// Value at the largest `(T, R)`.
    pub margin: f64,
    /// Successive differences along the diagonal `(T_k, R_k)`.
    pub cauchy_trend: Vec<f64>,
}

impl DscLimitTable {
    /// CSV with columns `T_time, R_space, liminf_proxy`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "T_time,R_space,liminf_proxy")?;
        for (i, t) in self.horizons.iter().enumerate() {
            for (j, r) in self.radii.iter().enumerate() {
                writeln!(w, "{},{},{}", fmt_f64(*t), fmt_f64(*r), fmt_f64(self.values[i][j]))?;
            }
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
pub fn dsc_limit_scan(
    b: &Damping,
    pot: &Potential,
    horizons: &[f64],
    radii: &[f64],
    lambdas: &[f64],
    shell_samples: usize,
    seed: u64,
    settings: &ScanSettings,
) -> Result<DscLimitTable> {
    let ascending = |v: &[f64]| !v.is_empty() && v.windows(2).all(|w| w[0] < w[1]);
    if !ascending(horizons) || !ascending(radii) {
        return Err(Error::precondition("dsc_limit_scan: T and R grids must be non-empty and ascending"));
    }
    let mut values = Vec::with_capacity(horizons.len());
    for &t in horizons {
        let mut row = Vec::with_capacity(radii.len());
        for &r in radii {
            let rep = dsc_scan(b, pot, t, r, lambdas, shell_samples, seed, settings)?;
            row.push(rep.liminf_proxy);
        }
        values.push(row);
    }
    let margin = *values.last().and_then(|r| r.last()).unwrap();
    let diag = horizons.len().min(radii.len());
    let cauchy_trend = (1..diag).map(|k| values[k][k] - values[k - 1][k - 1]).collect();
    let mut lambdas = lambdas.to_vec();
    lambdas.sort_by(f64::total_cmp);
    Ok(DscLimitTable {
        damping: b.label().to_string(),
        horizons: horizons.to_vec(),
        radii: radii.to_vec(),
        lambdas,
        values,
        margin,
        cauchy_trend,
    })
}

/// Line averages of the pre-smoothed damping `b ∗ κ_{r0}` mollified again
/// at each radius of a decreasing sequence, next to the unmollified line
/// average of `b ∗ κ_{r0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MollificationTable {
    pub r0: f64,
    pub radii: Vec<f64>,
    pub entries: Vec<f64>,
    /// Line average of `b ∗ κ_{r0}` itself.
    pub line_average: f64,
    /// `|entry(r_k) - entry(r_{k-1})|`.
    pub successive_differences: Vec<f64>,
}

impl MollificationTable {
    pub fn final_gap(&self) -> f64 {
        (self.entries.last().unwrap() - self.line_average).abs()
    }
}

pub fn mollification_consistency(
    b: &Damping,
    x0: &[f64],
    nu0: &[f64],
    horizon: f64,
    r0: f64,
    radii: &[f64],
    quad: &Quadrature,
) -> Result<MollificationTable> {
    check_dim(b, quad, x0)?;
    check_unit(nu0)?;
    if radii.is_empty() || radii.windows(2).any(|w| w[1] >= w[0]) || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::precondition(
            "mollification_consistency: radii must be positive and decreasing",
        ));
    }
    if !(horizon > 0.0 && r0 > 0.0) {
        return Err(Error::precondition("mollification_consistency: need T > 0 and r0 > 0"));
    }
    let smoothed = |y: &[f64]| mollify_unchecked(b, r0, y, quad);
    let line_average = line_average(b, r0, x0, nu0, horizon, quad);
    let entries: Vec<f64> = radii
        .par_iter()
        .map(|&r| {
            if b.is_constant() {
                b.b_max()
            } else {
                ray_unchecked(|y| quad.ball_average(smoothed, y, r), x0, nu0, horizon, quad)
            }
        })
        .collect();
    let successive_differences = entries.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    Ok(MollificationTable {
        r0,
        radii: radii.to_vec(),
        entries,
        line_average,
        successive_differences,
    })
}
