//! Explicit approximate eigenfunctions of `P`: wave packets travelling along
//! straight lines at high kinetic energy, and bumps sitting at turning
//! points where `V(x0) = λ²`.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::damping::{mollify_at, Damping, Quadrature};
use crate::error::{Error, Result};
use crate::fields::{check_axis_resolution, damping_pairing, l2_norm, mass_in_ball, Field, Grid, GridOperator};
use crate::geometry::{norm, sphere_directions, BallRule};
use crate::potentials::{epsilon_lambda, sublevel_radius, EpsilonProfile, Potential};

/// Unnormalized bump `exp(-1/(1 - |x|²))` on the open unit ball.
pub fn bump_value(x: &[f64]) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if r2 < 1.0 {
        (-1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

/// The bump sampled on `grid` and scaled to unit discrete `L²` norm.
pub fn bump_profile(grid: &Grid) -> Result<Field> {
    let mut f = Field::from_fn(grid, |x| Complex64::new(bump_value(x), 0.0));
    let n = l2_norm(&f);
    if !(n > 0.0) {
        return Err(Error::precondition("bump profile: grid has no node inside the unit ball"));
    }
    f.scale(1.0 / n);
    Ok(f)
}

/// Norms of the normalized bump used as the constant in the turning-point
/// bound: `‖Δk‖`, `‖|x| k‖` and `‖k‖_∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpNorms {
    pub laplacian: f64,
    pub moment: f64,
    pub sup: f64,
}

impl BumpNorms {
    /// Computed on a fine grid of `[-1, 1]^d`.
    pub fn compute(dim: usize) -> Result<Self> {
        let n = if dim == 1 { 8001 } else { 801 };
        let grid = Grid::cube(dim, 1.0, n)?;
        let k = bump_profile(&grid)?;
        let zero = Potential::builtin("harmonic", dim, &[])?;
        // Δk = -2 (P k - V k)
        let op = GridOperator::new(&zero, &grid)?;
        let pk = op.apply(&k)?;
        let lap: Vec<Complex64> = pk
            .values()
            .iter()
            .zip(k.values())
            .zip(op.potential_values())
            .map(|((p, v), pot)| -2.0 * (p - pot * v))
            .collect();
        let laplacian = l2_norm(&Field::from_values(&grid, lap)?);
        let mom: Vec<Complex64> = k
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| v * norm(&grid.point(i)[..dim]))
            .collect();
        let moment = l2_norm(&Field::from_values(&grid, mom)?);
        let sup = k.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
        Ok(BumpNorms {
            laplacian,
            moment,
            sup,
        })
    }

    pub fn constant(&self) -> f64 {
        self.laplacian + self.moment
    }
}

/// `T_ρ f(x) = e^{-(i/2) ξ0·x0} e^{i ξ0·x} f(x - x0)` with `x0` snapped to a
/// whole number of grid steps per axis.
pub fn phase_translate(f: &Field, x0: &[f64], xi0: &[f64]) -> Result<Field> {
    let g = f.grid();
    let d = g.dim();
    if x0.len() != d || xi0.len() != d {
        return Err(Error::precondition("phase_translate: ρ dimension differs from grid"));
    }
    let shift: Vec<i64> = (0..d).map(|a| (x0[a] / g.spacing(a)).round() as i64).collect();
    let snapped: Vec<f64> = (0..d).map(|a| shift[a] as f64 * g.spacing(a)).collect();
    let counts = g.counts();
    let mut out = vec![Complex64::new(0.0, 0.0); g.len()];
    let global = Complex64::new(0.0, -0.5 * dot(xi0, &snapped)).exp();
    for (i, v) in f.values().iter().enumerate() {
        if *v == Complex64::new(0.0, 0.0) {
            continue;
        }
        let k = g.unravel(i);
        let mut target = 0usize;
        for a in 0..d {
            let m = k[a] as i64 + shift[a];
            if m < 2 || m + 2 >= counts[a] as i64 {
                return Err(Error::precondition(
                    "phase_translate: support overflow, translated field leaves the grid interior",
                ));
            }
            target = target * counts[a] + m as usize;
        }
        let x = g.point(target);
        out[target] = global * Complex64::new(0.0, dot(xi0, &x[..d])).exp() * v;
    }
    Field::from_values(g, out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Parameters of a kinetic wave packet `T_ρ M k` with `ρ = (x, λν)` and
/// dilation `Σ = t |ν⟩⟨ν| + w (I - |ν⟩⟨ν|)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavePacketSpec {
    pub base: Vec<f64>,
    pub direction: Vec<f64>,
    /// Longitudinal half-length `t`.
    pub length: f64,
    /// Transverse width bound `r`.
    pub width: f64,
    pub lambda: f64,
    /// Transverse eigenvalue `w` of the dilation.
    pub transverse: f64,
    /// Sequence index, when built by [`WavePacketSpec::from_sequence`].
    pub index: Option<usize>,
}

impl WavePacketSpec {
    /// Sequence member: `λ = max{(n+1)²/r², n sup_{B_t(x)} V}` and
    /// transverse eigenvalue `(n+1)/√λ`.
    pub fn from_sequence(
        pot: &Potential,
        n: usize,
        base: Vec<f64>,
        direction: Vec<f64>,
        length: f64,
        width: f64,
    ) -> Result<Self> {
        if base.len() != pot.dim() || direction.len() != pot.dim() {
            return Err(Error::precondition("wave packet: base/direction dimension mismatch"));
        }
        if (norm(&direction) - 1.0).abs() > 1e-12 {
            return Err(Error::precondition("wave packet: direction must be a unit vector"));
        }
        if !(length > 0.0 && width > 0.0) {
            return Err(Error::precondition("wave packet: t and r must be positive"));
        }
        let np1 = (n + 1) as f64;
        let sup_v = ball_sup(pot, &base, length);
        let lambda = (np1 * np1 / (width * width)).max(n as f64 * sup_v);
        Ok(WavePacketSpec {
            base,
            direction,
            length,
            width,
            lambda,
            transverse: np1 / lambda.sqrt(),
            index: Some(n),
        })
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    /// Dilation matrix, row-major.
    pub fn sigma(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        let proj = self.direction[i] * self.direction[j];
                        let id = if i == j { 1.0 } else { 0.0 };
                        self.length * proj + self.transverse * (id - proj)
                    })
                    .collect()
            })
            .collect()
    }

    /// Coordinates of `y` in the frame `(ν, ν^⊥)` scaled by `Σ^{-1}`.
    fn pull_back(&self, y: &[f64]) -> [f64; 2] {
        let along = dot(y, &self.direction);
        if self.dim() == 1 {
            return [along / self.length, 0.0];
        }
        let perp = [-self.direction[1], self.direction[0]];
        [along / self.length, dot(y, &perp) / self.transverse]
    }

    /// Grid aligned with the axes that contains the support with a margin
    /// and resolves the oscillation with `ppw` points per wavelength.
    pub fn grid(&self, ppw: f64) -> Result<Grid> {
        let d = self.dim();
        let mut half = Vec::with_capacity(d);
        let mut counts = Vec::with_capacity(d);
        for a in 0..d {
            // extent of the ellipse x + Σ B_1 along axis a
            let nu = self.direction[a];
            let ext = ((self.length * nu).powi(2) + (self.transverse * nu.mul_add(-nu, 1.0).max(0.0).sqrt()).powi(2)).sqrt();
            let freq = self.lambda * nu.abs() + 2.0 * std::f64::consts::PI / self.length.min(self.transverse);
            let h_max = 2.0 * std::f64::consts::PI / (freq * ppw);
            let envelope = self.length.min(self.transverse) / 16.0;
            let h = h_max.min(envelope);
            let l = ext * 1.05 + 4.0 * h;
            let mut n = (2.0 * l / h).ceil() as usize + 1;
            if n % 2 == 0 {
                n += 1;
            }
            half.push(l);
            counts.push(n.max(9));
        }
        Grid::new(self.base.clone(), half, counts)
    }
}

/// `sup V` over `B_radius(center)`, sampled on ball nodes and its boundary.
fn ball_sup(pot: &Potential, center: &[f64], radius: f64) -> f64 {
    let d = pot.dim();
    let mut best = pot.value(center);
    let mut y = vec![0.0; d];
    let rule = BallRule::new(d, 256 * d);
    for node in rule.nodes() {
        for i in 0..d {
            y[i] = center[i] + radius * node[i];
        }
        best = best.max(pot.value(&y));
    }
    for dir in sphere_directions(d, 128 * d) {
        for i in 0..d {
            y[i] = center[i] + radius * dir[i];
        }
        best = best.max(pot.value(&y));
    }
    best
}

/// Grid summary stored in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub counts: Vec<usize>,
    pub half_widths: Vec<f64>,
    pub centers: Vec<f64>,
}

impl From<&Grid> for GridMeta {
    fn from(g: &Grid) -> Self {
        GridMeta {
            counts: g.counts().to_vec(),
            half_widths: g.half_widths().to_vec(),
            centers: g.centers().to_vec(),
        }
    }
}

/// The turning-point bound `C (1/R² + R ε̂(λ))`, kept as separate terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub constant: f64,
    pub inverse_r_squared: f64,
    pub r_times_epsilon: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasimodeReport {
    pub family: String,
    pub index: Option<usize>,
    pub center: Vec<f64>,
    pub lambda: f64,
    /// Energy `E` at which the residual `‖(P - E)u‖ / (√E ‖u‖)` is measured.
    pub energy: f64,
    pub residual_ratio: f64,
    pub damping_pairing: Option<f64>,
    /// `(radius, mass fraction)` around the center.
    pub masses: Vec<(f64, f64)>,
    pub norm: f64,
    pub big_r: Option<f64>,
    pub ball_average: Option<f64>,
    pub bound: Option<BoundTerms>,
    pub grid: GridMeta,
}

/// Builds `T_ρ M k` on `grid` (see [`WavePacketSpec::grid`]).
///
/// The packet carries momentum `λν`, so it lives on the energy shell
/// `|ξ|²/2 = λ²/2`; the residual is measured at that energy.
pub fn kinetic_wavepacket(
    pot: &Potential,
    spec: &WavePacketSpec,
    grid: &Grid,
    damping: Option<&Damping>,
    ppw: f64,
) -> Result<(Field, QuasimodeReport)> {
    let d = spec.dim();
    if grid.dim() != d || pot.dim() != d {
        return Err(Error::precondition("kinetic_wavepacket: dimension mismatch"));
    }
    for a in 0..d {
        let freq = spec.lambda * spec.direction[a].abs();
        if freq > 0.0 {
            check_axis_resolution(grid, a, freq, ppw)?;
        }
    }
    let support_ok = sphere_directions(d, 256).iter().all(|w| {
        // boundary of the ellipse x + Σ S^{d-1}
        let mut y = vec![0.0; d];
        let sigma = spec.sigma();
        for i in 0..d {
            y[i] = spec.base[i] + (0..d).map(|j| sigma[i][j] * w[j]).sum::<f64>();
        }
        grid.depth(&y) > 2.0 * (0..d).map(|a| grid.spacing(a)).fold(0.0, f64::max)
    });
    if !support_ok {
        return Err(Error::precondition(
            "kinetic_wavepacket: support overflow, grid does not contain the packet with margin",
        ));
    }
    let xi0: Vec<f64> = spec.direction.iter().map(|v| v * spec.lambda).collect();
    let phase0 = -0.5 * dot(&xi0, &spec.base);
    let mut u = Field::from_fn(grid, |x| {
        let y: Vec<f64> = x.iter().zip(&spec.base).map(|(a, b)| a - b).collect();
        let z = spec.pull_back(&y);
        let k = bump_value(&z[..d]);
        if k == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            k * Complex64::new(0.0, phase0 + dot(&xi0, x)).exp()
        }
    });
    let n = l2_norm(&u);
    if !(n > 0.0) {
        return Err(Error::numerical("kinetic_wavepacket: packet vanishes on the grid"));
    }
    u.scale(1.0 / n);
    let energy = 0.5 * spec.lambda * spec.lambda;
    let op = GridOperator::new(pot, grid)?;
    let residual_ratio = op.residual_ratio(&u, energy.sqrt())?;
    let damping_pairing = damping.map(|b| damping_pairing(b, &u)).transpose()?;
    let masses = [0.5 * spec.length, spec.length]
        .iter()
        .map(|&r| Ok((r, mass_in_ball(&u, &spec.base, r)?)))
        .collect::<Result<Vec<_>>>()?;
    let report = QuasimodeReport {
        family: "kinetic".into(),
        index: spec.index,
        center: spec.base.clone(),
        lambda: spec.lambda,
        energy,
        residual_ratio,
        damping_pairing,
        masses,
        norm: l2_norm(&u),
        big_r: None,
        ball_average: None,
        bound: None,
        grid: grid.into(),
    };
    Ok((u, report))
}

/// Wavenumber of the largest discrete Fourier coefficient, per axis.
pub fn fourier_peak(f: &Field) -> Vec<f64> {
    let g = f.grid();
    let d = g.dim();
    let data = spectrum(f);
    let (imax, _) = data
        .iter()
        .enumerate()
        .fold((0, -1.0), |(bi, bv), (i, v)| if v.norm() > bv { (i, v.norm()) } else { (bi, bv) });
    let k = g.unravel(imax);
    (0..d).map(|a| bin_frequency(g, a, k[a])).collect()
}

/// Unnormalized discrete Fourier transform over all axes.
pub(crate) fn spectrum(f: &Field) -> Vec<Complex64> {
    let g = f.grid();
    let d = g.dim();
    let counts = g.counts();
    let mut data = f.values().to_vec();
    let mut planner = FftPlanner::<f64>::new();
    // last axis: contiguous rows
    let last = counts[d - 1];
    let fft = planner.plan_fft_forward(last);
    for row in data.chunks_mut(last) {
        fft.process(row);
    }
    if d == 2 {
        let (rows, cols) = (counts[0], counts[1]);
        let fft = planner.plan_fft_forward(rows);
        let mut column = vec![Complex64::new(0.0, 0.0); rows];
        for c in 0..cols {
            for r in 0..rows {
                column[r] = data[r * cols + c];
            }
            fft.process(&mut column);
            for r in 0..rows {
                data[r * cols + c] = column[r];
            }
        }
    }
    data
}

/// Signed angular frequency of bin `k` along `axis`.
pub(crate) fn bin_frequency(g: &Grid, axis: usize, k: usize) -> f64 {
    let n = g.counts()[axis];
    let m = if k > n / 2 { k as f64 - n as f64 } else { k as f64 };
    2.0 * std::f64::consts::PI * m / (n as f64 * g.spacing(axis))
}

/// Width of one discrete Fourier bin along `axis`.
pub fn fourier_bin(grid: &Grid, axis: usize) -> f64 {
    2.0 * std::f64::consts::PI / (grid.counts()[axis] as f64 * grid.spacing(axis))
}

/// Grid centered on `x0` (snapped) covering `B_r(x0)` with `n` points per axis.
pub fn bump_grid(x0: &[f64], r: f64, n: usize) -> Result<Grid> {
    let n = if n % 2 == 0 { n + 1 } else { n };
    let half = r * (1.0 + 8.0 / (n - 1) as f64);
    Grid::new(x0.to_vec(), vec![half; x0.len()], vec![n; x0.len()])
}

/// `u(x) = r^{-d/2} k((x - x0)/r)` with `λ = √V(x0)` and `r = R/√λ`.
pub fn turning_point_bump(
    pot: &Potential,
    x0: &[f64],
    big_r: f64,
    grid: &Grid,
    damping: Option<&Damping>,
    eps: &EpsilonProfile,
    norms: &BumpNorms,
) -> Result<(Field, QuasimodeReport)> {
    let d = pot.dim();
    if x0.len() != d || grid.dim() != d {
        return Err(Error::precondition("turning_point_bump: dimension mismatch"));
    }
    let lambda = pot.value(x0).sqrt();
    if !(lambda >= 1.0) {
        return Err(Error::precondition(format!(
            "turning_point_bump: need V(x0) >= 1 so that λ >= 1, got λ = {lambda}"
        )));
    }
    if !(1.0..=lambda).contains(&big_r) {
        return Err(Error::precondition(format!(
            "turning_point_bump: R = {big_r} outside [1, λ] with λ = {lambda}"
        )));
    }
    let r = big_r / lambda.sqrt();
    let h = (0..d).map(|a| grid.spacing(a)).fold(0.0, f64::max);
    if h > r / 16.0 {
        return Err(Error::precondition(format!(
            "turning_point_bump: grid spacing {h:.3e} does not resolve the bump radius {r:.3e}"
        )));
    }
    if grid.depth(x0) < r + 2.0 * h {
        return Err(Error::precondition("turning_point_bump: support overflow"));
    }
    let mut u = Field::from_fn(grid, |x| {
        let z: Vec<f64> = x.iter().zip(x0).map(|(a, b)| (a - b) / r).collect();
        Complex64::new(bump_value(&z), 0.0)
    });
    let n = l2_norm(&u);
    if !(n > 0.0) {
        return Err(Error::numerical("turning_point_bump: bump vanishes on the grid"));
    }
    u.scale(1.0 / n);
    let op = GridOperator::new(pot, grid)?;
    let residual_ratio = op.residual_ratio(&u, lambda)?;
    let damping_pairing = damping.map(|b| damping_pairing(b, &u)).transpose()?;
    let masses = [0.5 * r, r, 2.0 * r]
        .iter()
        .map(|&rad| Ok((rad, mass_in_ball(&u, x0, rad)?)))
        .collect::<Result<Vec<_>>>()?;
    let constant = norms.constant();
    let inverse_r_squared = 1.0 / (big_r * big_r);
    let r_times_epsilon = big_r * eps.at(lambda);
    let report = QuasimodeReport {
        family: "turning_point".into(),
        index: None,
        center: x0.to_vec(),
        lambda,
        energy: lambda * lambda,
        residual_ratio,
        damping_pairing,
        masses,
        norm: l2_norm(&u),
        big_r: Some(big_r),
        ball_average: None,
        bound: Some(BoundTerms {
            constant,
            inverse_r_squared,
            r_times_epsilon,
            bound: constant * (inverse_r_squared + r_times_epsilon),
        }),
        grid: grid.into(),
    };
    Ok((u, report))
}

/// Knobs for [`tpc_violation_sequence`].
#[derive(Debug, Clone)]
pub struct ViolationSearch {
    /// Points per search shell.
    pub angles: usize,
    /// Number of shells scanned outward from the starting radius.
    pub shells: usize,
    /// Radial step between shells, as a fraction of the starting radius.
    pub shell_step: f64,
    /// Grid points per axis for each bump.
    pub grid_points: usize,
    pub quadrature: Quadrature,
}

impl ViolationSearch {
    pub fn default_for(dim: usize) -> Result<Self> {
        Ok(ViolationSearch {
            angles: if dim == 1 { 2 } else { 256 },
            shells: 64,
            shell_step: 0.01,
            grid_points: if dim == 1 { 2049 } else { 161 },
            quadrature: Quadrature::default_for(dim)?,
        })
    }
}

/// Smallest `λ` on the profile grid at which `R = n + 1` satisfies
/// `R <= min(ε̂(λ)^{-1/2}, λ)`.
fn admissible_lambda(eps: &EpsilonProfile, big_r: f64) -> Option<f64> {
    eps.lambdas
        .iter()
        .zip(&eps.epsilon)
        .find(|(l, e)| big_r <= e.powf(-0.5).min(**l))
        .map(|(l, _)| *l)
}

/// Geometric `λ` grid used for the sequence's `ε̂` profile.
pub fn sequence_epsilon_profile(pot: &Potential) -> Result<EpsilonProfile> {
    let lambdas: Vec<f64> = (0..=96).map(|k| 10f64.powf(k as f64 / 12.0)).collect();
    epsilon_lambda(pot, &lambdas)
}

/// Builds, for `n = 1..=n_max`, a turning-point bump at a point whose ball
/// average of `b` over `B_{R_n/V^{1/4}}` is at most `2^{-n} b_max`, with
/// `R_n = n + 1` capped by `min(ε̂(λ_n)^{-1/2}, λ_n)`.
///
/// The search starts at the shell where the cap stops binding and walks
/// outward; the first hit in (shell, angle) order wins.
pub fn tpc_violation_sequence(
    pot: &Potential,
    b: &Damping,
    n_max: usize,
    search: &ViolationSearch,
    eps: &EpsilonProfile,
) -> Result<Vec<QuasimodeReport>> {
    let d = pot.dim();
    if b.dim() != d {
        return Err(Error::precondition("tpc_violation_sequence: dimension mismatch"));
    }
    if n_max == 0 {
        return Err(Error::precondition("tpc_violation_sequence: n_max must be positive"));
    }
    let norms = BumpNorms::compute(d)?;
    let dirs = sphere_directions(d, search.angles);
    let mut out = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let wanted = (n + 1) as f64;
        let lam_start = admissible_lambda(eps, wanted).unwrap_or_else(|| *eps.lambdas.last().unwrap());
        let start = sublevel_radius(pot, lam_start * lam_start)?;
        let threshold = 0.5f64.powi(n as i32) * b.b_max();
        let mut found = None;
        'search: for s in 0..search.shells {
            let radius = start * (1.0 + search.shell_step * s as f64);
            for w in &dirs {
                let x: Vec<f64> = w[..d].iter().map(|c| c * radius).collect();
                let v = pot.value(&x);
                let lam = v.sqrt();
                let cap = eps.at(lam).powf(-0.5).min(lam);
                let big_r = wanted.min(cap).max(1.0);
                let avg = mollify_at(b, big_r / v.powf(0.25), &x, &search.quadrature)?;
                if avg <= threshold {
                    found = Some((x, big_r, avg));
                    break 'search;
                }
            }
        }
        let Some((x, big_r, avg)) = found else {
            return Err(Error::precondition(format!(
                "TPC not violated in range (n = {n}, radii {start:.3e} to {:.3e})",
                start * (1.0 + search.shell_step * (search.shells - 1) as f64)
            )));
        };
        let lam = pot.value(&x).sqrt();
        let grid = bump_grid(&x, big_r / lam.sqrt(), search.grid_points)?;
        let (_, mut report) = turning_point_bump(pot, &x, big_r, &grid, Some(b), eps, &norms)?;
        report.index = Some(n);
        report.ball_average = Some(avg);
        out.push(report);
    }
    Ok(out)
}
