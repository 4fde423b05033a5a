//! Confining potentials and the growth quantities attached to them.
//!
//! A [`Potential`] bundles the value and gradient evaluators of one of the
//! builtin families together with the radius `A0` beyond which `V >= 1`.
//! [`epsilon_lambda`] samples the non-increasing modulus `ε(λ)` that controls
//! both quasimode residuals and the linearisation error of the flow.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{norm, sphere_directions, MAX_DIM};

/// Builtin potential families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    /// `V(x) = |x|^2 / 2`.
    Harmonic,
    /// `V(x) = (1 + |x|^2)^{s/2} - 1`, smooth at the origin, `0 < s < 4`.
    Power { exponent: f64 },
    /// `V(x) = Σ w_i x_i^2 / 2` with positive weights.
    Anisotropic { weights: Vec<f64> },
}

/// A confining potential together with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    kind: PotentialKind,
    dim: usize,
    label: String,
    a0: f64,
}

/// Config-file description of a potential: a name plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub name: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl PotentialSpec {
    pub fn build(&self) -> Result<Potential> {
        match self.name.as_str() {
            "harmonic" => Potential::harmonic(self.dim),
            "power" => {
                let s = self
                    .exponent
                    .ok_or_else(|| Error::precondition("power potential requires `exponent`"))?;
                Potential::power(self.dim, s)
            }
            "anisotropic" => {
                let w = self.weights.clone().ok_or_else(|| {
                    Error::precondition("anisotropic potential requires `weights`")
                })?;
                if w.len() != self.dim {
                    return Err(Error::precondition(format!(
                        "anisotropic potential: {} weights for dimension {}",
                        w.len(),
                        self.dim
                    )));
                }
                Potential::anisotropic(w)
            }
            other => Err(Error::Unknown {
                kind: "potential",
                name: other.to_string(),
            }),
        }
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::precondition(format!(
            "dimension must be in 1..={MAX_DIM}, got {dim}"
        )));
    }
    Ok(())
}

impl Potential {
    /// Builds a builtin potential by name.
    ///
    /// `params` is empty for `harmonic`, `[s]` for `power` and the weight
    /// vector (of length `dim`) for `anisotropic`.
    pub fn builtin(name: &str, dim: usize, params: &[f64]) -> Result<Self> {
        match name {
            "harmonic" => Self::harmonic(dim),
            "power" => {
                let s = *params
                    .first()
                    .ok_or_else(|| Error::precondition("power potential requires an exponent"))?;
                Self::power(dim, s)
            }
            "anisotropic" => {
                if params.len() != dim {
                    return Err(Error::precondition(format!(
                        "anisotropic potential: {} weights for dimension {dim}",
                        params.len()
                    )));
                }
                Self::anisotropic(params.to_vec())
            }
            other => Err(Error::Unknown {
                kind: "potential",
                name: other.to_string(),
            }),
        }
    }

    pub fn harmonic(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Potential {
            kind: PotentialKind::Harmonic,
            dim,
            label: "harmonic".into(),
            a0: 2f64.sqrt(),
        })
    }

    pub fn power(dim: usize, s: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::precondition(format!(
                "power exponent must be positive, got {s}"
            )));
        }
        if s >= 4.0 {
            return Err(Error::precondition(format!(
                "power exponent s = {s} violates strict sub-quarticity (need s < 4)"
            )));
        }
        // (1 + A^2)^{s/2} - 1 = 1
        let a0 = (2f64.powf(2.0 / s) - 1.0).sqrt();
        Ok(Potential {
            kind: PotentialKind::Power { exponent: s },
            dim,
            label: format!("power(s={s})"),
            a0,
        })
    }

    pub fn anisotropic(weights: Vec<f64>) -> Result<Self> {
        check_dim(weights.len())?;
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::precondition(
                "anisotropic weights must be positive and finite",
            ));
        }
        let wmin = weights.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(Potential {
            dim: weights.len(),
            label: format!("anisotropic({weights:?})"),
            a0: (2.0 / wmin).sqrt(),
            kind: PotentialKind::Anisotropic { weights },
        })
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Radius beyond which `V >= 1`.
    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            PotentialKind::Harmonic => 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            PotentialKind::Power { exponent } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                // (1+r²)^{s/2} - 1 without cancellation near the origin
                (0.5 * exponent * r2.ln_1p()).exp_m1()
            }
            PotentialKind::Anisotropic { weights } => {
                0.5 * x.iter().zip(weights).map(|(v, w)| w * v * v).sum::<f64>()
            }
        }
    }

    /// Writes `∇V(x)` into `out`.
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            PotentialKind::Harmonic => out[..self.dim].copy_from_slice(x),
            PotentialKind::Power { exponent } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let f = exponent * (1.0 + r2).powf(0.5 * exponent - 1.0);
                for (o, v) in out.iter_mut().zip(x) {
                    *o = f * v;
                }
            }
            PotentialKind::Anisotropic { weights } => {
                for ((o, v), w) in out.iter_mut().zip(x).zip(weights) {
                    *o = w * v;
                }
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.gradient_into(x, &mut g);
        g
    }

    pub fn gradient_norm(&self, x: &[f64]) -> f64 {
        let mut g = [0.0; MAX_DIM];
        self.gradient_into(x, &mut g[..self.dim]);
        norm(&g[..self.dim])
    }

    /// Largest relative mismatch between central differences of `V` and the
    /// gradient evaluator over `samples` random points in `[-box, box]^d`.
    ///
    /// The error is measured relative to `max(|∇V|, 1)`.
    pub fn gradient_consistency(&self, samples: usize, half_box: f64, step: f64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let mut x = vec![0.0; self.dim];
        for _ in 0..samples {
            for v in x.iter_mut() {
                *v = rng.gen_range(-half_box..half_box);
            }
            let g = self.gradient(&x);
            let scale = norm(&g).max(1.0);
            for i in 0..self.dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += step;
                xm[i] -= step;
                let fd = (self.value(&xp) - self.value(&xm)) / (2.0 * step);
                worst = worst.max((fd - g[i]).abs() / scale);
            }
        }
        worst
    }
}

/// Sampled profile of `ε̂(λ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonProfile {
    /// Ascending `λ` samples.
    pub lambdas: Vec<f64>,
    /// `ε̂(λ)` after enforcing monotonicity.
    pub epsilon: Vec<f64>,
    /// `C_V = (2^{1/4} + C)^3`.
    pub c_v: f64,
    /// The sampled `C = sup |∇V| / (4 (1+V)^{3/4})`.
    pub c_growth: f64,
    pub a0: f64,
    /// Number of trial radii per `λ` in `[A0, max(A0, λ)]`.
    pub trial_radii: usize,
}

impl EpsilonProfile {
    /// Interpolated lookup; values outside the sampled range are clamped to
    /// the nearest end (which keeps the lookup non-increasing).
    pub fn at(&self, lambda: f64) -> f64 {
        let n = self.lambdas.len();
        if lambda <= self.lambdas[0] {
            return self.epsilon[0];
        }
        if lambda >= self.lambdas[n - 1] {
            return self.epsilon[n - 1];
        }
        let k = self.lambdas.partition_point(|l| *l <= lambda);
        let (l0, l1) = (self.lambdas[k - 1], self.lambdas[k]);
        let w = (lambda - l0) / (l1 - l0);
        self.epsilon[k - 1] * (1.0 - w) + self.epsilon[k] * w
    }
}

/// Radially sampled suprema used by `ε̂` and `C`.
///
/// `grad_max[j]` is the largest `|∇V|` on the sphere of radius `radii[j]`,
/// `ratio_max[j]` the largest `|∇V| / V^{3/4}` there and `c_max[j]` the
/// largest `|∇V| / (4 (1+V)^{3/4})`.
struct RadialSups {
    radii: Vec<f64>,
    grad_max: Vec<f64>,
    ratio_max: Vec<f64>,
    c_max: Vec<f64>,
}

const RADII_PER_ANNULUS: usize = 200;
const DIRECTIONS_PER_DIM: usize = 64;

impl RadialSups {
    fn sample(pot: &Potential, r_outer: f64) -> Self {
        let d = pot.dim();
        let dirs = sphere_directions(d, DIRECTIONS_PER_DIM * d);
        let r_inner = 1e-3_f64;
        let annuli = (r_outer / r_inner).log2().ceil().max(1.0) as usize;
        let count = annuli * RADII_PER_ANNULUS + 1;
        let mut radii = Vec::with_capacity(count + 1);
        radii.push(0.0);
        for j in 0..count {
            radii.push(r_inner * 2f64.powf(j as f64 / RADII_PER_ANNULUS as f64));
        }
        let mut grad_max = Vec::with_capacity(radii.len());
        let mut ratio_max = Vec::with_capacity(radii.len());
        let mut c_max = Vec::with_capacity(radii.len());
        let mut x = [0.0; MAX_DIM];
        for &r in &radii {
            let (mut g, mut q, mut c) = (0.0f64, 0.0f64, 0.0f64);
            for dir in &dirs {
                for i in 0..d {
                    x[i] = r * dir[i];
                }
                let v = pot.value(&x[..d]);
                let gn = pot.gradient_norm(&x[..d]);
                g = g.max(gn);
                if v > 0.0 {
                    q = q.max(gn / v.powf(0.75));
                }
                c = c.max(gn / (4.0 * (1.0 + v).powf(0.75)));
            }
            grad_max.push(g);
            ratio_max.push(q);
            c_max.push(c);
        }
        RadialSups {
            radii,
            grad_max,
            ratio_max,
            c_max,
        }
    }
}

/// Samples `ε̂(λ) = C_V min_A ( sup_{B_A}|∇V| / λ^{3/2} + sup_{|z|>=A} |∇V|/V^{3/4} )`.
///
/// Suprema are taken over `64·d` directions and 200 radii per dyadic
/// annulus; the trial radii `A` are 200 geometric points in
/// `[A0, max(A0, λ)]`. The result is forced to be non-increasing by a
/// running minimum over ascending `λ`.
pub fn epsilon_lambda(pot: &Potential, lambdas: &[f64]) -> Result<EpsilonProfile> {
    if lambdas.is_empty() {
        return Err(Error::precondition("epsilon_lambda: empty λ list"));
    }
    if let Some(l) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 1.0)) {
        return Err(Error::precondition(format!(
            "epsilon_lambda: λ must be >= 1, got {l}"
        )));
    }
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let a0 = pot.a0();
    let lam_max = *sorted.last().unwrap();
    let c_box = 1e3 * (pot.dim() as f64).sqrt();
    let r_outer = (10.0 * lam_max.max(a0)).max(c_box);
    let sups = RadialSups::sample(pot, r_outer);

    let c_growth = sups
        .radii
        .iter()
        .zip(&sups.c_max)
        .filter(|(r, _)| **r <= c_box)
        .map(|(_, c)| *c)
        .fold(0.0, f64::max);
    let c_v = (2f64.powf(0.25) + c_growth).powi(3);

    // prefix max of |∇V| over radii <= A, suffix max of the ratio over radii >= A
    let n = sups.radii.len();
    let mut prefix = sups.grad_max.clone();
    for j in 1..n {
        prefix[j] = prefix[j].max(prefix[j - 1]);
    }
    let mut suffix = sups.ratio_max.clone();
    for j in (0..n - 1).rev() {
        suffix[j] = suffix[j].max(suffix[j + 1]);
    }
    let inner_sup = |a: f64| -> f64 {
        // smallest sampled radius >= A bounds the ball from outside
        let k = sups.radii.partition_point(|r| *r < a).min(n - 1);
        prefix[k]
    };
    let outer_sup = |a: f64| -> f64 {
        // largest sampled radius <= A bounds the exterior from inside
        let k = sups.radii.partition_point(|r| *r <= a).saturating_sub(1);
        suffix[k]
    };

    const TRIALS: usize = 200;
    let mut epsilon = Vec::with_capacity(sorted.len());
    let mut running = f64::INFINITY;
    for &lam in &sorted {
        let a_max = a0.max(lam);
        let lam32 = lam.powf(1.5);
        let mut best = f64::INFINITY;
        for j in 0..TRIALS {
            let a = if a_max > a0 {
                a0 * (a_max / a0).powf(j as f64 / (TRIALS - 1) as f64)
            } else {
                a0
            };
            best = best.min(inner_sup(a) / lam32 + outer_sup(a));
        }
        running = running.min(c_v * best);
        epsilon.push(running);
    }
    if epsilon.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::numerical("epsilon_lambda: non-positive ε̂ sample"));
    }
    Ok(EpsilonProfile {
        lambdas: sorted,
        epsilon,
        c_v,
        c_growth,
        a0,
        trial_radii: TRIALS,
    })
}

/// Smallest radius `ρ` with `V(x) >= level` for all sampled `|x| >= ρ`.
///
/// Bisection on `m(ρ) = min_{|x|=ρ} V(x)` over sampled directions; the
/// builtins are radially increasing so `m` is monotone.
pub fn sublevel_radius(pot: &Potential, level: f64) -> Result<f64> {
    if !(level > 0.0 && level.is_finite()) {
        return Err(Error::precondition(format!(
            "sublevel_radius: level must be positive, got {level}"
        )));
    }
    let d = pot.dim();
    let dirs = sphere_directions(d, DIRECTIONS_PER_DIM * d);
    let shell_min = |r: f64| -> f64 {
        let mut x = [0.0; MAX_DIM];
        dirs.iter()
            .map(|dir| {
                for i in 0..d {
                    x[i] = r * dir[i];
                }
                pot.value(&x[..d])
            })
            .fold(f64::INFINITY, f64::min)
    };
    if shell_min(0.0) >= level {
        return Err(Error::precondition(format!(
            "sublevel_radius: level too small ({level} <= min V)"
        )));
    }
    let mut hi = 1.0f64;
    while shell_min(hi) < level {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::numerical(
                "sublevel_radius: potential does not reach the level (non-confining sampling)",
            ));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if shell_min(mid) < level {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(hi)
}

/// Uniform sample of the sublevel set `{V <= level}` by rejection in the
/// bounding box of radius `sublevel_radius(level)`.
pub fn sample_sublevel<R: Rng>(pot: &Potential, level: f64, radius: f64, rng: &mut R) -> Vec<f64> {
    let d = pot.dim();
    let mut x = vec![0.0; d];
    loop {
        for v in x.iter_mut() {
            *v = rng.gen_range(-radius..=radius);
        }
        if pot.value(&x) <= level {
            return x;
        }
    }
}
