//! Tensor grids, complex grid functions and the fourth-order discretization
//! of `P = V - Δ/2`.

use std::io::{Read, Write};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::damping::Damping;
use crate::dynamics::fmt_f64;
use crate::error::{Error, Result};
use crate::potentials::Potential;

/// Grids are limited to one and two dimensions.
pub const MAX_GRID_DIM: usize = 2;

/// Points per wavelength demanded by [`check_resolution`].
pub const DEFAULT_PPW: f64 = 16.0;

/// Fourth-order central second-difference weights at offsets 0, ±1, ±2.
const STENCIL: [f64; 3] = [-5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0];

/// Uniform tensor grid. Axis `i` covers `[c_i - L_i, c_i + L_i]` with `N_i`
/// nodes, so the spacing is `2 L_i / (N_i - 1)`. The last axis varies
/// fastest in the flattened layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    centers: Vec<f64>,
    half_widths: Vec<f64>,
    counts: Vec<usize>,
}

impl Grid {
    /// Square grid `[-L, L]^d` with `n` points per axis.
    pub fn cube(dim: usize, half_width: f64, n: usize) -> Result<Self> {
        Grid::new(vec![0.0; dim], vec![half_width; dim], vec![n; dim])
    }

    pub fn new(centers: Vec<f64>, half_widths: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let d = centers.len();
        if d == 0 || d > MAX_GRID_DIM || half_widths.len() != d || counts.len() != d {
            return Err(Error::precondition(format!(
                "grid needs 1 <= d <= {MAX_GRID_DIM} with matching per-axis data"
            )));
        }
        if counts.iter().any(|n| *n < 8) {
            return Err(Error::precondition(format!(
                "grid too coarse: need N >= 8 points per axis, got {counts:?}"
            )));
        }
        if half_widths.iter().any(|l| !(*l > 0.0 && l.is_finite())) || centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::precondition("grid extents must be positive and finite"));
        }
        Ok(Grid {
            centers,
            half_widths,
            counts,
        })
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn half_widths(&self) -> &[f64] {
        &self.half_widths
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        2.0 * self.half_widths[axis] / (self.counts[axis] - 1) as f64
    }

    pub fn coordinate(&self, axis: usize, k: usize) -> f64 {
        self.centers[axis] - self.half_widths[axis] + k as f64 * self.spacing(axis)
    }

    /// All coordinates along one axis.
    pub fn axis(&self, axis: usize) -> Vec<f64> {
        (0..self.counts[axis]).map(|k| self.coordinate(axis, k)).collect()
    }

    /// Multi-index of a flat index.
    pub fn unravel(&self, idx: usize) -> [usize; MAX_GRID_DIM] {
        let mut out = [0; MAX_GRID_DIM];
        let mut rem = idx;
        for a in (0..self.dim()).rev() {
            out[a] = rem % self.counts[a];
            rem /= self.counts[a];
        }
        out
    }

    pub fn point(&self, idx: usize) -> [f64; MAX_GRID_DIM] {
        let k = self.unravel(idx);
        let mut x = [0.0; MAX_GRID_DIM];
        for a in 0..self.dim() {
            x[a] = self.coordinate(a, k[a]);
        }
        x
    }

    /// Tensor trapezoid weight at a flat index.
    pub fn weight(&self, idx: usize) -> f64 {
        let k = self.unravel(idx);
        (0..self.dim())
            .map(|a| {
                let h = self.spacing(a);
                if k[a] == 0 || k[a] == self.counts[a] - 1 {
                    0.5 * h
                } else {
                    h
                }
            })
            .product()
    }

    /// Samples `f` at every node.
    pub fn sample<F: Fn(&[f64]) -> f64 + Sync>(&self, f: F) -> Vec<f64> {
        let d = self.dim();
        (0..self.len())
            .into_par_iter()
            .map(|i| f(&self.point(i)[..d]))
            .collect()
    }

    /// Distance from `x` to the nearest face of the box.
    pub fn depth(&self, x: &[f64]) -> f64 {
        (0..self.dim())
            .map(|a| self.half_widths[a] - (x[a] - self.centers[a]).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Fails when some axis spacing exceeds `2π / (frequency · ppw)`.
pub fn check_resolution(grid: &Grid, frequency: f64, ppw: f64) -> Result<()> {
    for a in 0..grid.dim() {
        check_axis_resolution(grid, a, frequency, ppw)?;
    }
    Ok(())
}

/// Single-axis form of [`check_resolution`].
pub fn check_axis_resolution(grid: &Grid, axis: usize, frequency: f64, ppw: f64) -> Result<()> {
    let limit = 2.0 * std::f64::consts::PI / (frequency * ppw);
    let h = grid.spacing(axis);
    if h > limit {
        return Err(Error::precondition(format!(
            "grid under-resolved on axis {axis}: spacing {h:.4e} exceeds 2π/(λ·PPW) = {limit:.4e} (λ = {frequency}, PPW = {ppw})"
        )));
    }
    Ok(())
}

/// Complex values on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<Complex64>,
}

impl Field {
    pub fn zeros(grid: &Grid) -> Self {
        Field {
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
            grid: grid.clone(),
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::precondition(format!(
                "field has {} values but the grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::precondition("field values must be finite"));
        }
        Ok(Field {
            grid: grid.clone(),
            values,
        })
    }

    pub fn from_fn<F: Fn(&[f64]) -> Complex64 + Sync>(grid: &Grid, f: F) -> Self {
        let d = grid.dim();
        let values = (0..grid.len())
            .into_par_iter()
            .map(|i| f(&grid.point(i)[..d]))
            .collect();
        Field {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values.iter_mut() {
            *v *= factor;
        }
    }

    /// Largest modulus on the outermost `layers` node layers of any face.
    pub fn boundary_max(&self, layers: usize) -> f64 {
        let g = &self.grid;
        (0..g.len())
            .filter(|&i| {
                let k = g.unravel(i);
                (0..g.dim()).any(|a| k[a] < layers || k[a] + layers >= g.counts[a])
            })
            .map(|i| self.values[i].norm())
            .fold(0.0, f64::max)
    }

    /// CSV with columns `x_1..x_d, re, im`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.grid.dim();
        let mut header: Vec<String> = (1..=d).map(|i| format!("x_{i}")).collect();
        header.extend(["re".to_string(), "im".to_string()]);
        writeln!(w, "{}", header.join(","))?;
        for (i, v) in self.values.iter().enumerate() {
            let x = self.grid.point(i);
            let mut row: Vec<String> = x[..d].iter().map(|c| fmt_f64(*c)).collect();
            row.push(fmt_f64(v.re));
            row.push(fmt_f64(v.im));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Binary dump: `d` (u64), then per axis `N` (u64), `L` (f64) and the
    /// axis center (f64), then interleaved `re, im` values, all little-endian
    /// and row-major.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let g = &self.grid;
        w.write_all(&(g.dim() as u64).to_le_bytes())?;
        for a in 0..g.dim() {
            w.write_all(&(g.counts[a] as u64).to_le_bytes())?;
            w.write_all(&g.half_widths[a].to_le_bytes())?;
            w.write_all(&g.centers[a].to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut b8 = [0u8; 8];
        let mut u64_ = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let d = u64_(&mut r)? as usize;
        if d == 0 || d > MAX_GRID_DIM {
            return Err(Error::precondition(format!("binary field: unsupported dimension {d}")));
        }
        let (mut counts, mut half, mut centers) = (vec![], vec![], vec![]);
        for _ in 0..d {
            counts.push(u64_(&mut r)? as usize);
            half.push(f64::from_bits(u64_(&mut r)?));
            centers.push(f64::from_bits(u64_(&mut r)?));
        }
        let grid = Grid::new(centers, half, counts)?;
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            let re = f64::from_bits(u64_(&mut r)?);
            let im = f64::from_bits(u64_(&mut r)?);
            values.push(Complex64::new(re, im));
        }
        Field::from_values(&grid, values)
    }
}

fn same_grid(f: &Field, g: &Field) -> Result<()> {
    if f.grid != g.grid {
        return Err(Error::precondition("fields live on different grids"));
    }
    Ok(())
}

/// `Σ w_k conj(f_k) g_k`.
pub fn inner(f: &Field, g: &Field) -> Result<Complex64> {
    same_grid(f, g)?;
    Ok(weighted_inner(&f.grid, &f.values, &g.values))
}

pub(crate) fn weighted_inner(grid: &Grid, f: &[Complex64], g: &[Complex64]) -> Complex64 {
    (0..grid.len())
        .map(|i| grid.weight(i) * f[i].conj() * g[i])
        .sum()
}

/// Same arithmetic as `weighted_inner(f, f).re`, so the two agree exactly.
pub(crate) fn weighted_norm_sqr(grid: &Grid, f: &[Complex64]) -> f64 {
    (0..grid.len())
        .map(|i| (grid.weight(i) * f[i].conj() * f[i]).re)
        .sum()
}

/// `‖f‖²`; equal bit for bit to `inner(f, f).re`.
pub fn norm_sqr(f: &Field) -> f64 {
    weighted_norm_sqr(&f.grid, &f.values)
}

pub fn l2_norm(f: &Field) -> f64 {
    norm_sqr(f).sqrt()
}

fn nonzero(f: &Field) -> Result<f64> {
    let n = l2_norm(f);
    if !(n > 0.0) {
        return Err(Error::precondition("field has zero norm"));
    }
    Ok(n)
}

/// The operator `P` on a fixed grid, with `V` sampled once.
#[derive(Debug, Clone)]
pub struct GridOperator {
    grid: Grid,
    potential: Vec<f64>,
}

impl GridOperator {
    pub fn new(pot: &Potential, grid: &Grid) -> Result<Self> {
        if pot.dim() != grid.dim() {
            return Err(Error::precondition(format!(
                "potential dimension {} does not match grid dimension {}",
                pot.dim(),
                grid.dim()
            )));
        }
        Ok(GridOperator {
            potential: grid.sample(|x| pot.value(x)),
            grid: grid.clone(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn potential_values(&self) -> &[f64] {
        &self.potential
    }

    /// `out = V f - Δf/2`, with `f` extended by zero outside the grid.
    pub fn apply_into(&self, f: &[Complex64], out: &mut [Complex64]) {
        let g = &self.grid;
        let counts = g.counts();
        let stride_last = 1usize;
        let (strides, coef): (Vec<usize>, Vec<f64>) = match g.dim() {
            1 => (vec![stride_last], vec![-0.5 / (g.spacing(0) * g.spacing(0))]),
            _ => (
                vec![counts[1], stride_last],
                vec![
                    -0.5 / (g.spacing(0) * g.spacing(0)),
                    -0.5 / (g.spacing(1) * g.spacing(1)),
                ],
            ),
        };
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let k = g.unravel(i);
            let mut acc = self.potential[i] * f[i];
            for a in 0..g.dim() {
                let s = strides[a];
                let n = counts[a];
                let mut lap = STENCIL[0] * f[i];
                for off in 1..=2 {
                    let w = STENCIL[off];
                    if k[a] >= off {
                        lap += w * f[i - off * s];
                    }
                    if k[a] + off < n {
                        lap += w * f[i + off * s];
                    }
                }
                acc += coef[a] * lap;
            }
            *o = acc;
        });
    }

    pub fn apply(&self, f: &Field) -> Result<Field> {
        if f.grid != self.grid {
            return Err(Error::precondition("field grid differs from operator grid"));
        }
        let mut out = Field::zeros(&self.grid);
        self.apply_into(&f.values, &mut out.values);
        Ok(out)
    }

    /// `‖P f - λ² f‖ / (λ ‖f‖)`.
    pub fn residual_ratio(&self, f: &Field, lambda: f64) -> Result<f64> {
        let n = nonzero(f)?;
        if !(lambda > 0.0) {
            return Err(Error::precondition(format!("residual ratio needs λ > 0, got {lambda}")));
        }
        let pf = self.apply(f)?;
        let l2 = lambda * lambda;
        let r: Vec<Complex64> = pf.values.iter().zip(&f.values).map(|(p, v)| p - l2 * v).collect();
        Ok(weighted_norm_sqr(&self.grid, &r).sqrt() / (lambda * n))
    }

    /// `P` as a symmetric banded matrix in 1D: diagonal and the first two
    /// off-diagonals.
    pub fn banded_1d(&self) -> Result<[Vec<f64>; 3]> {
        if self.grid.dim() != 1 {
            return Err(Error::precondition("banded form requires d = 1"));
        }
        let n = self.grid.len();
        let c = -0.5 / (self.grid.spacing(0) * self.grid.spacing(0));
        let diag = (0..n).map(|i| self.potential[i] + c * STENCIL[0]).collect();
        Ok([diag, vec![c * STENCIL[1]; n - 1], vec![c * STENCIL[2]; n - 2]])
    }
}

/// `P f` on the grid of `f`.
pub fn apply_p(pot: &Potential, f: &Field) -> Result<Field> {
    GridOperator::new(pot, &f.grid)?.apply(f)
}

/// `‖P f - λ² f‖ / (λ ‖f‖)`.
pub fn residual_ratio(pot: &Potential, f: &Field, lambda: f64) -> Result<f64> {
    GridOperator::new(pot, &f.grid)?.residual_ratio(f, lambda)
}

/// `⟨f, b f⟩ / ‖f‖²`.
pub fn damping_pairing(b: &Damping, f: &Field) -> Result<f64> {
    if b.dim() != f.grid.dim() {
        return Err(Error::precondition("damping and field dimensions differ"));
    }
    let n = nonzero(f)?;
    let g = &f.grid;
    let d = g.dim();
    let num: f64 = (0..g.len())
        .map(|i| g.weight(i) * b.value(&g.point(i)[..d]) * f.values[i].norm_sqr())
        .sum();
    Ok(num / (n * n))
}

/// `∫_{B_radius(center)} |f|² / ‖f‖²`.
///
/// In 1D `|f|²` is replaced by its local cubic interpolant and integrated
/// exactly over the interval, giving fourth-order accuracy. In 2D each node
/// carries the fraction of its dual cell inside the ball, estimated on an
/// 8×8 sub-lattice.
pub fn mass_in_ball(f: &Field, center: &[f64], radius: f64) -> Result<f64> {
    let g = &f.grid;
    if center.len() != g.dim() {
        return Err(Error::precondition("ball center dimension differs from grid"));
    }
    if !(radius >= 0.0) {
        return Err(Error::precondition("ball radius must be non-negative"));
    }
    nonzero(f)?;
    if radius == 0.0 {
        return Ok(0.0);
    }
    let dens: Vec<f64> = f.values.iter().map(|v| v.norm_sqr()).collect();
    let frac = match g.dim() {
        1 => {
            let total = cubic_integral(g, &dens, f64::NEG_INFINITY, f64::INFINITY);
            cubic_integral(g, &dens, center[0] - radius, center[0] + radius) / total
        }
        _ => {
            let (h0, h1) = (g.spacing(0), g.spacing(1));
            const SUB: usize = 8;
            let total: f64 = (0..g.len()).map(|i| g.weight(i) * dens[i]).sum();
            let inside: f64 = (0..g.len())
                .filter(|&i| dens[i] > 0.0)
                .map(|i| {
                    let x = g.point(i);
                    let mut hits = 0usize;
                    for a in 0..SUB {
                        for b in 0..SUB {
                            let y0 = x[0] + h0 * ((a as f64 + 0.5) / SUB as f64 - 0.5);
                            let y1 = x[1] + h1 * ((b as f64 + 0.5) / SUB as f64 - 0.5);
                            let r2 = (y0 - center[0]).powi(2) + (y1 - center[1]).powi(2);
                            if r2 <= radius * radius {
                                hits += 1;
                            }
                        }
                    }
                    g.weight(i) * dens[i] * hits as f64 / (SUB * SUB) as f64
                })
                .sum();
            inside / total
        }
    };
    Ok(frac.clamp(0.0, 1.0))
}

/// Integral over `[a, b]` of the piecewise-cubic interpolant of nodal data
/// (four-point stencils, one-sided near the ends).
fn cubic_integral(g: &Grid, data: &[f64], a: f64, b: f64) -> f64 {
    let n = g.counts()[0];
    let h = g.spacing(0);
    let x0 = g.coordinate(0, 0);
    let mut acc = 0.0;
    for k in 0..n - 1 {
        let (xl, xr) = (x0 + k as f64 * h, x0 + (k + 1) as f64 * h);
        let lo = a.max(xl);
        let hi = b.min(xr);
        if hi <= lo {
            continue;
        }
        let start = k.saturating_sub(1).min(n - 4);
        let nodes: [usize; 4] = [start, start + 1, start + 2, start + 3];
        // integrate the Lagrange basis on [lo, hi] with 3-point Gauss rule (exact for cubics)
        let gauss = [
            (-(0.6f64).sqrt(), 5.0 / 9.0),
            (0.0, 8.0 / 9.0),
            ((0.6f64).sqrt(), 5.0 / 9.0),
        ];
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        for (t, w) in gauss {
            let x = mid + half * t;
            let mut val = 0.0;
            for (j, &nj) in nodes.iter().enumerate() {
                let xj = x0 + nj as f64 * h;
                let mut basis = 1.0;
                for (m, &nm) in nodes.iter().enumerate() {
                    if m != j {
                        let xm = x0 + nm as f64 * h;
                        basis *= (x - xm) / (xj - xm);
                    }
                }
                val += basis * data[nj];
            }
            acc += w * half * val;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(grid: &Grid) -> Field {
        Field::from_fn(grid, |x| Complex64::new((-0.5 * x.iter().map(|v| v * v).sum::<f64>()).exp(), 0.0))
    }

    #[test]
    fn grid_geometry() {
        let g = Grid::cube(2, 1.0, 9).unwrap();
        assert_eq!(g.len(), 81);
        assert!((g.spacing(0) - 0.25).abs() < 1e-15);
        assert_eq!(g.point(10)[..2], [-0.75, -0.75]);
        let total: f64 = (0..g.len()).map(|i| g.weight(i)).sum();
        assert!((total - 4.0).abs() < 1e-12);
        assert!(Grid::cube(1, 1.0, 7).is_err());
    }

    #[test]
    fn zero_field_maps_to_zero() {
        let g = Grid::cube(1, 5.0, 64).unwrap();
        let f = Field::zeros(&g);
        let p = apply_p(&Potential::harmonic(1).unwrap(), &f).unwrap();
        assert!(p.values().iter().all(|v| v.norm() == 0.0));
        assert_eq!(l2_norm(&f), 0.0);
        assert!(residual_ratio(&Potential::harmonic(1).unwrap(), &f, 1.0).is_err());
    }

    #[test]
    fn inner_matches_norm() {
        let g = Grid::cube(2, 3.0, 33).unwrap();
        let f = Field::from_fn(&g, |x| Complex64::new(x[0].sin(), x[1]));
        let ff = inner(&f, &f).unwrap();
        assert_eq!(ff.re, norm_sqr(&f));
        assert_eq!(ff.im, 0.0);
    }

    #[test]
    fn resolution_validator() {
        let g = Grid::cube(1, 10.0, 101).unwrap();
        assert!(check_resolution(&g, 1.0, DEFAULT_PPW).is_ok());
        assert!(check_resolution(&g, 10.0, DEFAULT_PPW).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let g = Grid::new(vec![1.0, -2.0], vec![3.0, 4.0], vec![8, 9]).unwrap();
        let f = Field::from_fn(&g, |x| Complex64::new(x[0], x[1] * x[0]));
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 2 * 24 + 72 * 16);
        assert_eq!(Field::read_binary(&buf[..]).unwrap(), f);
    }

    #[test]
    fn mass_limits() {
        let g = Grid::cube(2, 4.0, 41).unwrap();
        let f = gaussian(&g);
        assert_eq!(mass_in_ball(&f, &[0.0, 0.0], 0.0).unwrap(), 0.0);
        assert!((mass_in_ball(&f, &[0.0, 0.0], 20.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn banded_form_matches_operator() {
        let g = Grid::cube(1, 4.0, 40).unwrap();
        let op = GridOperator::new(&Potential::harmonic(1).unwrap(), &g).unwrap();
        let [d0, d1, d2] = op.banded_1d().unwrap();
        let f: Vec<Complex64> = (0..40).map(|i| Complex64::new((i as f64 * 0.37).sin(), 0.0)).collect();
        let mut pf = vec![Complex64::new(0.0, 0.0); 40];
        op.apply_into(&f, &mut pf);
        for i in 0..40 {
            let mut v = d0[i] * f[i].re;
            if i >= 1 {
                v += d1[i - 1] * f[i - 1].re;
            }
            if i + 1 < 40 {
                v += d1[i] * f[i + 1].re;
            }
            if i >= 2 {
                v += d2[i - 2] * f[i - 2].re;
            }
            if i + 2 < 40 {
                v += d2[i] * f[i + 2].re;
            }
            assert!((v - pf[i].re).abs() < 1e-9);
        }
    }
}
