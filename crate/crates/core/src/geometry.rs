//! Small vector helpers and deterministic node sets on spheres and balls.

use std::f64::consts::PI;

/// Largest spatial dimension supported by the evaluators.
pub const MAX_DIM: usize = 3;

/// Fixed-capacity point used in hot loops to avoid allocation.
pub type Point = [f64; MAX_DIM];

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn norm_sup(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn to_point(x: &[f64]) -> Point {
    let mut p = [0.0; MAX_DIM];
    p[..x.len()].copy_from_slice(x);
    p
}

/// Volume of the unit ball in dimension `dim`.
pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => {
            // Gamma recursion: |B_d| = 2π/d |B_{d-2}|
            2.0 * PI / dim as f64 * unit_ball_volume(dim - 2)
        }
    }
}

/// Evenly spread unit directions.
///
/// In 1D the only directions are ±1. In 2D `count` angles are spaced
/// uniformly on the circle; in 3D a Fibonacci lattice is used.
pub fn sphere_directions(dim: usize, count: usize) -> Vec<Point> {
    match dim {
        1 => vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
        2 => (0..count)
            .map(|k| {
                let th = 2.0 * PI * k as f64 / count as f64;
                [th.cos(), th.sin(), 0.0]
            })
            .collect(),
        _ => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - (2.0 * k as f64 + 1.0) / count as f64;
                    let rho = (1.0 - z * z).max(0.0).sqrt();
                    let th = golden * k as f64;
                    [rho * th.cos(), rho * th.sin(), z]
                })
                .collect()
        }
    }
}

/// Unit-ball quadrature nodes with equal weights.
///
/// 1D uses midpoints of a uniform partition of [-1, 1]; 2D and 3D use the
/// additive recurrence sequences (R2 / R3) pushed forward to the ball by an
/// area-preserving map. The node set is symmetric under x -> -x in 1D.
#[derive(Debug, Clone)]
pub struct BallRule {
    dim: usize,
    nodes: Vec<Point>,
}

impl BallRule {
    pub fn new(dim: usize, count: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim) && count > 0);
        let nodes = match dim {
            1 => (0..count)
                .map(|i| [-1.0 + (2 * i + 1) as f64 / count as f64, 0.0, 0.0])
                .collect(),
            2 => {
                let g = 1.324_717_957_244_746_f64;
                let a = [1.0 / g, 1.0 / (g * g)];
                (0..count)
                    .map(|i| {
                        let u = (0.5 + a[0] * (i + 1) as f64).fract();
                        let v = (0.5 + a[1] * (i + 1) as f64).fract();
                        let r = u.sqrt();
                        let th = 2.0 * PI * v;
                        [r * th.cos(), r * th.sin(), 0.0]
                    })
                    .collect()
            }
            _ => {
                let g = 1.220_744_084_605_759_5_f64;
                let a = [1.0 / g, 1.0 / (g * g), 1.0 / (g * g * g)];
                (0..count)
                    .map(|i| {
                        let k = (i + 1) as f64;
                        let u = (0.5 + a[0] * k).fract();
                        let v = (0.5 + a[1] * k).fract();
                        let w = (0.5 + a[2] * k).fract();
                        let r = u.cbrt();
                        let z = 1.0 - 2.0 * v;
                        let rho = (1.0 - z * z).max(0.0).sqrt();
                        let ph = 2.0 * PI * w;
                        [r * rho * ph.cos(), r * rho * ph.sin(), r * z]
                    })
                    .collect()
            }
        };
        BallRule { dim, nodes }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }
}
