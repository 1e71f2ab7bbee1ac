//! Kernel vectorization of measures against a codebook.
//!
//! Component `j` of the embedding of `mu` is `int psi(|u - c_j| / sigma) mu(du)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{sq_dist, DiscreteMeasure, MeasureSample};
use crate::quantize::Codebook;

/// Built-in kernel profiles. Scale enters only through `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// `(1 - ((u - 1) v 0)) v 0`: flat on `[0, 1]`, linear down to zero at 2.
    Psi0,
    /// `exp(-u)`
    Exponential,
    /// `exp(-u^2 / 2)`
    Gaussian,
    /// Same profile as `Exponential`; kept as a separate label.
    Laplace,
}

impl Kernel {
    #[inline]
    pub fn value(self, u: f64) -> f64 {
        match self {
            Kernel::Psi0 => (1.0 - (u - 1.0).max(0.0)).max(0.0),
            Kernel::Exponential | Kernel::Laplace => (-u).exp(),
            Kernel::Gaussian => (-0.5 * u * u).exp(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Psi0 => "psi0",
            Kernel::Exponential => "exp",
            Kernel::Gaussian => "gauss",
            Kernel::Laplace => "laplace",
        }
    }

    /// Parses CLI-style names (`psi0`, `exp`, `gauss`, `laplace` and long forms).
    pub fn parse(s: &str) -> Option<Kernel> {
        match s {
            "psi0" => Some(Kernel::Psi0),
            "exp" | "exponential" => Some(Kernel::Exponential),
            "gauss" | "gaussian" => Some(Kernel::Gaussian),
            "laplace" => Some(Kernel::Laplace),
            _ => None,
        }
    }
}

pub fn kernel_eval(kernel: Kernel, u: f64) -> Result<f64> {
    if u < 0.0 || u.is_nan() {
        return Err(Error::NegativeArgument(u));
    }
    Ok(kernel.value(u))
}

/// Outcome of checking the four `(p, delta)`-kernel conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelCheck {
    /// `sup psi <= 1`
    pub bounded: bool,
    /// `sup_{u <= 1/p} psi >= 1 - delta`
    pub near_one_inside: bool,
    /// `sup_{u > 2p} psi <= delta`
    pub small_outside: bool,
    /// `|psi(u) - psi(v)| <= |u - v|`
    pub lipschitz_ok: bool,
}

impl KernelCheck {
    pub fn passed(&self) -> bool {
        self.bounded && self.near_one_inside && self.small_outside && self.lipschitz_ok
    }
}

/// Default grid resolution for [`check_kernel`].
pub const DEFAULT_GRID_STEP: f64 = 1e-3;

/// Checks whether `kernel` is a `(p, delta)`-kernel on the grid `{0, h, 2h, ...}` up to `4p`.
///
/// All built-in kernels are non-increasing and continuous, so the tail
/// supremum over `u > 2p` is their value at `2p`, which is checked exactly
/// in addition to the grid points beyond `2p`. Violations narrower than the
/// grid step cannot be seen. `delta` is evaluated as given even outside
/// `[0, 1/2]`.
pub fn check_kernel(kernel: Kernel, p: u32, delta: f64, grid_step: f64) -> Result<KernelCheck> {
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(Error::InvalidConfig(format!("grid step must be positive, got {grid_step}")));
    }
    if p == 0 {
        return Err(Error::InvalidConfig("p must be at least 1".into()));
    }
    let p = f64::from(p);
    let upper = 4.0 * p;
    let steps = (upper / grid_step).ceil() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| (i as f64 * grid_step).min(upper)).collect();
    let values: Vec<f64> = grid.iter().map(|&u| kernel.value(u)).collect();

    let bounded = values.iter().all(|&v| (0.0..=1.0).contains(&v));

    let inside = grid
        .iter()
        .zip(&values)
        .filter(|(&u, _)| u <= 1.0 / p)
        .map(|(_, &v)| v)
        .chain(std::iter::once(kernel.value(1.0 / p)))
        .fold(f64::NEG_INFINITY, f64::max);
    let near_one_inside = inside >= 1.0 - delta;

    let tail_limit = kernel.value(2.0 * p);
    let tail_grid = grid
        .iter()
        .zip(&values)
        .filter(|(&u, _)| u > 2.0 * p)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let small_outside = tail_limit <= delta && tail_grid <= delta;

    // Rounding in psi0's linear piece can exceed slope 1 by an ulp or two.
    let lipschitz_ok = grid
        .windows(2)
        .zip(values.windows(2))
        .all(|(u, v)| (v[1] - v[0]).abs() <= (u[1] - u[0]).abs() * (1.0 + 1e-9) + 1e-15);

    Ok(KernelCheck { bounded, near_one_inside, small_outside, lipschitz_ok })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VectorizeConfig {
    pub sigma: f64,
    pub kernel: Kernel,
}

impl VectorizeConfig {
    pub fn new(kernel: Kernel, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
        }
        Ok(VectorizeConfig { sigma, kernel })
    }
}

/// Embedding of `m`: one kernel-smoothed mass per codepoint.
pub fn vectorize(m: &DiscreteMeasure, cb: &Codebook, cfg: &VectorizeConfig) -> Result<Vec<f64>> {
    if m.dim() != cb.dim() {
        return Err(Error::DimensionMismatch { expected: cb.dim(), found: m.dim() });
    }
    if !(cfg.sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("sigma must be positive, got {}", cfg.sigma)));
    }
    Ok(cb
        .codepoints()
        .map(|c| {
            m.atoms()
                .map(|(u, w)| w * cfg.kernel.value(sq_dist(u, c).sqrt() / cfg.sigma))
                .sum()
        })
        .collect())
}

/// `n x k` matrix of vectorized measures, with the sample labels when known.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub rows: Vec<Vec<f64>>,
    pub labels: Option<Vec<usize>>,
}

impl Embedding {
    pub fn new(rows: Vec<Vec<f64>>, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(first) = rows.first() {
            if let Some(bad) = rows.iter().find(|r| r.len() != first.len()) {
                return Err(Error::DimensionMismatch { expected: first.len(), found: bad.len() });
            }
        }
        if let Some(l) = &labels {
            if l.len() != rows.len() {
                return Err(Error::LengthMismatch { left: rows.len(), right: l.len() });
            }
        }
        Ok(Embedding { rows, labels })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Row length.
    pub fn k(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// Row-wise [`vectorize`]; row `i` belongs to measure `i`.
pub fn vectorize_sample(sample: &MeasureSample, cb: &Codebook, cfg: &VectorizeConfig) -> Result<Embedding> {
    let rows = sample
        .measures()
        .par_iter()
        .map(|m| vectorize(m, cb, cfg))
        .collect::<Result<Vec<_>>>()?;
    Embedding::new(rows, sample.labels().map(<[usize]>::to_vec))
}

/// Half the smallest positive distance between codepoints; the ball radius
/// when `k = 1` or every codepoint coincides.
pub fn default_sigma(cb: &Codebook) -> f64 {
    let k = cb.k();
    let mut gap = f64::INFINITY;
    for i in 0..k {
        for j in i + 1..k {
            let d = sq_dist(cb.codepoint(i), cb.codepoint(j)).sqrt();
            if d > 0.0 && d < gap {
                gap = d;
            }
        }
    }
    if gap.is_finite() {
        gap / 2.0
    } else {
        cb.ball_radius()
    }
}
