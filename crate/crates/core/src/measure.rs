//! Discrete measures on the closed ball `B(0, R)` of `R^d`.
//!
//! A [`DiscreteMeasure`] is a finite list of weighted atoms. Points are stored
//! row-major in a single buffer; [`DiscreteMeasure::point`] hands out slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which norm a ball is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Euclidean,
    Linf,
}

impl Norm {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Norm::Euclidean => sq_dist(a, b).sqrt(),
            Norm::Linf => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
        }
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// A finite, positively weighted point set inside `B(0, ball_radius)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
    ball_radius: f64,
}

impl DiscreteMeasure {
    /// Builds a validated measure. Points outside the ball are rejected, never clipped.
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>, ball_radius: f64) -> Result<Self> {
        let dim = points.first().map(Vec::len).ok_or(Error::EmptySupport)?;
        if dim == 0 {
            return Err(Error::InvalidConfig("ambient dimension must be positive".into()));
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords, weights, ball_radius)
    }

    /// Same as [`DiscreteMeasure::new`] with coordinates given row-major.
    pub fn from_flat(dim: usize, coords: Vec<f64>, weights: Vec<f64>, ball_radius: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("ambient dimension must be positive".into()));
        }
        if !(ball_radius > 0.0 && ball_radius.is_finite()) {
            return Err(Error::InvalidRadius(ball_radius));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: coords.len() % dim });
        }
        let n = coords.len() / dim;
        if n == 0 {
            return Err(Error::EmptySupport);
        }
        if weights.len() != n {
            return Err(Error::LengthMismatch { left: n, right: weights.len() });
        }
        for (index, &w) in weights.iter().enumerate() {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::NonPositiveWeight { index, weight: w });
            }
        }
        for (index, p) in coords.chunks_exact(dim).enumerate() {
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteCoordinate { index });
            }
            let r = norm(p);
            if r > ball_radius {
                return Err(Error::PointOutsideBall { index, norm: r, radius: ball_radius });
            }
        }
        let m = DiscreteMeasure { dim, coords, weights, ball_radius };
        if !m.total_mass().is_finite() {
            return Err(Error::InvalidConfig("total mass overflows".into()));
        }
        Ok(m)
    }

    /// A measure of unit-weight atoms.
    pub fn uniform(points: Vec<Vec<f64>>, ball_radius: f64) -> Result<Self> {
        let w = vec![1.0; points.len()];
        Self::new(points, w, ball_radius)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ball_radius(&self) -> f64 {
        self.ball_radius
    }

    /// Number of atoms.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    /// Iterates `(point, weight)` pairs in support order.
    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points().zip(self.weights.iter().copied())
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Mass of the closed ball `{x : |x - center| <= radius}`.
    pub fn ball_mass(&self, center: &[f64], radius: f64, norm: Norm) -> Result<f64> {
        if center.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: center.len() });
        }
        if radius < 0.0 || radius.is_nan() {
            return Err(Error::InvalidConfig(format!("ball radius must be non-negative, got {radius}")));
        }
        Ok(self
            .atoms()
            .filter(|(p, _)| norm.distance(p, center) <= radius)
            .map(|(_, w)| w)
            .sum())
    }

    /// Same support with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let weights = self.weights.iter().map(|w| w * factor).collect();
        Self::from_flat(self.dim, self.coords.clone(), weights, self.ball_radius)
    }

    /// Merges atoms lying within `tolerance` of each other in the L-infinity norm.
    ///
    /// Atoms are scanned in support order; each atom joins the first earlier
    /// representative within `tolerance`, which keeps its coordinates.
    pub fn coalesce(&self, tolerance: f64) -> Self {
        let mut coords: Vec<f64> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (p, w) in self.atoms() {
            let hit = coords
                .chunks_exact(self.dim)
                .position(|q| Norm::Linf.distance(p, q) <= tolerance);
            match hit {
                Some(j) => weights[j] += w,
                None => {
                    coords.extend_from_slice(p);
                    weights.push(w);
                }
            }
        }
        DiscreteMeasure { dim: self.dim, coords, weights, ball_radius: self.ball_radius }
    }
}

/// A sample `X_1, ..., X_n` sharing one ambient dimension and ball radius,
/// with optional hidden class labels in `1..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSample {
    dim: usize,
    ball_radius: f64,
    measures: Vec<DiscreteMeasure>,
    labels: Option<Vec<usize>>,
}

impl MeasureSample {
    pub fn new(measures: Vec<DiscreteMeasure>, labels: Option<Vec<usize>>) -> Result<Self> {
        let first = measures.first().ok_or(Error::EmptySample)?;
        let (dim, ball_radius) = (first.dim, first.ball_radius);
        for m in &measures {
            if m.dim != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: m.dim });
            }
            if m.ball_radius != ball_radius {
                return Err(Error::InvalidConfig(format!(
                    "measures disagree on ball radius ({} vs {ball_radius})",
                    m.ball_radius
                )));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != measures.len() {
                return Err(Error::LengthMismatch { left: measures.len(), right: labels.len() });
            }
            if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l == 0) {
                return Err(Error::InvalidLabel { index, label, max: usize::MAX });
            }
        }
        Ok(MeasureSample { dim, ball_radius, measures, labels })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ball_radius(&self) -> f64 {
        self.ball_radius
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    pub fn measures(&self) -> &[DiscreteMeasure] {
        &self.measures
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of classes, i.e. the largest label.
    pub fn n_classes(&self) -> Option<usize> {
        self.labels.as_ref().and_then(|l| l.iter().copied().max())
    }

    /// Mass bound `M`: the largest total mass in the sample.
    pub fn mass_bound(&self) -> f64 {
        self.measures.iter().map(DiscreteMeasure::total_mass).fold(0.0, f64::max)
    }

    /// Sub-sample at the given positions, labels carried along.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let measures = indices.iter().map(|&i| self.measures[i].clone()).collect();
        let labels = self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        MeasureSample::new(measures, labels)
    }

    /// The empirical mean measure: every atom of every measure, weight divided by `n`.
    ///
    /// Support order is sample order, then within-measure order. Duplicate
    /// points are kept as separate atoms.
    pub fn mean_measure(&self) -> DiscreteMeasure {
        mean_of(self.measures.iter())
    }
}

/// Mean measure of an arbitrary non-empty collection of measures of one dimension.
pub(crate) fn mean_of<'a>(measures: impl Iterator<Item = &'a DiscreteMeasure> + Clone) -> DiscreteMeasure {
    let n = measures.clone().count();
    let first = measures.clone().next().expect("mean of an empty collection");
    let (dim, ball_radius) = (first.dim, first.ball_radius);
    let total: usize = measures.clone().map(|m| m.len()).sum();
    let mut coords = Vec::with_capacity(total * dim);
    let mut weights = Vec::with_capacity(total);
    let nf = n as f64;
    for m in measures {
        coords.extend_from_slice(&m.coords);
        weights.extend(m.weights.iter().map(|w| w / nf));
    }
    DiscreteMeasure { dim, coords, weights, ball_radius }
}

/// Free-function form of [`MeasureSample::mean_measure`].
pub fn mean_measure(sample: &MeasureSample) -> Result<DiscreteMeasure> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(sample.mean_measure())
}
