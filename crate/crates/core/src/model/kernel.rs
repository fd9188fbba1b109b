//! Stationary covariance kernels over the context space.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Finite, ordered set of distinct d-dimensional context vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTable {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl ContextTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("context table is empty"))?;
        if dim == 0 {
            return Err(Error::invalid("contexts must have dimension >= 1"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::invalid(format!(
                    "context {i} has dimension {}, expected {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("context {i} is not finite")));
            }
            if rows[..i].contains(row) {
                return Err(Error::invalid(format!("context {i} duplicates an earlier row")));
            }
        }
        Ok(ContextTable { dim, rows })
    }

    /// One-dimensional contexts at the given coordinates.
    pub fn from_points(points: &[f64]) -> Result<Self> {
        Self::new(points.iter().map(|&x| vec![x]).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, c: usize) -> &[f64] {
        &self.rows[c]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Median Euclidean distance over all unordered pairs (1.0 for a single context).
    pub fn median_pairwise_distance(&self) -> f64 {
        let mut d = Vec::with_capacity(self.len() * self.len().saturating_sub(1) / 2);
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                let s: f64 = self.rows[i]
                    .iter()
                    .zip(&self.rows[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d.push(s.sqrt());
            }
        }
        if d.is_empty() {
            return 1.0;
        }
        d.sort_by(f64::total_cmp);
        let m = d.len() / 2;
        if d.len() % 2 == 1 {
            d[m]
        } else {
            0.5 * (d[m - 1] + d[m])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    SquaredExponential,
    /// Matérn with fixed smoothness 5/2.
    Matern52,
    /// Diagonal prior: `output_scale` on coincident contexts, zero elsewhere.
    /// Length scales are ignored.
    Independent,
}

impl KernelFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "se" | "rbf" | "squared-exponential" | "squared_exponential" => {
                Ok(KernelFamily::SquaredExponential)
            }
            "matern52" | "matern-5/2" | "matern" => Ok(KernelFamily::Matern52),
            "independent" | "diagonal" => Ok(KernelFamily::Independent),
            other => Err(Error::invalid(format!("unknown kernel family `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::SquaredExponential => "se",
            KernelFamily::Matern52 => "matern52",
            KernelFamily::Independent => "independent",
        }
    }
}

/// Kernel family plus hyperparameters.
///
/// Distances are scaled coordinate-wise by the length scales:
/// `r² = Σ_i ((c_i − c'_i) / ℓ_i)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub output_scale: f64,
    pub length_scales: Vec<f64>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, output_scale: f64, length_scales: Vec<f64>) -> Result<Self> {
        let spec = KernelSpec {
            family,
            output_scale,
            length_scales,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn matern52(output_scale: f64, length_scales: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::Matern52, output_scale, length_scales)
    }

    pub fn squared_exponential(output_scale: f64, length_scales: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::SquaredExponential, output_scale, length_scales)
    }

    /// Diagonal prior with variance `output_scale` over `dim`-dimensional contexts.
    pub fn independent(output_scale: f64, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Independent, output_scale, vec![1.0; dim])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return Err(Error::invalid(format!(
                "output scale must be positive, got {}",
                self.output_scale
            )));
        }
        if self.length_scales.is_empty() {
            return Err(Error::invalid("kernel needs at least one length scale"));
        }
        if let Some(l) = self
            .length_scales
            .iter()
            .find(|&&l| !(l > 0.0 && l.is_finite()))
        {
            return Err(Error::invalid(format!("length scale must be positive, got {l}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    /// Prior covariance between two contexts.
    pub fn eval(&self, c: &[f64], c_prime: &[f64]) -> Result<f64> {
        if c.len() != self.dim() || c_prime.len() != self.dim() {
            return Err(Error::invalid(format!(
                "kernel has {} length scales but contexts have dimensions {} and {}",
                self.dim(),
                c.len(),
                c_prime.len()
            )));
        }
        Ok(self.eval_unchecked(c, c_prime))
    }

    pub(crate) fn eval_unchecked(&self, c: &[f64], c_prime: &[f64]) -> f64 {
        let r2: f64 = c
            .iter()
            .zip(c_prime)
            .zip(&self.length_scales)
            .map(|((a, b), l)| {
                let z = (a - b) / l;
                z * z
            })
            .sum();
        self.output_scale * correlation(self.family, r2)
    }

    /// Prior covariance matrix over every context in the table.
    pub fn gram(&self, contexts: &ContextTable) -> Result<DMatrix<f64>> {
        if contexts.dim() != self.dim() {
            return Err(Error::invalid(format!(
                "kernel dimension {} does not match context dimension {}",
                self.dim(),
                contexts.dim()
            )));
        }
        let n = contexts.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = self.output_scale;
            for j in 0..i {
                let v = self.eval_unchecked(contexts.get(i), contexts.get(j));
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }
}

/// Unit-variance correlation as a function of the squared scaled distance.
fn correlation(family: KernelFamily, r2: f64) -> f64 {
    match family {
        KernelFamily::SquaredExponential => (-0.5 * r2).exp(),
        KernelFamily::Matern52 => {
            let s = (5.0 * r2).sqrt();
            (1.0 + s + 5.0 * r2 / 3.0) * (-s).exp()
        }
        KernelFamily::Independent => {
            if r2 == 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}
