//! Per-pair sample moments, the statistical model of the C-OCBA baseline.

/// Running moments for one (alternative, context) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairMoments {
    pub count: usize,
    pub mean: f64,
    m2: f64,
}

impl PairMoments {
    pub fn push(&mut self, y: f64) {
        self.count += 1;
        let delta = y - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (y - self.mean);
    }

    /// Unbiased sample variance; `None` with fewer than two observations.
    pub fn variance(&self) -> Option<f64> {
        (self.count >= 2).then(|| self.m2 / (self.count - 1) as f64)
    }
}

/// Independent normal model: one [`PairMoments`] per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentModel {
    n_contexts: usize,
    pairs: Vec<PairMoments>,
}

impl IndependentModel {
    pub fn new(n_alternatives: usize, n_contexts: usize) -> Self {
        IndependentModel {
            n_contexts,
            pairs: vec![PairMoments::default(); n_alternatives * n_contexts],
        }
    }

    pub fn n_alternatives(&self) -> usize {
        self.pairs.len() / self.n_contexts
    }

    pub fn n_contexts(&self) -> usize {
        self.n_contexts
    }

    pub fn update(&mut self, k: usize, c: usize, y: f64) {
        self.pairs[k * self.n_contexts + c].push(y);
    }

    pub fn get(&self, k: usize, c: usize) -> &PairMoments {
        &self.pairs[k * self.n_contexts + c]
    }

    pub fn mean(&self, k: usize, c: usize) -> f64 {
        self.get(k, c).mean
    }

    /// True when every pair has a defined sample variance.
    pub fn all_variances_defined(&self) -> bool {
        self.pairs.iter().all(|p| p.count >= 2)
    }
}
