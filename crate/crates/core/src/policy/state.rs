use crate::error::{Error, Result};

/// Sample counts and the observation log of one policy run.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationState {
    n_alternatives: usize,
    n_contexts: usize,
    counts: Vec<usize>,
    sums: Vec<f64>,
    log: Vec<(usize, usize, f64)>,
}

impl AllocationState {
    pub fn new(n_alternatives: usize, n_contexts: usize) -> Self {
        AllocationState {
            n_alternatives,
            n_contexts,
            counts: vec![0; n_alternatives * n_contexts],
            sums: vec![0.0; n_alternatives * n_contexts],
            log: Vec::new(),
        }
    }

    pub fn n_alternatives(&self) -> usize {
        self.n_alternatives
    }

    pub fn n_contexts(&self) -> usize {
        self.n_contexts
    }

    pub fn record(&mut self, k: usize, c: usize, y: f64) -> Result<()> {
        if k >= self.n_alternatives || c >= self.n_contexts {
            return Err(Error::invalid(format!("pair ({k}, {c}) out of range")));
        }
        let i = k * self.n_contexts + c;
        self.counts[i] += 1;
        self.sums[i] += y;
        self.log.push((k, c, y));
        Ok(())
    }

    pub fn count(&self, k: usize, c: usize) -> usize {
        self.counts[k * self.n_contexts + c]
    }

    pub fn sample_mean(&self, k: usize, c: usize) -> Option<f64> {
        let i = k * self.n_contexts + c;
        (self.counts[i] > 0).then(|| self.sums[i] / self.counts[i] as f64)
    }

    /// Total samples taken so far.
    pub fn total(&self) -> usize {
        self.log.len()
    }

    pub fn log(&self) -> &[(usize, usize, f64)] {
        &self.log
    }

    /// Counts as a `[k][c]` matrix.
    pub fn count_matrix(&self) -> Vec<Vec<usize>> {
        self.counts.chunks(self.n_contexts).map(<[usize]>::to_vec).collect()
    }

    /// Global sampling fractions `p̂(k, c) = N(k, c) / n`.
    pub fn global_fractions(&self) -> Vec<Vec<f64>> {
        let n = self.total().max(1) as f64;
        self.counts
            .chunks(self.n_contexts)
            .map(|row| row.iter().map(|&x| x as f64 / n).collect())
            .collect()
    }

    /// Fractions of context `c`'s samples that went to each alternative; all
    /// zero when the context is unsampled.
    pub fn context_fractions(&self, c: usize) -> Vec<f64> {
        let col: Vec<usize> = (0..self.n_alternatives).map(|k| self.count(k, c)).collect();
        let tot: usize = col.iter().sum();
        if tot == 0 {
            return vec![0.0; self.n_alternatives];
        }
        col.iter().map(|&x| x as f64 / tot as f64).collect()
    }
}
