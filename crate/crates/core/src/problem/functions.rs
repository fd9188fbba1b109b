//! Synthetic reward functions, written in maximization form.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Raw Hartmann-3 constant table.
pub const HARTMANN3_DATA: &str = include_str!("../../data/hartmann3.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestFunction {
    Branin,
    Griewank,
    Hartmann3,
    Cosine8,
}

impl TestFunction {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "branin" => Ok(TestFunction::Branin),
            "griewank" => Ok(TestFunction::Griewank),
            "hartmann3" | "hartmann" => Ok(TestFunction::Hartmann3),
            "cosine8" => Ok(TestFunction::Cosine8),
            other => Err(Error::invalid(format!("unknown test function `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::Branin => "branin",
            TestFunction::Griewank => "griewank",
            TestFunction::Hartmann3 => "hartmann3",
            TestFunction::Cosine8 => "cosine8",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TestFunction::Branin | TestFunction::Griewank => 2,
            TestFunction::Hartmann3 => 3,
            TestFunction::Cosine8 => 8,
        }
    }

    /// Per-coordinate domain box.
    pub fn domain(&self) -> Vec<(f64, f64)> {
        match self {
            TestFunction::Branin => vec![(-5.0, 10.0), (0.0, 10.0)],
            TestFunction::Griewank => vec![(-10.0, 10.0); 2],
            TestFunction::Hartmann3 => vec![(0.0, 1.0); 3],
            TestFunction::Cosine8 => vec![(-1.0, 1.0); 8],
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        match self {
            TestFunction::Branin => branin(x),
            TestFunction::Griewank => griewank(x),
            TestFunction::Hartmann3 => hartmann3(x),
            TestFunction::Cosine8 => cosine8(x),
        }
    }
}

fn branin(x: &[f64]) -> f64 {
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let r = 6.0;
    let t = 1.0 / (8.0 * PI);
    let (x1, x2) = (x[0], x[1]);
    -(x2 - b * x1 * x1 + c * x1 - r).powi(2) - 10.0 * (1.0 - t) * x1.cos() - 10.0
}

fn griewank(x: &[f64]) -> f64 {
    let sum: f64 = x.iter().map(|v| v * v / 4000.0).sum();
    let prod: f64 = x
        .iter()
        .enumerate()
        .map(|(i, v)| (v / ((i + 1) as f64).sqrt()).cos())
        .product();
    -sum + prod - 1.0
}

fn cosine8(x: &[f64]) -> f64 {
    0.1 * x.iter().map(|v| (5.0 * PI * v).cos()).sum::<f64>() - x.iter().map(|v| v * v).sum::<f64>()
}

pub(crate) struct HartmannConstants {
    pub alpha: [f64; 4],
    pub a: [[f64; 3]; 4],
    pub p: [[f64; 3]; 4],
}

pub(crate) fn hartmann_constants() -> &'static HartmannConstants {
    static CONSTS: OnceLock<HartmannConstants> = OnceLock::new();
    CONSTS.get_or_init(|| {
        let nums: Vec<f64> = HARTMANN3_DATA
            .lines()
            .filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
            .flat_map(|l| l.split_whitespace().map(|t| t.parse::<f64>().expect("numeric constant")))
            .collect();
        assert_eq!(nums.len(), 4 + 12 + 12, "hartmann3 table has the wrong size");
        let mut c = HartmannConstants {
            alpha: [0.0; 4],
            a: [[0.0; 3]; 4],
            p: [[0.0; 3]; 4],
        };
        c.alpha.copy_from_slice(&nums[..4]);
        for i in 0..4 {
            for j in 0..3 {
                c.a[i][j] = nums[4 + 3 * i + j];
                c.p[i][j] = nums[16 + 3 * i + j] * 1e-4;
            }
        }
        c
    })
}

fn hartmann3(x: &[f64]) -> f64 {
    let c = hartmann_constants();
    (0..4)
        .map(|i| {
            let inner: f64 = (0..3).map(|j| c.a[i][j] * (x[j] - c.p[i][j]).powi(2)).sum();
            c.alpha[i] * (-inner).exp()
        })
        .sum()
}
