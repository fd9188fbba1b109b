use std::f64::consts::PI;

use ctxsel::problem::{make_synthetic, noise_sd_for, SyntheticSpec, TestFunction};

/// Negated Branin from its textbook constants.
fn neg_branin(x1: f64, x2: f64) -> f64 {
    let (a, b, c, r, s, t) = (1.0, 5.1 / (4.0 * PI * PI), 5.0 / PI, 6.0, 10.0, 1.0 / (8.0 * PI));
    -(a * (x2 - b * x1 * x1 + c * x1 - r).powi(2) + s * (1.0 - t) * x1.cos() + s)
}

#[test]
fn branin_best_map_is_pinned() {
    let problem = make_synthetic(&SyntheticSpec::branin_expected(), 1).unwrap();
    let mut scanned = Vec::new();
    for c in 0..10 {
        let x2 = problem.contexts().get(c)[0];
        assert!((0.0..15.0).contains(&x2));
        let mut best = (0, f64::NEG_INFINITY);
        for k in 0..10 {
            let x1 = -5.0 + 1.5 * k as f64;
            let v = neg_branin(x1, x2);
            assert!((problem.truth()[k][c] - v).abs() <= 1e-12 * v.abs().max(1.0));
            if v > best.1 {
                best = (k, v);
            }
        }
        scanned.push(best.0);
    }
    assert_eq!(problem.true_best(), &scanned[..]);
    assert_eq!(scanned, BRANIN_SEED1_BEST);
}

const BRANIN_SEED1_BEST: [usize; 10] = [2, 6, 5, 6, 2, 5, 2, 2, 2, 6];

#[test]
fn noise_is_three_percent_of_the_sampled_range() {
    for f in [TestFunction::Branin, TestFunction::Griewank, TestFunction::Hartmann3, TestFunction::Cosine8] {
        let sd = noise_sd_for(f, 4);
        let domain = f.domain();
        // the sampled range can only undershoot the range over a dense scan
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let steps = match domain.len() {
            1 | 2 => 400,
            3 => 30,
            _ => 4,
        };
        let mut idx = vec![0usize; domain.len()];
        'scan: loop {
            let x: Vec<f64> = idx
                .iter()
                .zip(&domain)
                .map(|(&i, &(a, b))| a + (b - a) * i as f64 / steps as f64)
                .collect();
            let v = f.eval(&x);
            lo = lo.min(v);
            hi = hi.max(v);
            for d in 0..idx.len() {
                idx[d] += 1;
                if idx[d] <= steps {
                    continue 'scan;
                }
                idx[d] = 0;
            }
            break;
        }
        assert!(sd > 0.0);
        assert!(sd <= 0.03 * (hi - lo) * 1.05, "{f:?}: {sd} vs range {}", hi - lo);
        assert!(sd >= 0.03 * (hi - lo) * 0.5, "{f:?}: {sd} vs range {}", hi - lo);
        let p = make_synthetic(&SyntheticSpec::new(f, 3, 4, ctxsel::problem::WeightSpec::Uniform), 4).unwrap();
        assert!(p.noise_sd().iter().flatten().all(|&s| s == sd));
    }
}
