//! Central finite-difference checking of tape gradients.

use super::matrix::Matrix;
use super::tape::{Tape, TensorId};
use crate::error::Result;

/// Settings for [`grad_check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub tol: f64,
    /// Lower bound on the relative-error denominator. Entries whose true
    /// derivative is zero (dead ReLU units, unused rows) would otherwise turn
    /// O(1e-10) round-off in the difference quotient into a spurious failure.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-6,
            tol: 1e-5,
            floor: 1e-4,
        }
    }
}

impl GradCheck {
    pub fn with_tol(tol: f64) -> Self {
        GradCheck {
            tol,
            ..GradCheck::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Relative error used throughout: `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Compare the tape gradient of a scalar function of one input against
/// central differences. Failures are reported, not raised; an `Err` only
/// comes from `f` itself.
pub fn grad_check<F>(f: F, x: &Matrix, cfg: GradCheck) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, TensorId) -> Result<TensorId>,
{
    grad_check_many(|t, ids| f(t, ids[0]), std::slice::from_ref(x), cfg)
}

/// Multi-input variant: every entry of every input is perturbed.
pub fn grad_check_many<F>(f: F, xs: &[Matrix], cfg: GradCheck) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
{
    let analytic: Vec<Matrix> = {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let loss = f(&mut tape, &ids)?;
        tape.backward(loss)?;
        ids.iter()
            .zip(xs)
            .map(|(&id, x)| {
                tape.grad(id)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(x.rows(), x.cols()))
            })
            .collect()
    };

    let eval = |inputs: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let loss = f(&mut tape, &ids)?;
        Ok(tape.scalar(loss))
    };

    let mut work: Vec<Matrix> = xs.to_vec();
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    for k in 0..xs.len() {
        for e in 0..xs[k].len() {
            let orig = xs[k].as_slice()[e];
            work[k].as_mut_slice()[e] = orig + cfg.step;
            let plus = eval(&work)?;
            work[k].as_mut_slice()[e] = orig - cfg.step;
            let minus = eval(&work)?;
            work[k].as_mut_slice()[e] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let rel = relative_error(analytic[k].as_slice()[e], numeric, cfg.floor);
            if rel > max_rel || worst.is_none() {
                max_rel = max_rel.max(rel);
                worst = Some((k, e));
            }
            checked += 1;
        }
    }

    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst,
        checked,
        tol: cfg.tol,
        passed: max_rel <= cfg.tol,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::Rng;

    use super::*;
    use crate::autodiff::SparseRows;
    use crate::rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng::rng(seed);
        let data = (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn assert_passes(report: GradCheckReport) {
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn sum_of_squares_passes_tightly() {
        let x = random(3, 4, 1);
        let r = grad_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                t.sum(sq)
            },
            &x,
            GradCheck::with_tol(1e-6),
        )
        .unwrap();
        assert_passes(r);
    }

    #[test]
    fn matmul_gradient_is_ones_times_b_transposed() {
        let a = random(3, 4, 2);
        let b = random(4, 2, 3);
        let mut t = Tape::new();
        let ia = t.param(a.clone());
        let ib = t.constant(b.clone());
        let p = t.matmul(ia, ib).unwrap();
        let s = t.sum(p).unwrap();
        t.backward(s).unwrap();
        let expected = Matrix::filled(3, 2, 1.0).matmul(&b.transpose()).unwrap();
        let got = t.grad(ia).unwrap();
        for (g, e) in got.as_slice().iter().zip(expected.as_slice()) {
            assert!((g - e).abs() < 1e-14);
        }

        let r = grad_check_many(
            |t, ids| {
                let p = t.matmul(ids[0], ids[1])?;
                t.sum(p)
            },
            &[a, b],
            GradCheck::default(),
        )
        .unwrap();
        assert_passes(r);
    }

    // Weighted sum so that each output entry carries a distinct cotangent.
    fn weighted_sum(t: &mut Tape, y: TensorId, seed: u64) -> Result<TensorId> {
        let (r, c) = t.value(y).shape();
        let w = t.constant(random(r, c, seed));
        let p = t.mul(y, w)?;
        t.sum(p)
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let cfg = GradCheck::default();
        let a = random(4, 3, 10);
        let b = random(4, 3, 11);
        let bias = random(1, 3, 12);

        let cases: Vec<(&str, Box<dyn Fn(&mut Tape, &[TensorId]) -> Result<TensorId>>)> = vec![
            ("add", Box::new(|t, x| {
                let y = t.add(x[0], x[1])?;
                weighted_sum(t, y, 20)
            })),
            ("add_broadcast", Box::new(|t, x| {
                let y = t.add(x[0], x[2])?;
                weighted_sum(t, y, 21)
            })),
            ("sub", Box::new(|t, x| {
                let y = t.sub(x[0], x[1])?;
                weighted_sum(t, y, 22)
            })),
            ("mul", Box::new(|t, x| {
                let y = t.mul(x[0], x[1])?;
                weighted_sum(t, y, 23)
            })),
            ("scale", Box::new(|t, x| {
                let y = t.scale(x[0], -2.5)?;
                weighted_sum(t, y, 24)
            })),
            ("relu", Box::new(|t, x| {
                let y = t.relu(x[0])?;
                weighted_sum(t, y, 25)
            })),
            ("mean_rows", Box::new(|t, x| {
                let y = t.mean_rows(x[0])?;
                weighted_sum(t, y, 26)
            })),
            ("concat_rows", Box::new(|t, x| {
                let y = t.concat_rows(x[0], x[1])?;
                weighted_sum(t, y, 27)
            })),
            ("transpose", Box::new(|t, x| {
                let y = t.transpose(x[0])?;
                weighted_sum(t, y, 28)
            })),
            ("matmul_nt", Box::new(|t, x| {
                let y = t.matmul_nt(x[0], x[1])?;
                weighted_sum(t, y, 29)
            })),
            ("row_l2_normalize", Box::new(|t, x| {
                let y = t.row_l2_normalize(x[0])?;
                weighted_sum(t, y, 30)
            })),
            ("log_sum_exp_row", Box::new(|t, x| {
                let y = t.log_sum_exp_row(x[0])?;
                weighted_sum(t, y, 31)
            })),
            ("sparse_rows", Box::new(|t, x| {
                let map = SparseRows::new(4, vec![vec![(0, 0.3), (3, 0.7)], vec![], vec![(1, 1.0), (1, 2.0)]])?;
                let y = t.sparse_rows(Arc::new(map), x[0])?;
                weighted_sum(t, y, 32)
            })),
            ("gather", Box::new(|t, x| {
                let y = t.gather(x[0], vec![(0, 0), (3, 2), (0, 0)])?;
                weighted_sum(t, y, 33)
            })),
        ];

        for (name, f) in cases {
            let r = grad_check_many(|t, ids| f(t, ids), &[a.clone(), b.clone(), bias.clone()], cfg).unwrap();
            assert!(r.passed, "{name}: {r:?}");
        }
    }

    #[test]
    fn corrupted_backward_rule_is_caught() {
        let x = random(2, 3, 40);
        // d/dx sin is cos; claim it is 1.1·cos.
        let r = grad_check(
            |t, x| {
                let y = t.map(x, f64::sin, |v| 1.1 * v.cos())?;
                t.sum(y)
            },
            &x,
            GradCheck::default(),
        )
        .unwrap();
        assert!(!r.passed);
        assert!(r.max_rel_error > 0.05);

        let honest = grad_check(
            |t, x| {
                let y = t.map(x, f64::sin, f64::cos)?;
                t.sum(y)
            },
            &x,
            GradCheck::default(),
        )
        .unwrap();
        assert!(honest.passed, "{honest:?}");
    }
}
