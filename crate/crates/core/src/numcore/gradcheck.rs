use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Number of coordinates sampled across all parameters; all of them when
    /// the parameter set is smaller.
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            samples: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// `(parameter index, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares analytic gradients to central differences.
///
/// `f` maps a parameter set to `(loss, gradients)` with one gradient per
/// parameter, shaped like it. `f` must be deterministic.
pub fn grad_check<F>(mut f: F, params: &[Matrix], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: FnMut(&[Matrix]) -> Result<(f64, Vec<Matrix>)>,
{
    let (loss, analytic) = f(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss at the base point is {loss}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::Config(format!(
            "{} gradients returned for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    for (g, p) in analytic.iter().zip(params) {
        if g.shape() != p.shape() {
            return Err(Error::shape("grad_check", p.shape(), g.shape()));
        }
    }

    let total: usize = params.iter().map(Matrix::len).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let picks: Vec<usize> = if cfg.samples >= total {
        (0..total).collect()
    } else {
        let mut v = sample(&mut rng, total, cfg.samples).into_vec();
        v.sort_unstable();
        v
    };

    let mut work: Vec<Matrix> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates: picks.len(),
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };
    for flat in picks {
        let (pi, off) = locate(params, flat);
        let orig = params[pi].as_slice()[off];

        work[pi].as_mut_slice()[off] = orig + cfg.step;
        let plus = f(&work)?.0;
        work[pi].as_mut_slice()[off] = orig - cfg.step;
        let minus = f(&work)?.0;
        work[pi].as_mut_slice()[off] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss became non-finite when perturbing parameter {pi} entry {off}"
            )));
        }

        let numeric = (plus - minus) / (2.0 * cfg.step);
        let a = analytic[pi].as_slice()[off];
        let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = rel.max(report.max_rel_error);
            report.worst = Some((pi, off));
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    Ok(report)
}

fn locate(params: &[Matrix], mut flat: usize) -> (usize, usize) {
    for (i, p) in params.iter().enumerate() {
        if flat < p.len() {
            return (i, flat);
        }
        flat -= p.len();
    }
    unreachable!("flat index beyond parameter set")
}
