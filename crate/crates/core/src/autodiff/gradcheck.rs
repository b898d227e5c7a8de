//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Denominator floor for relative errors, so coordinates whose true
/// derivative is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates sampled per parameter tensor; `None` checks all of them.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords: Some(32),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub index: usize,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±eps probe crossed a ReLU/pool/clamp branch, where a
    /// central difference does not estimate the derivative.
    pub skipped_kinks: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares gradients from [`Graph::backward`] against
/// `(f(θ+ε) − f(θ−ε)) / 2ε`, coordinate by coordinate.
///
/// `build` receives a fresh graph and the parameter nodes (in the order of
/// `params`) and returns the scalar root.
pub fn finite_diff_check<F>(params: &[Tensor<f64>], build: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|t| g.constant(t.clone())).collect();
        let root = build(&mut g, &ids)?;
        Ok((g.value(root).item(), g.kink_fingerprint()))
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|t| g.param(t.clone())).collect();
    let root = build(&mut g, &ids)?;
    let base_kinks = g.kink_fingerprint();
    let grads = g.backward(root)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = Vec::with_capacity(params.len());
    for (pi, id) in ids.iter().enumerate() {
        let analytic = match grads.get(*id) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; params[pi].numel()],
        };
        let n = params[pi].numel();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut check = ParamCheck {
            index: pi,
            max_rel_error: 0.0,
            checked: 0,
            skipped_kinks: 0,
        };
        for c in coords {
            let orig = work[pi].data()[c];
            work[pi].data_mut()[c] = orig + opts.eps;
            let (plus, kp) = eval(&work)?;
            work[pi].data_mut()[c] = orig - opts.eps;
            let (minus, km) = eval(&work)?;
            work[pi].data_mut()[c] = orig;
            if kp != base_kinks || km != base_kinks {
                check.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.eps);
            if !numeric.is_finite() {
                return Err(Error::NonFinite("finite difference".into()));
            }
            check.max_rel_error = check.max_rel_error.max(relative_error(analytic[c], numeric));
            check.checked += 1;
        }
        report.push(check);
    }
    Ok(GradCheckReport { params: report })
}
