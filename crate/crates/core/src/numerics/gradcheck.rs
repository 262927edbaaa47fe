use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates sampled per parameter tensor; smaller tensors are checked
    /// exhaustively.
    pub max_coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { eps: 1e-5, max_coords_per_tensor: 32, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// `(tensor index, flat coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
}

/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.value(loss).item()
}

/// Compares reverse-mode gradients of the scalar program `f` against central
/// finite differences at `params`.
///
/// `f` receives one trainable leaf per entry of `params` and must return a
/// scalar. Programs that do not reproduce their own output bit-exactly are
/// rejected, since finite differences over them are meaningless.
pub fn grad_check<F>(f: F, params: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let base = g.value(loss).item()?;
    if evaluate(&f, params)?.to_bits() != base.to_bits() {
        return Err(Error::Numeric("grad_check: program is not deterministic".into()));
    }
    g.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport { max_rel_error: 0.0, coords_checked: 0, worst: None };
    let mut probe = params.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let n = params[ti].numel();
        let analytic = g.grad(*var).cloned().unwrap_or_else(|| Tensor::zeros(params[ti].dims().to_vec()));
        let coords: Vec<usize> = if n <= opts.max_coords_per_tensor {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.max_coords_per_tensor).into_vec()
        };
        for idx in coords {
            let orig = params[ti].data()[idx];
            probe[ti].data_mut()[idx] = orig + opts.eps;
            let plus = evaluate(&f, &probe)?;
            probe[ti].data_mut()[idx] = orig - opts.eps;
            let minus = evaluate(&f, &probe)?;
            probe[ti].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let err = relative_error(analytic.data()[idx], numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((ti, idx));
            }
        }
    }
    Ok(report)
}
