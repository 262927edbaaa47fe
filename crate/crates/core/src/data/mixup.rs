use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Mixing coefficient for input mixup.
pub const MIXUP_ALPHA: f64 = 0.2;

/// `x' = lambda x_i + (1 - lambda) x_partner(i)` for features `[N, ...]`
/// and label weights `[N, K]`.
pub fn mixup_with(features: &Tensor, labels: &Tensor, lambda: f64, partner: &[usize]) -> Result<(Tensor, Tensor)> {
    let n = features.dims().first().copied().unwrap_or(0);
    if labels.dims().first() != Some(&n) || partner.len() != n {
        return Err(Error::shape(format!(
            "mixup over {n} items with labels {:?} and {} partners",
            labels.dims(),
            partner.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::arg(format!("mixup coefficient {lambda} outside [0, 1]")));
    }
    let blend = |t: &Tensor| {
        let row = t.numel() / n.max(1);
        Tensor::from_fn(t.dims().to_vec(), |i| {
            let (r, j) = (i / row, i % row);
            lambda * t.data()[i] + (1.0 - lambda) * t.data()[partner[r] * row + j]
        })
    };
    Ok((blend(features), blend(labels)))
}

/// Mixup with `lambda ~ Beta(alpha, alpha)` and a random permutation of
/// partners. Batches of one pass through unchanged. Returns the coefficient
/// used.
pub fn mixup<R: Rng + ?Sized>(features: &Tensor, labels: &Tensor, alpha: f64, rng: &mut R) -> Result<(Tensor, Tensor, f64)> {
    let n = features.dims().first().copied().unwrap_or(0);
    if n < 2 {
        return Ok((features.clone(), labels.clone(), 1.0));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::arg(format!("mixup alpha {alpha}: {e}")))?;
    let lambda = beta.sample(rng);
    let mut partner: Vec<usize> = (0..n).collect();
    partner.shuffle(rng);
    let (x, y) = mixup_with(features, labels, lambda, &partner)?;
    Ok((x, y, lambda))
}
