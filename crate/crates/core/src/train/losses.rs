//! Training objectives. Every loss is averaged over the batch; per-sample reductions follow the
//! single-sample definitions.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::network::normalize_points;
use crate::pose::NUM_KEYPOINTS;

/// Probabilities are clipped to `[PROB_EPS, 1 - PROB_EPS]` before any logarithm.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub offset: f64,
    pub scale: f64,
    pub adv: f64,
    pub dis: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            offset: 10.0,
            scale: 10.0,
            adv: 10.0,
            dis: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.offset, self.scale, self.adv, self.dis];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be non-negative, got {all:?}")));
        }
        Ok(())
    }
}

/// Loss components of one generator step (scalars).
#[derive(Debug, Clone)]
pub struct LossParts<T> {
    pub cls: T,
    pub offset: T,
    pub scale: T,
    pub adv: T,
    pub dis: T,
}

fn clip(p: &Tensor) -> Result<Tensor> {
    Ok(p.clamp(PROB_EPS, 1.0 - PROB_EPS)?)
}

/// Weighted binary cross-entropy: `(1/K) sum_i [-w_i l_i log c_i - (1 - l_i) log(1 - c_i)]`.
///
/// `scores`, `labels: (B, K)`, `weights: (K)`.
pub fn loss_cls(scores: &Tensor, labels: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let c = clip(scores)?;
    let pos = labels.broadcast_mul(weights)?.mul(&c.log()?)?;
    let neg = (1.0 - labels)?.mul(&(1.0 - &c)?.log()?)?;
    Ok((pos + neg)?.mean_all()?.neg()?)
}

/// Sum of squared differences over the last axis, averaged over the batch.
fn sum_sq(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.sqr()?.sum(D::Minus1)?.mean_all()?)
}

/// `|| N(T + D) - N(P*) ||^2` with `offsets`, `templates`, `target: (B, 2M)`.
pub fn loss_offset(offsets: &Tensor, templates: &Tensor, target: &Tensor) -> Result<Tensor> {
    let b = offsets.dims()[0];
    let pts = (templates + offsets)?.reshape((b, NUM_KEYPOINTS, 2))?;
    let refined = normalize_points(&pts)?.reshape((b, 2 * NUM_KEYPOINTS))?;
    let gt = normalize_points(&target.reshape((b, NUM_KEYPOINTS, 2))?)?.reshape((b, 2 * NUM_KEYPOINTS))?;
    sum_sq(&refined, &gt)
}

/// Offset loss on already-normalized poses, both `(B, 2M)`.
pub fn loss_offset_normalized(refined: &Tensor, target: &Tensor) -> Result<Tensor> {
    sum_sq(refined, target)
}

/// `|| s - s* ||^2`, `(B, 2)`.
pub fn loss_scale(scale: &Tensor, target: &Tensor) -> Result<Tensor> {
    sum_sq(scale, target)
}

/// `|| u' - v ||^2`, `(B, d)`; `v` is treated as a constant.
pub fn loss_dis(u_prime: &Tensor, v: &Tensor) -> Result<Tensor> {
    sum_sq(u_prime, &v.detach())
}

/// Adversarial terms for a batch.
pub struct AdversarialTerms {
    /// `log D(Q_gt) + mean_other log(1 - D(Q_other))`, batch mean. The discriminator maximizes it.
    pub value: Tensor,
    /// Non-saturating generator objective `-mean_other log D(Q_other)`, 0 without other positives.
    pub generator: Tensor,
}

/// `d_gt: (B)`, `d_all: (B, K)` and `others: (B, K)` marking positives other than the
/// ground-truth template.
pub fn loss_adv(d_gt: &Tensor, d_all: &Tensor, others: &Tensor) -> Result<AdversarialTerms> {
    let count = others.sum(D::Minus1)?;
    let denom = count.maximum(1.0)?;
    let log_fake = (1.0 - clip(d_all)?)?.log()?.mul(others)?.sum(D::Minus1)?.div(&denom)?;
    let value = (clip(d_gt)?.log()? + log_fake)?.mean_all()?;
    let gen = clip(d_all)?.log()?.mul(others)?.sum(D::Minus1)?.div(&denom)?;
    let generator = gen.mean_all()?.neg()?;
    Ok(AdversarialTerms { value, generator })
}

/// `cls + l_o offset + l_s scale + l_adv adv + l_dis dis`.
pub fn total_loss(parts: &LossParts<Tensor>, w: &LossWeights) -> Result<Tensor> {
    let t = (&parts.cls + (&parts.offset * w.offset)?)?;
    let t = (t + (&parts.scale * w.scale)?)?;
    let t = (t + (&parts.adv * w.adv)?)?;
    Ok((t + (&parts.dis * w.dis)?)?)
}

/// Host-side weighted sum, for logging.
pub fn total_value(parts: &LossParts<f64>, w: &LossWeights) -> f64 {
    parts.cls + w.offset * parts.offset + w.scale * parts.scale + w.adv * parts.adv + w.dis * parts.dis
}
