//! Per-sample training objectives and their gradients with respect to the
//! mean logit `m` (`mu_hat = tanh(m)`) and the SD logit `z`
//! (`log sigma_hat = neg_softplus(z)`).
//!
//! The formulas are the published ones, not the textbook Gaussian forms:
//!
//! * MSE: `(mu_hat - mu)^2 + (sigma_hat^2 - sigma^2)^2`
//! * KLD: `0.5 * ((mu_hat - mu) / sigma_hat)^2 - log sigma_hat + 0.5 * sigma_hat^2 / sigma^2`
//! * NLL: `0.5 * ((mu_hat - mu) / sigma_hat)^2 + 0.5 * log sigma_hat`
//!
//! KLD is therefore not zero at `(mu_hat, sigma_hat) = (mu, sigma)`, and NLL
//! carries a one-half coefficient on the log term.

use serde::{Deserialize, Serialize};

use crate::data::Target;
use crate::error::{Error, Result};
use crate::network::{logistic, GaussianPrediction, HeadMode};

/// Floor applied to the empirical SD inside the KLD loss.
pub const SIGMA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum LossKind {
    /// `(mu_hat - mu)^2` on a single-output network.
    MseMeanOnly,
    Mse,
    Kld,
    Nll,
}

impl LossKind {
    pub fn head_mode(self) -> HeadMode {
        match self {
            LossKind::MseMeanOnly => HeadMode::MeanOnly,
            _ => HeadMode::MeanVariance,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::MseMeanOnly => "mse_mean_only",
            LossKind::Mse => "mse",
            LossKind::Kld => "kld",
            LossKind::Nll => "nll",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

/// Loss value and gradients with respect to the two logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSample {
    pub value: f64,
    pub d_mean_logit: f64,
    pub d_sd_logit: f64,
}

#[inline]
fn tanh_grad(mu_hat: f64) -> f64 {
    1.0 - mu_hat * mu_hat
}

fn sd_parts(pred: &GaussianPrediction) -> Result<(f64, f64, f64)> {
    let z = pred
        .sd_logit
        .ok_or_else(|| Error::Network("loss needs an SD head but the prediction has none".into()))?;
    let log_sigma = crate::network::neg_softplus(z);
    // d(log sigma_hat)/dz = -logistic(z)
    Ok((log_sigma, log_sigma.exp(), logistic(z)))
}

pub fn mse_mean_only_loss(pred: &GaussianPrediction, target: Target) -> LossSample {
    let d = pred.mu_hat - target.mu;
    LossSample {
        value: d * d,
        d_mean_logit: 2.0 * d * tanh_grad(pred.mu_hat),
        d_sd_logit: 0.0,
    }
}

pub fn mse_loss(pred: &GaussianPrediction, target: Target) -> Result<LossSample> {
    let (_, sigma_hat, s) = sd_parts(pred)?;
    let d = pred.mu_hat - target.mu;
    let var_gap = sigma_hat * sigma_hat - target.sigma * target.sigma;
    // d(sigma_hat^2)/dz = -2 sigma_hat^2 logistic(z)
    Ok(LossSample {
        value: d * d + var_gap * var_gap,
        d_mean_logit: 2.0 * d * tanh_grad(pred.mu_hat),
        d_sd_logit: -4.0 * var_gap * sigma_hat * sigma_hat * s,
    })
}

pub fn kld_loss(pred: &GaussianPrediction, target: Target) -> Result<LossSample> {
    let (log_sigma, sigma_hat, s) = sd_parts(pred)?;
    let sigma = target.sigma.max(SIGMA_FLOOR);
    let d = pred.mu_hat - target.mu;
    let inv_var_hat = (-2.0 * log_sigma).exp();
    let ratio = sigma_hat * sigma_hat / (sigma * sigma);
    let quad = d * d * inv_var_hat;
    Ok(LossSample {
        value: 0.5 * quad - log_sigma + 0.5 * ratio,
        d_mean_logit: d * inv_var_hat * tanh_grad(pred.mu_hat),
        d_sd_logit: s * (quad + 1.0 - ratio),
    })
}

pub fn nll_loss(pred: &GaussianPrediction, mu: f64) -> Result<LossSample> {
    let (log_sigma, _, s) = sd_parts(pred)?;
    let d = pred.mu_hat - mu;
    let inv_var_hat = (-2.0 * log_sigma).exp();
    let quad = d * d * inv_var_hat;
    Ok(LossSample {
        value: 0.5 * quad + 0.5 * log_sigma,
        d_mean_logit: d * inv_var_hat * tanh_grad(pred.mu_hat),
        d_sd_logit: s * (quad - 0.5),
    })
}

pub fn sample_loss(kind: LossKind, pred: &GaussianPrediction, target: Target) -> Result<LossSample> {
    match kind {
        LossKind::MseMeanOnly => Ok(mse_mean_only_loss(pred, target)),
        LossKind::Mse => mse_loss(pred, target),
        LossKind::Kld => kld_loss(pred, target),
        LossKind::Nll => nll_loss(pred, target.mu),
    }
}

/// Mean loss over a batch with each sample's logit gradients divided by the
/// batch size, so they sum to the gradient of the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub value: f64,
    pub gradients: Vec<LossSample>,
}

pub fn batch_loss(kind: LossKind, batch: &[(GaussianPrediction, Target)]) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = batch.len() as f64;
    let samples = batch
        .iter()
        .map(|(p, t)| sample_loss(kind, p, *t))
        .collect::<Result<Vec<_>>>()?;
    let value = samples.iter().map(|s| s.value).sum::<f64>() / n;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("{kind} batch loss")));
    }
    let gradients = samples
        .into_iter()
        .map(|s| LossSample {
            value: s.value,
            d_mean_logit: s.d_mean_logit / n,
            d_sd_logit: s.d_sd_logit / n,
        })
        .collect();
    Ok(BatchLoss { value, gradients })
}
