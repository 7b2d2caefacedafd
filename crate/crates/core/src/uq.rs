//! Sampling-based uncertainty: seed ensembles, Monte-Carlo dropout, and the
//! direct SD-head estimator.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::network::{forward, predict, ForwardMode, HeadMode, NetworkParameters};
use crate::optimize::{train, TrainConfig, TrainOutcome};
use crate::stats::mean_and_sample_variance;

pub const DEFAULT_SEED_RUNS: usize = 15;
pub const DEFAULT_MC_DRAWS: usize = 50;
pub const DEFAULT_BASE_SEED: u64 = 41;

/// Number of members or draws, and where their seeds come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n: usize,
    pub base_seed: u64,
    /// Explicit seeds; overrides `base_seed..base_seed + n` when set.
    pub seeds: Option<Vec<u64>>,
}

impl EnsembleConfig {
    pub fn seeds(n: usize) -> Self {
        Self {
            n,
            base_seed: DEFAULT_BASE_SEED,
            seeds: None,
        }
    }

    pub fn mc_draws(n: usize) -> Self {
        Self::seeds(n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Estimator(format!(
                "at least 2 runs or draws are required for a variance, got {}",
                self.n
            )));
        }
        if let Some(list) = &self.seeds {
            if list.len() != self.n {
                return Err(Error::Estimator(format!(
                    "seed list has {} entries but n = {}",
                    list.len(),
                    self.n
                )));
            }
        }
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        match &self.seeds {
            Some(list) => list.clone(),
            None => (0..self.n as u64).map(|i| self.base_seed + i).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyEstimate {
    pub mean: f64,
    pub variance: f64,
    pub sd: f64,
}

/// Mean and `n - 1` sample variance of repeated predictions. The result does
/// not depend on the order of `samples`.
pub fn sample_statistics(samples: &[f64]) -> Result<UncertaintyEstimate> {
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prediction sample".into()));
    }
    let (mean, variance) = mean_and_sample_variance(samples)
        .ok_or_else(|| Error::Estimator(format!("need at least 2 samples, got {}", samples.len())))?;
    Ok(UncertaintyEstimate {
        mean,
        variance,
        sd: variance.sqrt(),
    })
}

/// Per-stimulus prediction lists in stimulus-id order.
pub type PredictionSamples = BTreeMap<String, Vec<f64>>;

pub fn estimate_all(samples: &PredictionSamples) -> Result<BTreeMap<String, UncertaintyEstimate>> {
    samples
        .iter()
        .map(|(id, s)| sample_statistics(s).map(|e| (id.clone(), e)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SeedEnsemble {
    pub seeds: Vec<u64>,
    pub members: Vec<TrainOutcome>,
    pub samples: PredictionSamples,
    pub estimates: BTreeMap<String, UncertaintyEstimate>,
}

/// Trains one model per seed and summarizes their eval-mode predictions
/// on `split`.
///
/// Members differ only in seed. Only the mean-only objective is accepted
/// unless `allow_variance_heads` is set.
pub fn seeds_pipeline(
    dataset: &Dataset,
    train_config: &TrainConfig,
    ensemble: &EnsembleConfig,
    split: Split,
    allow_variance_heads: bool,
) -> Result<SeedEnsemble> {
    ensemble.validate()?;
    if train_config.loss_kind != LossKind::MseMeanOnly && !allow_variance_heads {
        return Err(Error::Estimator(format!(
            "seed ensembles train the mean-only objective, got {}",
            train_config.loss_kind
        )));
    }
    let seeds = ensemble.seed_list();
    let mut distinct = seeds.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < seeds.len() {
        log::warn!("seed list {seeds:?} contains duplicates; duplicated members are identical");
    }
    let members = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig {
                seed,
                ..train_config.clone()
            };
            train(dataset, &cfg).map_err(|e| Error::MemberFailed {
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ids = dataset.ids(split);
    let mut samples = PredictionSamples::new();
    for id in ids {
        let x = dataset.features(id).expect("split ids have features");
        let preds = members
            .iter()
            .map(|m| predict(&m.params, x).map(|p| p.mu_hat))
            .collect::<Result<Vec<_>>>()?;
        samples.insert(id.to_string(), preds);
    }
    let estimates = estimate_all(&samples)?;
    Ok(SeedEnsemble {
        seeds,
        members,
        samples,
        estimates,
    })
}

#[derive(Debug, Clone)]
pub struct McDropoutEstimates {
    pub samples: PredictionSamples,
    pub estimates: BTreeMap<String, UncertaintyEstimate>,
}

/// Random stream of draw `draw` for the stimulus at position `index`.
fn mc_stream(seed: u64, index: usize, draw: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((index as u64) << 32) | draw as u64);
    rng
}

/// `n` dropout-on forward passes per stimulus of `split`, each with its own
/// random stream, reduced with [`sample_statistics`].
pub fn mc_dropout_pipeline(
    params: &NetworkParameters,
    dataset: &Dataset,
    split: Split,
    draws: &EnsembleConfig,
) -> Result<McDropoutEstimates> {
    draws.validate()?;
    if params.architecture().dropout_rate <= 0.0 {
        return Err(Error::Estimator(
            "MC dropout needs a network with dropout_rate > 0".into(),
        ));
    }
    let seed = draws.base_seed;
    let ids = dataset.ids(split);
    let samples = ids
        .par_iter()
        .enumerate()
        .map(|(index, id)| {
            let x = dataset.features(id).expect("split ids have features");
            let preds = (0..draws.n)
                .map(|draw| {
                    let mut rng = mc_stream(seed, index, draw);
                    forward(params, x, ForwardMode::McDropout, &mut rng).map(|(p, _)| p.mu_hat)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((id.to_string(), preds))
        })
        .collect::<Result<PredictionSamples>>()?;
    let estimates = estimate_all(&samples)?;
    Ok(McDropoutEstimates { samples, estimates })
}

/// Direct estimate from a mean-variance network: one eval pass, `sigma_hat`
/// is the uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectEstimate {
    pub mu_hat: f64,
    pub sigma_hat: f64,
}

pub fn direct_estimator(
    params: &NetworkParameters,
    dataset: &Dataset,
    split: Split,
) -> Result<BTreeMap<String, DirectEstimate>> {
    if params.head_mode() != HeadMode::MeanVariance {
        return Err(Error::Estimator(
            "direct SD estimates need a mean-variance network".into(),
        ));
    }
    dataset
        .ids(split)
        .into_iter()
        .map(|id| {
            let p = predict(params, dataset.features(id).expect("split ids have features"))?;
            Ok((
                id.to_string(),
                DirectEstimate {
                    mu_hat: p.mu_hat,
                    sigma_hat: p.sigma_hat.expect("mean-variance head"),
                },
            ))
        })
        .collect()
}

/// On-disk record of an ensemble: enough to re-aggregate without retraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub method: String,
    pub seeds: Vec<u64>,
    pub member_checkpoints: Vec<String>,
    pub samples: PredictionSamples,
}

impl EnsembleManifest {
    pub fn reaggregate(&self) -> Result<BTreeMap<String, UncertaintyEstimate>> {
        estimate_all(&self.samples)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;
    use proptest::prelude::*;

    #[test]
    fn statistics_examples() {
        let e = sample_statistics(&[0.4, 0.4, 0.4]).unwrap();
        assert!((e.mean - 0.4).abs() < 1e-15);
        assert_eq!(e.variance, 0.0);
        let e = sample_statistics(&[0.0, 1.0]).unwrap();
        assert_eq!((e.mean, e.variance), (0.5, 0.5));
        assert!(sample_statistics(&[1.0]).is_err());
        assert!(sample_statistics(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn ensemble_config_seeds() {
        assert_eq!(EnsembleConfig::seeds(3).seed_list(), vec![41, 42, 43]);
        assert!(EnsembleConfig::seeds(1).validate().is_err());
        let explicit = EnsembleConfig {
            n: 2,
            base_seed: 0,
            seeds: Some(vec![7, 7]),
        };
        assert_eq!(explicit.seed_list(), vec![7, 7]);
        let wrong = EnsembleConfig {
            seeds: Some(vec![1]),
            ..explicit
        };
        assert!(wrong.validate().is_err());
    }

    #[test]
    fn manifest_reaggregates() {
        let mut samples = PredictionSamples::new();
        samples.insert("a".into(), vec![0.0, 1.0]);
        let m = EnsembleManifest {
            method: "seeds".into(),
            seeds: vec![41, 42],
            member_checkpoints: vec!["m41.json".into(), "m42.json".into()],
            samples,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ensemble.json");
        m.save(&path).unwrap();
        let back = EnsembleManifest::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.reaggregate().unwrap()["a"].variance, 0.5);
    }

    #[test]
    fn direct_rejects_mean_only() {
        let params = NetworkParameters::zeros(Architecture::new(3, HeadMode::MeanOnly)).unwrap();
        let ds = Dataset::new(BTreeMap::new(), BTreeMap::new(), BTreeMap::new()).unwrap();
        assert!(direct_estimator(&params, &ds, Split::Test).is_err());
    }

    proptest! {
        #[test]
        fn statistics_match_two_pass(values in proptest::collection::vec(-1.0f64..1.0, 2..200), c in -0.5f64..0.5) {
            let e = sample_statistics(&values).unwrap();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            prop_assert!((e.mean - mean).abs() < 1e-12);
            prop_assert!((e.variance - var).abs() < 1e-12);
            prop_assert!(e.variance >= 0.0);
            let shifted: Vec<f64> = values.iter().map(|v| v + c).collect();
            let s = sample_statistics(&shifted).unwrap();
            prop_assert!((s.mean - e.mean - c).abs() < 1e-12);
            prop_assert!((s.variance - e.variance).abs() < 1e-12);
            let mut rev = values.clone();
            rev.reverse();
            prop_assert_eq!(sample_statistics(&rev).unwrap(), e);
        }

        #[test]
        fn variance_zero_iff_constant(v in -1.0f64..1.0, n in 2usize..20) {
            prop_assert_eq!(sample_statistics(&vec![v; n]).unwrap().variance, 0.0);
            let mut values = vec![v; n];
            values[0] += 0.1;
            prop_assert!(sample_statistics(&values).unwrap().variance > 0.0);
        }
    }
}
