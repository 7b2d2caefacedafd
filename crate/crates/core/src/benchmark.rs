//! End-to-end comparison of the five uncertainty methods.
//!
//! | method       | training objective | training runs | inference runs |
//! |--------------|--------------------|---------------|----------------|
//! | `seeds`      | mean only          | many          | many           |
//! | `mc_dropout` | mean only          | one           | many           |
//! | `nll`        | mean (+ SD head)   | one           | one            |
//! | `mse`        | mean and SD        | one           | one            |
//! | `kld`        | mean and SD        | one           | one            |
//!
//! Every single-model method is still repeated over `runs` seeds so the
//! report can show the across-seed spread of each metric.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AffectDimension, Dataset, Split};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::metrics::{MethodRow, MetricReport, MetricSummary, MetricValues, TargetKind};
use crate::network::{predict, Checkpoint, HeadMode};
use crate::optimize::{train, TrainConfig, TrainOutcome, TrainReport};
use crate::uq::{
    direct_estimator, estimate_all, mc_dropout_pipeline, EnsembleConfig, PredictionSamples, DEFAULT_BASE_SEED,
    DEFAULT_MC_DRAWS, DEFAULT_SEED_RUNS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Method {
    Seeds,
    McDropout,
    Nll,
    Mse,
    Kld,
}

/// Training target and run multiplicity of a method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub loss: LossKind,
    pub multiple_training_runs: bool,
    pub multiple_inference_runs: bool,
    pub needs_empirical_sd: bool,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Seeds, Method::McDropout, Method::Nll, Method::Mse, Method::Kld];

    pub fn name(self) -> &'static str {
        match self {
            Method::Seeds => "seeds",
            Method::McDropout => "mc_dropout",
            Method::Nll => "nll",
            Method::Mse => "mse",
            Method::Kld => "kld",
        }
    }

    pub fn protocol(self) -> Protocol {
        let (loss, train_many, infer_many) = match self {
            Method::Seeds => (LossKind::MseMeanOnly, true, true),
            Method::McDropout => (LossKind::MseMeanOnly, false, true),
            Method::Nll => (LossKind::Nll, false, false),
            Method::Mse => (LossKind::Mse, false, false),
            Method::Kld => (LossKind::Kld, false, false),
        };
        Protocol {
            loss,
            multiple_training_runs: train_many,
            multiple_inference_runs: infer_many,
            needs_empirical_sd: matches!(self, Method::Mse | Method::Kld),
        }
    }

    /// Rejects checkpoints whose head cannot serve this method.
    pub fn check_head(self, head: HeadMode) -> Result<()> {
        let want = self.protocol().loss.head_mode();
        if head != want {
            return Err(Error::Config(format!(
                "method {} needs a {want:?} network, got {head:?}",
                self.name()
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Recipe shared by every training run; loss, dimension and seed are
    /// set per run.
    pub train: TrainConfig,
    /// Seed-ensemble size, and repetitions of every other method.
    pub runs: usize,
    pub mc_draws: usize,
    pub base_seed: u64,
    pub split: Split,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            runs: DEFAULT_SEED_RUNS,
            mc_draws: DEFAULT_MC_DRAWS,
            base_seed: DEFAULT_BASE_SEED,
            split: Split::Test,
        }
    }
}

impl BenchmarkConfig {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.runs as u64).map(|i| self.base_seed + i).collect()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self, methods: &[Method]) -> Result<()> {
        self.train.validate()?;
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if methods.contains(&Method::Seeds) && self.runs < 2 {
            return Err(Error::Config(format!(
                "seeds needs at least 2 training runs for a variance, got {}",
                self.runs
            )));
        }
        if methods.contains(&Method::McDropout) {
            if self.mc_draws < 2 {
                return Err(Error::Config(format!(
                    "mc_dropout needs at least 2 draws, got {}",
                    self.mc_draws
                )));
            }
            if self.train.dropout_rate <= 0.0 {
                return Err(Error::Config("mc_dropout needs dropout_rate > 0".into()));
            }
        }
        Ok(())
    }
}

/// Predictions of one run (or of one ensemble) on the evaluation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPredictions {
    pub seed: u64,
    pub mean: BTreeMap<String, f64>,
    pub sd: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct MethodResult {
    pub method: Method,
    pub dimension: AffectDimension,
    /// Runs whose mean predictions are scored (ensemble members for seeds).
    pub mean_runs: Vec<RunPredictions>,
    /// Runs whose SD predictions are scored (one ensemble for seeds).
    pub sd_runs: Vec<RunPredictions>,
    /// Run used for scatter output: the ensemble for seeds, the first seed
    /// otherwise.
    pub representative: RunPredictions,
    pub checkpoints: Vec<Checkpoint>,
    pub train_reports: Vec<TrainReport>,
    /// Raw repeated predictions behind the representative SD estimate.
    pub samples: Option<PredictionSamples>,
}

impl MethodResult {
    /// Metrics against the dataset's empirical targets.
    pub fn summarize(&self, dataset: &Dataset, split: Split, which: TargetKind) -> Result<MetricSummary> {
        let runs = self.runs_for(which);
        let values = runs
            .iter()
            .map(|r| crate::metrics::evaluate(dataset, split, self.dimension, which, r.get(which)))
            .collect::<Result<Vec<_>>>()?;
        Ok(MetricSummary::from_runs(&values))
    }

    /// Metrics against known true `(mu, sigma)` per stimulus.
    pub fn summarize_against(&self, truth: &BTreeMap<String, (f64, f64)>, which: TargetKind) -> Result<MetricSummary> {
        let runs = self.runs_for(which);
        let values = runs
            .iter()
            .map(|r| {
                let preds = r.get(which);
                let mut t = Vec::with_capacity(preds.len());
                let mut p = Vec::with_capacity(preds.len());
                for (id, v) in preds {
                    let (mu, sigma) = truth
                        .get(id)
                        .ok_or_else(|| Error::Dataset(format!("no oracle entry for `{id}`")))?;
                    t.push(if which == TargetKind::Mean { *mu } else { *sigma });
                    p.push(*v);
                }
                MetricValues::compute(&t, &p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MetricSummary::from_runs(&values))
    }

    fn runs_for(&self, which: TargetKind) -> &[RunPredictions] {
        match which {
            TargetKind::Mean => &self.mean_runs,
            TargetKind::Sd => &self.sd_runs,
        }
    }
}

impl RunPredictions {
    pub fn get(&self, which: TargetKind) -> &BTreeMap<String, f64> {
        match which {
            TargetKind::Mean => &self.mean,
            TargetKind::Sd => &self.sd,
        }
    }
}

/// Trained models keyed by `(loss, dimension)`, one per seed, so the seed
/// ensemble and MC dropout share their mean-only trainings.
#[derive(Default)]
struct ModelCache {
    models: BTreeMap<(LossKind, AffectDimension), std::sync::Arc<Vec<TrainOutcome>>>,
}

impl ModelCache {
    fn get(
        &mut self,
        dataset: &Dataset,
        cfg: &BenchmarkConfig,
        loss: LossKind,
        dim: AffectDimension,
    ) -> Result<std::sync::Arc<Vec<TrainOutcome>>> {
        if let Some(m) = self.models.get(&(loss, dim)) {
            return Ok(m.clone());
        }
        let outcomes = cfg
            .seeds()
            .par_iter()
            .map(|&seed| {
                let train_cfg = TrainConfig {
                    seed,
                    loss_kind: loss,
                    affect_dimension: dim,
                    ..cfg.train.clone()
                };
                log::info!("training {loss} / {dim} / seed {seed}");
                train(dataset, &train_cfg).map_err(|e| Error::MemberFailed {
                    seed,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let outcomes = std::sync::Arc::new(outcomes);
        self.models.insert((loss, dim), outcomes.clone());
        Ok(outcomes)
    }
}

fn eval_means(outcome: &TrainOutcome, dataset: &Dataset, split: Split) -> Result<BTreeMap<String, f64>> {
    dataset
        .ids(split)
        .into_iter()
        .map(|id| predict(&outcome.params, dataset.features(id).expect("features")).map(|p| (id.to_string(), p.mu_hat)))
        .collect()
}

fn checkpoints(outcomes: &[TrainOutcome]) -> Vec<Checkpoint> {
    outcomes
        .iter()
        .map(|o| Checkpoint {
            params: o.params.clone(),
            training_seed: o.report.seed,
        })
        .collect()
}

fn run_one(
    method: Method,
    dim: AffectDimension,
    dataset: &Dataset,
    cfg: &BenchmarkConfig,
    cache: &mut ModelCache,
) -> Result<MethodResult> {
    let loss = method.protocol().loss;
    let outcomes = cache.get(dataset, cfg, loss, dim)?;
    let split = cfg.split;
    let reports = outcomes.iter().map(|o| o.report.clone()).collect();
    let result = match method {
        Method::Seeds => {
            let member_means = outcomes
                .iter()
                .map(|o| eval_means(o, dataset, split))
                .collect::<Result<Vec<_>>>()?;
            let mut samples = PredictionSamples::new();
            for id in dataset.ids(split) {
                samples.insert(id.to_string(), member_means.iter().map(|m| m[id]).collect());
            }
            let estimates = estimate_all(&samples)?;
            let ensemble = RunPredictions {
                seed: cfg.base_seed,
                mean: estimates.iter().map(|(id, e)| (id.clone(), e.mean)).collect(),
                sd: estimates.iter().map(|(id, e)| (id.clone(), e.sd)).collect(),
            };
            let mean_runs = outcomes
                .iter()
                .zip(member_means)
                .map(|(o, mean)| RunPredictions {
                    seed: o.report.seed,
                    mean,
                    sd: BTreeMap::new(),
                })
                .collect();
            MethodResult {
                method,
                dimension: dim,
                mean_runs,
                sd_runs: vec![ensemble.clone()],
                representative: ensemble,
                checkpoints: checkpoints(&outcomes),
                train_reports: reports,
                samples: Some(samples),
            }
        }
        Method::McDropout => {
            let runs = outcomes
                .par_iter()
                .map(|o| {
                    let draws = EnsembleConfig {
                        n: cfg.mc_draws,
                        base_seed: o.report.seed,
                        seeds: None,
                    };
                    let mc = mc_dropout_pipeline(&o.params, dataset, split, &draws)?;
                    let run = RunPredictions {
                        seed: o.report.seed,
                        mean: mc.estimates.iter().map(|(id, e)| (id.clone(), e.mean)).collect(),
                        sd: mc.estimates.iter().map(|(id, e)| (id.clone(), e.sd)).collect(),
                    };
                    Ok((run, mc.samples))
                })
                .collect::<Result<Vec<_>>>()?;
            let (runs, mut samples): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
            MethodResult {
                method,
                dimension: dim,
                mean_runs: runs.clone(),
                sd_runs: runs.clone(),
                representative: runs[0].clone(),
                checkpoints: checkpoints(&outcomes[..1]),
                train_reports: reports,
                samples: Some(samples.swap_remove(0)),
            }
        }
        Method::Nll | Method::Mse | Method::Kld => {
            let runs = outcomes
                .iter()
                .map(|o| {
                    method.check_head(o.params.head_mode())?;
                    let direct = direct_estimator(&o.params, dataset, split)?;
                    Ok(RunPredictions {
                        seed: o.report.seed,
                        mean: direct.iter().map(|(id, d)| (id.clone(), d.mu_hat)).collect(),
                        sd: direct.iter().map(|(id, d)| (id.clone(), d.sigma_hat)).collect(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            MethodResult {
                method,
                dimension: dim,
                mean_runs: runs.clone(),
                sd_runs: runs.clone(),
                representative: runs[0].clone(),
                checkpoints: checkpoints(&outcomes),
                train_reports: reports,
                samples: None,
            }
        }
    };
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub config: BenchmarkConfig,
    pub results: Vec<MethodResult>,
}

/// Runs every requested method on every requested dimension.
pub fn run_benchmark(
    dataset: &Dataset,
    methods: &[Method],
    dimensions: &[AffectDimension],
    config: &BenchmarkConfig,
) -> Result<Benchmark> {
    config.validate(methods)?;
    if dataset.ids(config.split).is_empty() {
        return Err(Error::Dataset(format!("{} split is empty", config.split)));
    }
    let mut cache = ModelCache::default();
    let mut results = Vec::new();
    for &dim in dimensions {
        for &method in methods {
            results.push(run_one(method, dim, dataset, config, &mut cache)?);
        }
    }
    Ok(Benchmark {
        config: config.clone(),
        results,
    })
}

impl Benchmark {
    pub fn result(&self, method: Method, dim: AffectDimension) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == method && r.dimension == dim)
    }

    fn methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self.results.iter().map(|r| r.method).collect();
        m.sort();
        m.dedup();
        m
    }

    /// Report against the dataset's empirical targets.
    pub fn report(&self, dataset: &Dataset) -> Result<MetricReport> {
        self.build_report(|r, which| r.summarize(dataset, self.config.split, which))
    }

    /// Report against known true `(mu, sigma)` per dimension.
    pub fn oracle_report(
        &self,
        truth: &BTreeMap<AffectDimension, BTreeMap<String, (f64, f64)>>,
    ) -> Result<MetricReport> {
        self.build_report(|r, which| {
            let t = truth
                .get(&r.dimension)
                .ok_or_else(|| Error::Dataset(format!("no oracle for {}", r.dimension)))?;
            r.summarize_against(t, which)
        })
    }

    fn build_report(&self, score: impl Fn(&MethodResult, TargetKind) -> Result<MetricSummary>) -> Result<MetricReport> {
        let mut rows = Vec::new();
        for method in self.methods() {
            let mut row = MethodRow::new(method.name());
            for r in self.results.iter().filter(|r| r.method == method) {
                for which in [TargetKind::Mean, TargetKind::Sd] {
                    row.set(r.dimension, which, score(r, which)?);
                }
            }
            rows.push(row);
        }
        let mut report = MetricReport::new(rows);
        report.split = self.config.split;
        Ok(report)
    }
}
