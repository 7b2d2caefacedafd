//! Synthetic datasets with known per-stimulus mean and SD.
//!
//! For each stimulus `x ~ N(0, I)`; per affect dimension
//!
//! ```text
//! mu(x)    = mean_scale * tanh(a . x + b)
//! sigma(x) = sd_min + (sd_max - sd_min) * logistic(c . x + d)
//! ```
//!
//! Raters draw `N(mu(x), sigma(x)^2)`, clipped to the normalized rating
//! range and (by default) rounded to the nearest Likert point. Targets are
//! then aggregated exactly as for real annotations, while the true `mu` and
//! `sigma` are kept in a separate oracle table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    aggregate, stratified_split, write_annotations, write_features, write_splits, AffectDimension, AnnotationSet,
    Dataset, RaterScore, RatingScale, SplitRatios,
};
use crate::error::{Error, Result};
use crate::network::logistic;

/// Stream reserved for drawing the default mean/SD maps.
const MAP_STREAM: u64 = u64::MAX;

/// Linear index maps of one affect dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionMap {
    pub mean_weights: Vec<f64>,
    pub mean_bias: f64,
    pub sd_weights: Vec<f64>,
    pub sd_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_stimuli: usize,
    pub feature_dim: usize,
    pub raters_per_stimulus: usize,
    pub seed: u64,
    /// Round rater draws to the Likert grid.
    pub quantize: bool,
    pub mean_scale: f64,
    pub sd_min: f64,
    pub sd_max: f64,
    /// Norm of the randomly drawn mean direction `a`.
    pub mean_gain: f64,
    /// Norm of the randomly drawn SD direction `c`.
    pub sd_gain: f64,
    pub split: SplitRatios,
    /// Explicit maps; drawn from `seed` when absent.
    pub valence: Option<DimensionMap>,
    pub arousal: Option<DimensionMap>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_stimuli: 2000,
            feature_dim: 16,
            raters_per_stimulus: 10,
            seed: 41,
            quantize: true,
            mean_scale: 0.7,
            sd_min: 0.05,
            sd_max: 0.5,
            mean_gain: 2.0,
            sd_gain: 2.5,
            split: SplitRatios::default(),
            valence: None,
            arousal: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self, scale: &RatingScale) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_stimuli == 0 || self.feature_dim == 0 {
            return bad("n_stimuli and feature_dim must be positive".into());
        }
        if self.raters_per_stimulus < 2 {
            return bad(format!(
                "need at least 2 raters per stimulus, got {}",
                self.raters_per_stimulus
            ));
        }
        if !(self.mean_scale > 0.0 && self.mean_scale < scale.normalized_max()) {
            return bad(format!(
                "mean_scale must lie in (0, {}), got {}",
                scale.normalized_max(),
                self.mean_scale
            ));
        }
        if !(0.05 <= self.sd_min && self.sd_min <= self.sd_max && self.sd_max <= 0.5) {
            return bad(format!(
                "SD range must satisfy 0.05 <= sd_min <= sd_max <= 0.5, got [{}, {}]",
                self.sd_min, self.sd_max
            ));
        }
        for map in [&self.valence, &self.arousal].into_iter().flatten() {
            if map.mean_weights.len() != self.feature_dim || map.sd_weights.len() != self.feature_dim {
                return bad(format!(
                    "map weights must have length feature_dim = {}",
                    self.feature_dim
                ));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Maps for both dimensions, drawing random directions when not given.
    pub fn maps(&self) -> BTreeMap<AffectDimension, DimensionMap> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(MAP_STREAM);
        let mut direction = |gain: f64| {
            let v: Vec<f64> = (0..self.feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x * gain / norm).collect::<Vec<f64>>()
        };
        let mut out = BTreeMap::new();
        for (dim, given) in [
            (AffectDimension::Valence, &self.valence),
            (AffectDimension::Arousal, &self.arousal),
        ] {
            let drawn = DimensionMap {
                mean_weights: direction(self.mean_gain),
                mean_bias: 0.0,
                sd_weights: direction(self.sd_gain),
                sd_bias: 0.0,
            };
            out.insert(dim, given.clone().unwrap_or(drawn));
        }
        out
    }
}

/// True distribution parameters of one stimulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub mu_v: f64,
    pub sigma_v: f64,
    pub mu_a: f64,
    pub sigma_a: f64,
}

impl OracleEntry {
    pub fn dimension(&self, dim: AffectDimension) -> (f64, f64) {
        match dim {
            AffectDimension::Valence => (self.mu_v, self.sigma_v),
            AffectDimension::Arousal => (self.mu_a, self.sigma_a),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub annotations: Vec<AnnotationSet>,
    pub oracle: BTreeMap<String, OracleEntry>,
    pub maps: BTreeMap<AffectDimension, DimensionMap>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn stimulus_id(index: usize) -> String {
    format!("syn{index:05}")
}

/// Draws a dataset. Each stimulus has its own random stream, so the result
/// depends only on the config.
pub fn generate(config: &SynthConfig, scale: &RatingScale) -> Result<SynthOutput> {
    config.validate(scale)?;
    let maps = config.maps();
    let vmap = &maps[&AffectDimension::Valence];
    let amap = &maps[&AffectDimension::Arousal];
    let clip = scale.normalized_max();
    let steps = f64::from(scale.options_per_side() + 1);
    let truth = |map: &DimensionMap, x: &[f64]| {
        let mu = config.mean_scale * (dot(&map.mean_weights, x) + map.mean_bias).tanh();
        let sigma = config.sd_min + (config.sd_max - config.sd_min) * logistic(dot(&map.sd_weights, x) + map.sd_bias);
        (mu, sigma)
    };
    let rate = |rng: &mut ChaCha8Rng, mu: f64, sigma: f64| {
        let v = Normal::new(mu, sigma)
            .expect("sigma > 0")
            .sample(rng)
            .clamp(-clip, clip);
        if config.quantize {
            (v * steps).round() + f64::from(scale.r_neutral())
        } else {
            scale.denormalize(v)
        }
    };
    let stimuli = (0..config.n_stimuli)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let x: Vec<f64> = (0..config.feature_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let (mu_v, sigma_v) = truth(vmap, &x);
            let (mu_a, sigma_a) = truth(amap, &x);
            let ratings = (0..config.raters_per_stimulus)
                .map(|r| RaterScore {
                    rater_id: format!("r{r:02}"),
                    valence: rate(&mut rng, mu_v, sigma_v),
                    arousal: rate(&mut rng, mu_a, sigma_a),
                })
                .collect();
            let id = stimulus_id(i);
            let set = AnnotationSet {
                stimulus_id: id.clone(),
                ratings,
            };
            let oracle = OracleEntry {
                mu_v,
                sigma_v,
                mu_a,
                sigma_a,
            };
            (id, x, set, oracle)
        })
        .collect::<Vec<_>>();
    let mut features = BTreeMap::new();
    let mut targets = BTreeMap::new();
    let mut oracle = BTreeMap::new();
    let mut annotations = Vec::with_capacity(stimuli.len());
    for (id, x, set, entry) in stimuli {
        targets.insert(id.clone(), aggregate(&set, scale)?);
        features.insert(id.clone(), x);
        oracle.insert(id, entry);
        annotations.push(set);
    }
    let labels: Vec<(String, String)> = features
        .keys()
        .map(|id| (id.clone(), "synthetic".to_string()))
        .collect();
    let split = stratified_split(&labels, &config.split, config.seed)?;
    let dataset = Dataset::new(features, targets, split)?;
    Ok(SynthOutput {
        dataset,
        annotations,
        oracle,
        maps,
    })
}

/// Paths of the files written by [`write_synth`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFiles {
    pub features: PathBuf,
    pub annotations: PathBuf,
    pub splits: PathBuf,
    pub oracle: BTreeMap<AffectDimension, PathBuf>,
}

impl SynthFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            features: dir.join("features.csv"),
            annotations: dir.join("annotations.csv"),
            splits: dir.join("splits.csv"),
            oracle: AffectDimension::ALL
                .iter()
                .map(|d| (*d, dir.join(format!("oracle_{}.csv", d.name()))))
                .collect(),
        }
    }
}

/// Oracle CSV of one dimension: `stimulus_id,true_mu,true_sigma`.
pub fn write_oracle(path: &Path, oracle: &BTreeMap<String, OracleEntry>, dim: AffectDimension) -> Result<()> {
    let mut text = String::from("stimulus_id,true_mu,true_sigma\n");
    for (id, entry) in oracle {
        let (mu, sigma) = entry.dimension(dim);
        let _ = writeln!(text, "{id},{mu},{sigma}");
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_oracle(path: &Path) -> Result<BTreeMap<String, (f64, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        let num = |i: usize| {
            record[i]
                .parse::<f64>()
                .map_err(|e| Error::parse(path, format!("{}: {e}", &record[i])))
        };
        out.insert(record[0].to_string(), (num(1)?, num(2)?));
    }
    Ok(out)
}

pub fn write_synth(output: &SynthOutput, dir: &Path) -> Result<SynthFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = SynthFiles::in_dir(dir);
    write_features(&files.features, output.dataset.feature_map())?;
    write_annotations(&files.annotations, &output.annotations)?;
    write_splits(&files.splits, output.dataset.split_map())?;
    for (dim, path) in &files.oracle {
        write_oracle(path, &output.oracle, *dim)?;
    }
    Ok(files)
}
