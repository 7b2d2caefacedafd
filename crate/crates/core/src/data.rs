//! Rating ingestion, normalization, per-stimulus aggregation, and splits.
//!
//! Three CSV files describe a dataset:
//!
//! * features: `stimulus_id,f0,...,f{D-1}`
//! * annotations: `stimulus_id,rater_id,valence,arousal` (raw Likert values)
//! * splits: `stimulus_id,split` with `split` one of `train`, `val`, `test`
//!
//! Per-rater annotations are reduced to one [`EmotionTarget`] per stimulus
//! (mean and sample SD of the normalized ratings) and then discarded.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::mean_and_sample_variance;

/// Annotators per stimulus below which ingestion logs a warning.
pub const RECOMMENDED_MIN_RATERS: usize = 10;

/// Symmetric Likert scale with a neutral midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingScale {
    r_min: i32,
    r_max: i32,
}

impl RatingScale {
    /// Scale from `r_min` to `r_max`; the neutral point is the midpoint, so the
    /// number of options must be odd.
    pub fn new(r_min: i32, r_max: i32) -> Result<Self> {
        if r_max <= r_min {
            return Err(Error::InvalidScale(format!(
                "r_max ({r_max}) must exceed r_min ({r_min})"
            )));
        }
        if (r_max - r_min) % 2 != 0 {
            return Err(Error::InvalidScale(format!(
                "[{r_min}, {r_max}] has no integer neutral point"
            )));
        }
        Ok(Self { r_min, r_max })
    }

    /// The 9-point scale from 1 to 9 with neutral point 5.
    pub fn likert9() -> Self {
        Self { r_min: 1, r_max: 9 }
    }

    pub fn r_min(&self) -> i32 {
        self.r_min
    }

    pub fn r_max(&self) -> i32 {
        self.r_max
    }

    pub fn r_neutral(&self) -> i32 {
        (self.r_min + self.r_max) / 2
    }

    /// Non-neutral options on each side of the neutral point.
    pub fn options_per_side(&self) -> i32 {
        self.r_max - self.r_neutral()
    }

    /// Smoothing margin: the normalized range is `[-1 + delta, 1 - delta]`.
    pub fn delta(&self) -> f64 {
        1.0 / f64::from(self.options_per_side() + 1)
    }

    /// Largest attainable normalized rating, `1 - delta`.
    pub fn normalized_max(&self) -> f64 {
        f64::from(self.options_per_side()) / f64::from(self.options_per_side() + 1)
    }

    pub fn contains(&self, raw: f64) -> bool {
        raw >= f64::from(self.r_min) && raw <= f64::from(self.r_max)
    }

    /// `(r - r_neutral) / (R + 1)`, without range checking.
    pub fn normalize(&self, raw: f64) -> f64 {
        (raw - f64::from(self.r_neutral())) / f64::from(self.options_per_side() + 1)
    }

    /// Inverse of [`RatingScale::normalize`].
    pub fn denormalize(&self, normalized: f64) -> f64 {
        normalized * f64::from(self.options_per_side() + 1) + f64::from(self.r_neutral())
    }
}

impl Default for RatingScale {
    fn default() -> Self {
        Self::likert9()
    }
}

/// Maps an integer rating into the normalized range.
pub fn normalize_rating(r: i32, scale: &RatingScale) -> Result<f64> {
    if r < scale.r_min || r > scale.r_max {
        return Err(Error::RatingValue {
            value: f64::from(r),
            min: scale.r_min,
            max: scale.r_max,
        });
    }
    Ok(scale.normalize(f64::from(r)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AffectDimension {
    Valence,
    Arousal,
}

impl AffectDimension {
    pub const ALL: [AffectDimension; 2] = [AffectDimension::Valence, AffectDimension::Arousal];

    pub fn name(self) -> &'static str {
        match self {
            AffectDimension::Valence => "valence",
            AffectDimension::Arousal => "arousal",
        }
    }
}

impl fmt::Display for AffectDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

/// One rater's raw valence and arousal scores for a stimulus.
#[derive(Debug, Clone, PartialEq)]
pub struct RaterScore {
    pub rater_id: String,
    pub valence: f64,
    pub arousal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub stimulus_id: String,
    pub ratings: Vec<RaterScore>,
}

/// Empirical mean and SD of one affect dimension for one stimulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub mu: f64,
    pub sigma: f64,
}

/// Per-stimulus ground truth in the normalized rating space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmotionTarget {
    pub mu_v: f64,
    pub mu_a: f64,
    pub sigma_v: f64,
    pub sigma_a: f64,
}

impl EmotionTarget {
    pub fn dimension(&self, dim: AffectDimension) -> Target {
        match dim {
            AffectDimension::Valence => Target {
                mu: self.mu_v,
                sigma: self.sigma_v,
            },
            AffectDimension::Arousal => Target {
                mu: self.mu_a,
                sigma: self.sigma_a,
            },
        }
    }
}

/// Mean and sample SD (divisor `n - 1`) of already-normalized ratings.
pub fn aggregate_normalized(stimulus_id: &str, values: &[f64]) -> Result<Target> {
    let (mu, var) = mean_and_sample_variance(values).ok_or_else(|| Error::TooFewRatings {
        stimulus: stimulus_id.to_string(),
        count: values.len(),
    })?;
    Ok(Target { mu, sigma: var.sqrt() })
}

/// Normalizes every rating and reduces them to a per-stimulus target.
pub fn aggregate(annotations: &AnnotationSet, scale: &RatingScale) -> Result<EmotionTarget> {
    let id = &annotations.stimulus_id;
    let n = annotations.ratings.len();
    if n < 2 {
        return Err(Error::TooFewRatings {
            stimulus: id.clone(),
            count: n,
        });
    }
    if n < RECOMMENDED_MIN_RATERS {
        log::warn!("stimulus `{id}` has only {n} raters (fewer than {RECOMMENDED_MIN_RATERS})");
    }
    let mut valence = Vec::with_capacity(n);
    let mut arousal = Vec::with_capacity(n);
    for score in &annotations.ratings {
        for raw in [score.valence, score.arousal] {
            if !raw.is_finite() || !scale.contains(raw) {
                return Err(Error::RatingOutOfRange {
                    stimulus: id.clone(),
                    rater: score.rater_id.clone(),
                    value: raw,
                    min: scale.r_min,
                    max: scale.r_max,
                });
            }
        }
        valence.push(scale.normalize(score.valence));
        arousal.push(scale.normalize(score.arousal));
    }
    let v = aggregate_normalized(id, &valence)?;
    let a = aggregate_normalized(id, &arousal)?;
    Ok(EmotionTarget {
        mu_v: v.mu,
        mu_a: a.mu,
        sigma_v: v.sigma,
        sigma_a: a.sigma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train, val or test)")),
        }
    }
}

/// Features, aggregated targets, and split assignment keyed by stimulus id.
///
/// Immutable once built; share it by reference across training runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_dim: usize,
    features: BTreeMap<String, Vec<f64>>,
    targets: BTreeMap<String, EmotionTarget>,
    split: BTreeMap<String, Split>,
}

impl Dataset {
    /// Validates that the three maps share one id set and that every feature
    /// vector is finite and of equal length.
    pub fn new(
        features: BTreeMap<String, Vec<f64>>,
        targets: BTreeMap<String, EmotionTarget>,
        split: BTreeMap<String, Split>,
    ) -> Result<Self> {
        let feature_dim = features.values().next().map_or(0, Vec::len);
        if feature_dim == 0 && !features.is_empty() {
            return Err(Error::Dataset("feature vectors are empty".into()));
        }
        for (id, values) in &features {
            if values.len() != feature_dim {
                return Err(Error::Dataset(format!(
                    "feature vector of `{id}` has length {} (expected {feature_dim})",
                    values.len()
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!("feature vector of `{id}` is not finite")));
            }
        }
        for id in targets.keys() {
            if !features.contains_key(id) {
                return Err(Error::Dataset(format!(
                    "annotated stimulus `{id}` has no feature vector"
                )));
            }
            if !split.contains_key(id) {
                return Err(Error::Dataset(format!(
                    "annotated stimulus `{id}` has no split assignment"
                )));
            }
        }
        for id in features.keys() {
            if !targets.contains_key(id) {
                return Err(Error::Dataset(format!("feature vector `{id}` has no annotations")));
            }
        }
        for id in split.keys() {
            if !targets.contains_key(id) {
                return Err(Error::Dataset(format!("split entry `{id}` has no annotations")));
            }
        }
        for (id, t) in &targets {
            let finite = [t.mu_v, t.mu_a, t.sigma_v, t.sigma_a].iter().all(|v| v.is_finite());
            if !finite || t.sigma_v < 0.0 || t.sigma_a < 0.0 {
                return Err(Error::Dataset(format!("target of `{id}` is invalid: {t:?}")));
            }
        }
        Ok(Self {
            feature_dim,
            features,
            targets,
            split,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Ids in the given split, sorted.
    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.split
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn all_ids(&self) -> impl Iterator<Item = &str> {
        self.targets.keys().map(String::as_str)
    }

    pub fn features(&self, id: &str) -> Option<&[f64]> {
        self.features.get(id).map(Vec::as_slice)
    }

    pub fn target(&self, id: &str) -> Option<&EmotionTarget> {
        self.targets.get(id)
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.split.get(id).copied()
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut counts: BTreeMap<Split, usize> = Split::ALL.iter().map(|s| (*s, 0)).collect();
        for s in self.split.values() {
            *counts.entry(*s).or_default() += 1;
        }
        counts
    }

    /// `(features, target)` pairs of one split in id order.
    pub fn examples(&self, split: Split, dim: AffectDimension) -> Vec<(&[f64], Target)> {
        self.ids(split)
            .into_iter()
            .map(|id| (self.features[id].as_slice(), self.targets[id].dimension(dim)))
            .collect()
    }

    pub fn feature_map(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.features
    }

    pub fn target_map(&self) -> &BTreeMap<String, EmotionTarget> {
        &self.targets
    }

    pub fn split_map(&self) -> &BTreeMap<String, Split> {
        &self.split
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::parse(path, e.to_string())
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn check_header(path: &Path, reader: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(|e| csv_err(path, e))?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::parse(
            path,
            format!(
                "line 1: expected header `{}`, found `{}`",
                expected.join(","),
                got.join(",")
            ),
        ));
    }
    Ok(())
}

fn parse_f64(path: &Path, line: u64, field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(path, format!("line {line}: cannot parse {what} `{field}` as a number")))
}

/// Reads a features CSV. Returns the map from stimulus id to vector.
pub fn read_features(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut reader = open_csv(path)?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 2 || &header[0] != "stimulus_id" {
        return Err(Error::parse(path, "line 1: header must start with `stimulus_id,f0`"));
    }
    for (i, name) in header.iter().skip(1).enumerate() {
        if name != format!("f{i}") {
            return Err(Error::parse(
                path,
                format!("line 1: column {} is `{name}`, expected `f{i}`", i + 1),
            ));
        }
    }
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record_line(&record);
        let id = record[0].to_string();
        let values = record
            .iter()
            .skip(1)
            .map(|f| parse_f64(path, line, f, "feature"))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::parse(
                path,
                format!("line {line}: non-finite feature {v} for `{id}`"),
            ));
        }
        if out.insert(id.clone(), values).is_some() {
            return Err(Error::parse(path, format!("line {line}: duplicate stimulus id `{id}`")));
        }
    }
    Ok(out)
}

/// Reads an annotations CSV, grouping rows by stimulus id.
pub fn read_annotations(path: &Path) -> Result<BTreeMap<String, AnnotationSet>> {
    let mut reader = open_csv(path)?;
    check_header(path, &mut reader, &["stimulus_id", "rater_id", "valence", "arousal"])?;
    let mut out: BTreeMap<String, AnnotationSet> = BTreeMap::new();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record_line(&record);
        let id = record[0].to_string();
        let rater = record[1].to_string();
        if !seen.insert((id.clone(), rater.clone())) {
            return Err(Error::parse(
                path,
                format!("line {line}: duplicate rating by rater `{rater}` for `{id}`"),
            ));
        }
        let score = RaterScore {
            valence: parse_f64(path, line, &record[2], "valence")?,
            arousal: parse_f64(path, line, &record[3], "arousal")?,
            rater_id: rater,
        };
        out.entry(id.clone())
            .or_insert_with(|| AnnotationSet {
                stimulus_id: id,
                ratings: Vec::new(),
            })
            .ratings
            .push(score);
    }
    Ok(out)
}

pub fn read_splits(path: &Path) -> Result<BTreeMap<String, Split>> {
    let mut reader = open_csv(path)?;
    check_header(path, &mut reader, &["stimulus_id", "split"])?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record_line(&record);
        let id = record[0].to_string();
        let split: Split = record[1]
            .parse()
            .map_err(|e: String| Error::parse(path, format!("line {line}: {e}")))?;
        if out.insert(id.clone(), split).is_some() {
            return Err(Error::parse(path, format!("line {line}: duplicate stimulus id `{id}`")));
        }
    }
    Ok(out)
}

/// Loads, aggregates and cross-validates the three dataset files.
pub fn load_dataset(
    features_path: &Path,
    annotations_path: &Path,
    splits_path: &Path,
    scale: &RatingScale,
) -> Result<Dataset> {
    let features = read_features(features_path)?;
    let annotations = read_annotations(annotations_path)?;
    let split = read_splits(splits_path)?;
    let targets = annotations
        .iter()
        .map(|(id, set)| aggregate(set, scale).map(|t| (id.clone(), t)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let dataset = Dataset::new(features, targets, split)?;
    let counts = dataset.split_counts();
    log::info!(
        "loaded {} stimuli (train {}, val {}, test {})",
        dataset.len(),
        counts[&Split::Train],
        counts[&Split::Val],
        counts[&Split::Test]
    );
    Ok(dataset)
}

fn create_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(file))
}

fn write_row<I, S>(path: &Path, w: &mut csv::Writer<std::fs::File>, row: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| Error::parse(path, e.to_string()))
}

fn finish(path: &Path, mut w: csv::Writer<std::fs::File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Formats a rating as an integer when it is one, so quantized scores stay
/// plain Likert values on disk.
fn format_rating(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

pub fn write_features(path: &Path, features: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    let dim = features.values().next().map_or(0, Vec::len);
    let mut w = create_writer(path)?;
    let header: Vec<String> = std::iter::once("stimulus_id".to_string())
        .chain((0..dim).map(|i| format!("f{i}")))
        .collect();
    write_row(path, &mut w, &header)?;
    for (id, values) in features {
        let row: Vec<String> = std::iter::once(id.clone())
            .chain(values.iter().map(|v| format!("{v}")))
            .collect();
        write_row(path, &mut w, &row)?;
    }
    finish(path, w)
}

pub fn write_annotations<'a>(path: &Path, annotations: impl IntoIterator<Item = &'a AnnotationSet>) -> Result<()> {
    let mut w = create_writer(path)?;
    write_row(path, &mut w, ["stimulus_id", "rater_id", "valence", "arousal"])?;
    for set in annotations {
        for r in &set.ratings {
            write_row(
                path,
                &mut w,
                [
                    set.stimulus_id.clone(),
                    r.rater_id.clone(),
                    format_rating(r.valence),
                    format_rating(r.arousal),
                ],
            )?;
        }
    }
    finish(path, w)
}

pub fn write_splits(path: &Path, split: &BTreeMap<String, Split>) -> Result<()> {
    let mut w = create_writer(path)?;
    write_row(path, &mut w, ["stimulus_id", "split"])?;
    for (id, s) in split {
        write_row(path, &mut w, [id.as_str(), s.name()])?;
    }
    finish(path, w)
}

/// Train/validation/test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Split(format!("ratios must be positive, got {parts:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!("ratios must sum to 1, got {parts:?}")));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` items over train/val/test.
///
/// Each part first receives `floor(n * ratio)`; leftover items go to the
/// parts with the largest fractional remainders. Equal remainders favour the
/// later part (test before val before train).
pub fn largest_remainder(n: usize, ratios: &SplitRatios) -> [usize; 3] {
    let quotas = [ratios.train, ratios.val, ratios.test].map(|r| n as f64 * r);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(b.cmp(&a))
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Splits `(id, label)` pairs so that each label group is apportioned by
/// [`largest_remainder`] after a seeded shuffle. Labels are opaque strings.
pub fn stratified_split(
    ids_with_labels: &[(String, String)],
    ratios: &SplitRatios,
    seed: u64,
) -> Result<BTreeMap<String, Split>> {
    if ids_with_labels.is_empty() {
        return Err(Error::Split("no ids to split".into()));
    }
    ratios.validate()?;
    let mut strata: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (id, label) in ids_with_labels {
        strata.entry(label.as_str()).or_default().push(id.as_str());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for members in strata.values_mut() {
        members.sort_unstable();
        members.shuffle(&mut rng);
        let [n_train, n_val, _] = largest_remainder(members.len(), ratios);
        for (i, id) in members.iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            if out.insert(id.to_string(), split).is_some() {
                return Err(Error::Split(format!("duplicate id `{id}`")));
            }
        }
    }
    Ok(out)
}
