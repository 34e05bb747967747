//! Manifests, stratified splits and the seeded training loop.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::backbone::FreezeMode;
use crate::error::{Error, Result};
use crate::imaging::{load_thumbnail, RasterImage};
use crate::metrics::{MetricsReport, ScoredSample};
use crate::model::{bce_loss, BatchOptions, FixationModel, ModelConfig, SlideInput};
use crate::nn::layers::Mode;
use crate::nn::optim::AdamW;
use crate::nn::params::round_to_f32;
use crate::weights::WeightStore;

/// Fixation type. FFPE is the positive class (label value 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Ffpe,
    Fs,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ffpe => "FFPE",
            Self::Fs => "FS",
        }
    }

    pub fn value(self) -> u8 {
        match self {
            Self::Ffpe => 1,
            Self::Fs => 0,
        }
    }

    pub fn from_value(v: u8) -> Self {
        if v == 1 {
            Self::Ffpe
        } else {
            Self::Fs
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FFPE" => Ok(Self::Ffpe),
            "FS" => Ok(Self::Fs),
            _ => Err(Error::Manifest(format!("label must be FFPE or FS, got `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Self::Train, Self::Val, Self::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Self::Train),
            "val" | "valid" | "validation" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            _ => Err(Error::Manifest(format!("split must be train, val or test, got `{s}`"))),
        }
    }
}

macro_rules! string_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(Label);
string_serde!(Split);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub slide_id: String,
    pub path: PathBuf,
    pub label: Label,
    pub dataset: String,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        let m = Self { records };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.slide_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate slide_id `{}`", r.slide_id)));
            }
        }
        Ok(())
    }

    /// Reads CSV (header `slide_id,path,label,dataset,split`) or, for `.jsonl`
    /// and `.json` files, one JSON object per line. Relative paths are
    /// resolved against the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        let jsonl = matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json"));
        let mut records: Vec<ManifestRecord> = if jsonl {
            let mut out = Vec::new();
            for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                out.push(
                    serde_json::from_str(&line)
                        .map_err(|e| Error::Manifest(format!("{} line {}: {e}", path.display(), i + 1)))?,
                );
            }
            out
        } else {
            csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_reader(file)
                .deserialize()
                .enumerate()
                .map(|(i, r)| r.map_err(|e| Error::Manifest(format!("{} record {}: {e}", path.display(), i + 1))))
                .collect::<Result<_>>()?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        for r in &mut records {
            if r.path.is_relative() {
                r.path = base.join(&r.path);
            }
        }
        Self::new(records)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Manifest(e.to_string()))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::Manifest(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path, &self.records)
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// `(FFPE, FS)` counts in `split`.
    pub fn class_counts(&self, split: Split) -> (usize, usize) {
        let recs = self.split(split);
        let pos = recs.iter().filter(|r| r.label == Label::Ffpe).count();
        (pos, recs.len() - pos)
    }
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Per-split counts of `n` items under `fractions`: floors first, then one
/// extra item to the splits with the largest fractional remainders (earlier
/// split first on ties).
pub fn allocate(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact = fractions.map(|f| f * n as f64);
    let mut counts = exact.map(|e| e.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &k in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Stratified split: records of each label (FFPE first, then FS) are
/// shuffled with one seeded stream and cut into train/val/test by
/// [`allocate`]. Record order is preserved in the output.
pub fn split_dataset(records: &[ManifestRecord], fractions: [f64; 3], seed: u64) -> Result<Manifest> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("split fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = records.to_vec();
    for label in [Label::Ffpe, Label::Fs] {
        let mut idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].label == label).collect();
        if idx.is_empty() {
            return Err(Error::InvalidInput(format!("no {label} records to split")));
        }
        idx.shuffle(&mut rng);
        let counts = allocate(idx.len(), fractions);
        let mut it = idx.into_iter();
        for (split, count) in Split::ALL.into_iter().zip(counts) {
            for i in it.by_ref().take(count) {
                out[i].split = split;
            }
        }
    }
    Manifest::new(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    /// Overrides the approach's default backbone freezing.
    #[serde(default)]
    pub freeze: Option<FreezeMode>,
    /// Stop after this many optimizer steps.
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Alternate FFPE and FS slides in the epoch order so that batches mix
    /// both classes; otherwise a plain shuffle.
    #[serde(default = "default_interleave")]
    pub interleave_classes: bool,
}

fn default_epochs() -> usize {
    30
}

fn default_batch_size() -> usize {
    4
}

fn default_lr() -> f64 {
    1e-4
}

fn default_weight_decay() -> f64 {
    1e-2
}

fn default_interleave() -> bool {
    true
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            learning_rate: default_lr(),
            weight_decay: default_weight_decay(),
            seed: 0,
            freeze: None,
            max_steps: None,
            interleave_classes: default_interleave(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("learning_rate must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }

    pub fn freeze_mode(&self) -> FreezeMode {
        self.freeze.unwrap_or(self.model.approach.default_freeze())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Mean batch loss and accuracy in train mode.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_auroc: Option<f64>,
}

pub struct TrainOutcome {
    /// Weights from the epoch with the best validation accuracy (lower
    /// validation loss breaks ties).
    pub model: FixationModel,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
    /// Model after the last step, regardless of validation.
    pub last: FixationModel,
}

/// A slide resized to the model's scale, ready for tiling and normalization.
pub struct PreparedSlide {
    pub slide_id: String,
    pub label: Label,
    pub image: RasterImage,
}

impl PreparedSlide {
    pub fn input(&self, model: &FixationModel) -> Result<SlideInput> {
        model.prepare(&self.image)
    }
}

/// Loads and resizes every record in parallel; order follows `records`.
pub fn prepare_slides(records: &[&ManifestRecord], model: &FixationModel) -> Result<Vec<PreparedSlide>> {
    records
        .par_iter()
        .map(|r| {
            let img = load_thumbnail(&r.path)?;
            Ok(PreparedSlide {
                slide_id: r.slide_id.clone(),
                label: r.label,
                image: crate::imaging::prepare(&img, model.scale())?,
            })
        })
        .collect()
}

/// Inference-mode scores for `slides`, in order.
pub fn score(model: &FixationModel, slides: &[PreparedSlide]) -> Result<Vec<ScoredSample>> {
    slides
        .par_iter()
        .map(|s| {
            let p = model.predict(&s.input(model)?)?;
            Ok(ScoredSample::new(s.slide_id.clone(), p, s.label.value()))
        })
        .collect()
}

/// Mean BCE and metrics at threshold 0.5.
pub fn evaluate(model: &FixationModel, slides: &[PreparedSlide]) -> Result<(f64, MetricsReport)> {
    let scored = score(model, slides)?;
    let loss = scored.iter().map(|s| bce_loss(s.score, s.label as f64)).sum::<f64>() / scored.len() as f64;
    Ok((loss, MetricsReport::compute(&scored, 0.5)?))
}

/// Visiting order of the training slides for one epoch. Interleaved orders
/// shuffle each class separately and then alternate, starting with the
/// larger class; the surplus of the larger class goes at the end. Batch
/// statistics in the head then see both classes in every even-sized batch,
/// as the running statistics used at inference do.
pub fn epoch_order(labels: &[Label], interleave: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if !interleave {
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.shuffle(rng);
        return order;
    }
    let mut ffpe: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Label::Ffpe).collect();
    let mut fs: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Label::Fs).collect();
    ffpe.shuffle(rng);
    fs.shuffle(rng);
    let (major, minor) = if ffpe.len() >= fs.len() { (ffpe, fs) } else { (fs, ffpe) };
    let mut order = Vec::with_capacity(labels.len());
    for (i, &m) in major.iter().enumerate() {
        order.push(m);
        if let Some(&n) = minor.get(i) {
            order.push(n);
        }
    }
    order
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Trains on the manifest's train split and selects by validation accuracy.
/// `backbone` optionally supplies pretrained backbone weights.
pub fn train(manifest: &Manifest, config: &TrainConfig, backbone: Option<&WeightStore>) -> Result<TrainOutcome> {
    train_with(manifest, config, backbone, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    manifest: &Manifest,
    config: &TrainConfig,
    backbone: Option<&WeightStore>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_recs = manifest.split(Split::Train);
    let val_recs = manifest.split(Split::Val);
    if train_recs.is_empty() || val_recs.is_empty() {
        return Err(Error::InvalidInput("training needs non-empty train and val splits".into()));
    }
    let mut model = match backbone {
        Some(ws) => FixationModel::with_pretrained_backbone(config.model.clone(), ws, config.seed)?,
        None => FixationModel::new(config.model.clone(), config.seed)?,
    };
    let train_set = prepare_slides(&train_recs, &model)?;
    let val_set = prepare_slides(&val_recs, &model)?;
    let mask = model.trainable_mask(config.freeze_mode())?;
    let opts = BatchOptions {
        mode: Mode::Train,
        gradients: true,
        backbone_frozen: mask.backbone_frozen(),
        ..Default::default()
    };
    let mut opt = AdamW::new(config.learning_rate, config.weight_decay);
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, f64, usize, FixationModel)> = None;
    let mut steps = 0;
    'epochs: for epoch in 1..=config.epochs {
        let labels: Vec<Label> = train_set.iter().map(|s| s.label).collect();
        let order = epoch_order(&labels, config.interleave_classes, &mut stream(config.seed, epoch as u64));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        let mut seen = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            if config.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let inputs = chunk.iter().map(|&i| train_set[i].input(&model)).collect::<Result<Vec<_>>>()?;
            let batch: Vec<(&SlideInput, f64)> = inputs
                .iter()
                .zip(chunk)
                .map(|(x, &i)| (x, train_set[i].label.value() as f64))
                .collect();
            let mut rng = stream(config.seed, (1 << 40) | ((epoch as u64) << 20) | b as u64);
            let res = model.batch(&batch, opts, &mut rng)?;
            let grads = res.grads.expect("gradients requested");
            opt.step(&mut model, &grads, |name| mask.is_trainable(name));
            round_to_f32(&mut model);
            steps += 1;
            loss_sum += res.loss * chunk.len() as f64;
            correct += res
                .probabilities
                .iter()
                .zip(&batch)
                .filter(|(p, (_, y))| (**p >= 0.5) == (*y == 1.0))
                .count();
            seen += chunk.len();
        }
        if seen == 0 {
            break 'epochs;
        }
        let (val_loss, report) = evaluate(&model, &val_set)?;
        let record = EpochRecord {
            epoch,
            steps,
            train_loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / seen as f64,
            val_loss,
            val_accuracy: report.accuracy,
            val_auroc: report.auroc,
        };
        on_epoch(&record);
        let improves = best
            .as_ref()
            .is_none_or(|(acc, loss, _, _)| report.accuracy > *acc || (report.accuracy == *acc && val_loss < *loss));
        if improves {
            best = Some((report.accuracy, val_loss, epoch, model.clone()));
        }
        log.push(record);
    }
    let (_, _, best_epoch, best_model) = match best {
        Some(b) => b,
        None => (0.0, 0.0, 0, model.clone()),
    };
    Ok(TrainOutcome {
        model: best_model,
        best_epoch,
        log,
        last: model,
    })
}

/// Groups scored samples by dataset name and computes one report per group.
pub fn reports_by_dataset(samples: &[(String, ScoredSample)], threshold: f64) -> Result<BTreeMap<String, MetricsReport>> {
    let mut groups: BTreeMap<String, Vec<ScoredSample>> = BTreeMap::new();
    for (ds, s) in samples {
        groups.entry(ds.clone()).or_default().push(s.clone());
    }
    groups
        .into_iter()
        .map(|(k, v)| MetricsReport::compute(&v, threshold).map(|r| (k, r)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n_pos: usize, n_neg: usize) -> Vec<ManifestRecord> {
        (0..n_pos + n_neg)
            .map(|i| ManifestRecord {
                slide_id: format!("s{i}"),
                path: PathBuf::from(format!("s{i}.png")),
                label: if i < n_pos { Label::Ffpe } else { Label::Fs },
                dataset: "d".into(),
                split: Split::Train,
            })
            .collect()
    }

    #[test]
    fn allocation_matches_table_split() {
        assert_eq!(allocate(1080, [5.0 / 9.0, 2.0 / 9.0, 2.0 / 9.0]), [600, 240, 240]);
        assert_eq!(allocate(10, [1.0, 0.0, 0.0]), [10, 0, 0]);
        assert_eq!(allocate(10, [0.5, 0.25, 0.25]), [5, 3, 2]);
        assert_eq!(allocate(7, [1.0 / 3.0; 3]).iter().sum::<usize>(), 7);
    }

    #[test]
    fn stratified_split_counts() {
        let m = split_dataset(&records(1080, 1080), [5.0 / 9.0, 2.0 / 9.0, 2.0 / 9.0], 3).unwrap();
        assert_eq!(m.class_counts(Split::Train), (600, 600));
        assert_eq!(m.class_counts(Split::Val), (240, 240));
        assert_eq!(m.class_counts(Split::Test), (240, 240));
    }

    #[test]
    fn split_errors() {
        assert!(split_dataset(&records(5, 0), [0.6, 0.2, 0.2], 0).is_err());
        assert!(split_dataset(&records(5, 5), [0.6, 0.2, 0.3], 0).is_err());
        let all = split_dataset(&records(4, 6), [1.0, 0.0, 0.0], 0).unwrap();
        assert!(all.records.iter().all(|r| r.split == Split::Train));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let mut r = records(2, 2);
        r[1].slide_id = "s0".into();
        assert!(Manifest::new(r).is_err());
    }

    #[test]
    fn manifest_round_trips_csv_and_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let m = split_dataset(&records(3, 3), [0.5, 0.5, 0.0], 1).unwrap();
        let mut expected = m.clone();
        for r in &mut expected.records {
            r.path = dir.path().join(&r.path);
        }
        m.save_csv(dir.path().join("m.csv")).unwrap();
        m.save_jsonl(dir.path().join("m.jsonl")).unwrap();
        assert_eq!(Manifest::load(dir.path().join("m.csv")).unwrap(), expected);
        assert_eq!(Manifest::load(dir.path().join("m.jsonl")).unwrap(), expected);
        let text = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
        assert!(text.starts_with("slide_id,path,label,dataset,split\n"));
        assert!(text.contains(",FFPE,") && text.contains(",FS,"));
    }

    #[test]
    fn interleaved_order_alternates_classes() {
        use Label::{Ffpe, Fs};
        let labels = [Fs, Ffpe, Fs, Fs, Ffpe, Fs, Fs];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let order = epoch_order(&labels, true, &mut rng);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..7).collect::<Vec<_>>());
        let seq: Vec<Label> = order.iter().map(|&i| labels[i]).collect();
        assert_eq!(seq, [Fs, Ffpe, Fs, Ffpe, Fs, Fs, Fs]);
        let plain = epoch_order(&labels, false, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(plain.len(), 7);
        assert_eq!(epoch_order(&labels, true, &mut ChaCha8Rng::seed_from_u64(3)), order);
    }

    #[test]
    fn label_parsing() {
        assert_eq!("ffpe".parse::<Label>().unwrap(), Label::Ffpe);
        assert_eq!("FS".parse::<Label>().unwrap().value(), 0);
        assert!("frozen".parse::<Label>().is_err());
    }
}
