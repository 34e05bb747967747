//! `hpo`: a resumable Hyperband + TPE study over head widths.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thumbqc_core::training::{train, Manifest, TrainConfig};
use thumbqc_core::weights::WeightStore;
use thumbqc_hpo::{run_study, Point, SearchSpace, StudyLog, StudyState, Trial};

use crate::config::{self, HpoFile, Objective};
use crate::error::{CliError, CliResult};

pub const STUDY_LOG: &str = "study.jsonl";
pub const STUDY_STATE: &str = "study.json";
pub const BEST: &str = "best.json";

const HEAD_DIMS: [&str; 3] = ["layer_1", "layer_2", "layer_3"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestTrial {
    pub trial: Trial,
    pub value: f64,
    /// Dimension name to value.
    pub params: Vec<(String, i64)>,
}

struct TrainObjective {
    base: TrainConfig,
    manifest: Manifest,
    backbone: Option<WeightStore>,
    /// Position of `layer_1..3` in the search space.
    slots: [usize; 3],
}

impl TrainObjective {
    fn new(file: &HpoFile, config_path: &Path, space: &SearchSpace, seed: u64) -> CliResult<Self> {
        let data = file
            .data
            .as_ref()
            .ok_or_else(|| CliError::Config("data: required by the train objective".into()))?;
        let model = file
            .model
            .as_ref()
            .ok_or_else(|| CliError::Config("model: required by the train objective".into()))?;
        let mut slots = [0; 3];
        for (slot, name) in slots.iter_mut().zip(HEAD_DIMS) {
            *slot = space
                .dims
                .iter()
                .position(|d| d.name == name)
                .ok_or_else(|| CliError::Config(format!("space: the train objective needs a `{name}` dimension")))?;
        }
        let t = &file.train;
        let base = TrainConfig {
            model: model.build()?,
            epochs: 1,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            seed,
            freeze: t.freeze,
            max_steps: t.max_steps,
            interleave_classes: t.interleave_classes,
        };
        base.validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
        let backbone = match &data.backbone_weights {
            Some(p) => {
                let p = config::resolve(config_path, p);
                Some(WeightStore::load(&p).map_err(|e| CliError::Config(format!("data.backbone_weights {}: {e}", p.display())))?)
            }
            None => None,
        };
        Ok(Self {
            base,
            manifest: config::load_manifest(data, config_path, seed)?,
            backbone,
            slots,
        })
    }

    /// Best validation accuracy after `budget` epochs with the point's head widths.
    fn evaluate(&self, point: &Point, budget: f64) -> CliResult<f64> {
        let mut cfg = self.base.clone();
        for (k, &slot) in self.slots.iter().enumerate() {
            cfg.model.head_layers[k] = usize::try_from(point[slot]).map_err(CliError::config)?;
        }
        cfg.epochs = (budget.round() as usize).max(1);
        let outcome = train(&self.manifest, &cfg, self.backbone.as_ref())?;
        Ok(outcome.log.iter().map(|r| r.val_accuracy).fold(f64::NEG_INFINITY, f64::max))
    }
}

pub struct HpoArgs<'a> {
    pub config: &'a Path,
    pub out: &'a Path,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// Runs (or resumes, if `study.jsonl` exists in `out`) the configured study.
pub fn run(args: &HpoArgs<'_>) -> CliResult<StudyState> {
    let file: HpoFile = config::load(args.config)?;
    let seed = args.seed.unwrap_or(file.seed);
    let space = file.space()?;
    let cfg = file.study_config(seed);
    std::fs::create_dir_all(args.out)?;
    let mut log = StudyLog::open(args.out.join(STUDY_LOG))?;
    let pool = crate::thread_pool(args.threads.unwrap_or(0))?;

    let state = match &file.objective {
        Objective::Quadratic { target } => {
            if target.len() != space.dims.len() {
                return Err(CliError::Config(format!(
                    "objective.target: {} values for {} dimensions",
                    target.len(),
                    space.dims.len()
                )));
            }
            run_study(
                &space,
                &cfg,
                |p, _| Ok::<_, String>(-p.iter().zip(target).map(|(&v, &t)| ((v - t) as f64).powi(2)).sum::<f64>()),
                Some(&mut log),
            )?
        }
        Objective::Train => {
            let objective = TrainObjective::new(&file, args.config, &space, seed)?;
            pool.install(|| {
                run_study(
                    &space,
                    &cfg,
                    |p, b| {
                        let v = objective.evaluate(p, b);
                        if let Ok(v) = &v {
                            eprintln!("trial point {p:?} budget {b} -> {v:.4}");
                        }
                        v
                    },
                    Some(&mut log),
                )
            })?
        }
    };

    std::fs::write(
        args.out.join(STUDY_STATE),
        serde_json::to_string_pretty(&state).map_err(CliError::runtime)?,
    )?;
    let best = state.best_trial().map(|t| BestTrial {
        trial: t.clone(),
        value: t.last_value().unwrap_or(f64::NAN),
        params: space.dims.iter().map(|d| d.name.clone()).zip(t.point.iter().copied()).collect(),
    });
    std::fs::write(args.out.join(BEST), serde_json::to_string_pretty(&best).map_err(CliError::runtime)?)?;
    Ok(state)
}
