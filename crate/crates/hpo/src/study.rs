//! Study runner: Hyperband brackets repeated until the trial budget is spent,
//! with new configurations proposed by TPE from all finished evaluations.

use std::cmp::Ordering;
use std::fmt::Display;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hyperband::{halving_rungs, hyperband_schedule};
use crate::log::{LogRecord, Memo, StudyLog};
use crate::space::{Point, SearchSpace};
use crate::tpe::{tpe_suggest, Observation, TpeConfig};
use crate::{HpoError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    /// Orders `a` before `b` when `a` is the better value.
    fn better_first(self, a: f64, b: f64) -> Ordering {
        match self {
            Self::Maximize => b.total_cmp(&a),
            Self::Minimize => a.total_cmp(&b),
        }
    }

    fn loss(self, value: f64) -> f64 {
        match self {
            Self::Maximize => -value,
            Self::Minimize => value,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Running,
    Pruned,
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub bracket: u32,
    pub point: Point,
    /// `(budget, value)` per rung reached, budgets strictly increasing.
    pub intermediate: Vec<(f64, f64)>,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Trial {
    pub fn last_value(&self) -> Option<f64> {
        self.intermediate.last().map(|&(_, v)| v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub seed: u64,
    pub max_trials: usize,
    /// Largest per-trial budget (epochs).
    pub max_budget: u64,
    pub eta: u64,
    pub direction: Direction,
    pub tpe: TpeConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_trials: 256,
            max_budget: 27,
            eta: 3,
            direction: Direction::Maximize,
            tpe: TpeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyState {
    pub trials: Vec<Trial>,
    pub seed: u64,
    pub max_trials: usize,
    pub direction: Direction,
    /// Index into `trials` of the best complete trial.
    pub best: Option<usize>,
}

impl StudyState {
    pub fn best_trial(&self) -> Option<&Trial> {
        self.best.map(|i| &self.trials[i])
    }

    pub fn count(&self, status: TrialStatus) -> usize {
        self.trials.iter().filter(|t| t.status == status).count()
    }
}

struct Runner<'a, F> {
    space: &'a SearchSpace,
    cfg: &'a StudyConfig,
    objective: F,
    log: Option<&'a mut StudyLog>,
    memo: Memo,
    trials: Vec<Trial>,
    rng: ChaCha8Rng,
}

impl<F, E> Runner<'_, F>
where
    F: FnMut(&Point, f64) -> std::result::Result<f64, E>,
    E: Display,
{
    fn history(&self) -> Vec<Observation> {
        self.trials
            .iter()
            .filter(|t| t.status != TrialStatus::Failed)
            .filter_map(|t| {
                t.last_value().map(|v| Observation {
                    point: t.point.clone(),
                    loss: self.cfg.direction.loss(v),
                })
            })
            .collect()
    }

    fn write(&mut self, record: LogRecord) -> Result<()> {
        match self.log.as_deref_mut() {
            Some(log) => log.append(record),
            None => Ok(()),
        }
    }

    fn record(&self, id: usize) -> LogRecord {
        let t = &self.trials[id];
        LogRecord {
            trial: id,
            bracket: t.bracket,
            point: t.point.clone(),
            status: t.status,
            budget: None,
            value: None,
            error: t.error.clone(),
        }
    }

    fn suggest(&mut self, bracket: u32) -> Result<usize> {
        let history = self.history();
        let point = tpe_suggest(&history, self.space, &self.cfg.tpe, &mut self.rng)?;
        let id = self.trials.len();
        if let Some(logged) = self.memo.points.get(&id) {
            if *logged != point {
                return Err(HpoError::Log {
                    path: self.log.as_ref().map(|l| l.path().display().to_string()).unwrap_or_default(),
                    message: format!("trial {id} was logged at {logged:?} but replays to {point:?}; seed or space changed"),
                });
            }
        }
        self.trials.push(Trial {
            id,
            bracket,
            point,
            intermediate: Vec::new(),
            status: TrialStatus::Running,
            error: None,
        });
        Ok(id)
    }

    fn evaluate(&mut self, id: usize, budget: f64) -> Result<()> {
        let key = (id, budget.to_bits());
        let (outcome, fresh) = match self.memo.outcomes.get(&key) {
            Some(o) => (o.clone(), false),
            None => {
                let o = match (self.objective)(&self.trials[id].point, budget) {
                    Ok(v) if v.is_finite() => Ok(v),
                    Ok(v) => Err(format!("objective returned {v}")),
                    Err(e) => Err(e.to_string()),
                };
                (o, true)
            }
        };
        let t = &mut self.trials[id];
        match &outcome {
            Ok(v) => t.intermediate.push((budget, *v)),
            Err(e) => {
                t.status = TrialStatus::Failed;
                t.error = Some(e.clone());
            }
        }
        if fresh {
            let mut r = self.record(id);
            r.budget = Some(budget);
            r.value = outcome.as_ref().ok().copied();
            self.write(r)?;
        }
        Ok(())
    }

    fn set_status(&mut self, id: usize, status: TrialStatus) -> Result<()> {
        self.trials[id].status = status;
        let r = self.record(id);
        let logged = self
            .log
            .as_ref()
            .is_some_and(|l| l.records().iter().any(|x| x.trial == id && x.budget.is_none() && x.status == status));
        if logged {
            Ok(())
        } else {
            self.write(r)
        }
    }

    fn run(&mut self) -> Result<()> {
        let schedule = hyperband_schedule(self.cfg.max_budget, self.cfg.eta)?;
        while self.trials.len() < self.cfg.max_trials {
            for bracket in &schedule {
                let remaining = self.cfg.max_trials - self.trials.len();
                if remaining == 0 {
                    break;
                }
                let n0 = bracket.n_configs().min(remaining);
                let rungs = halving_rungs(n0, bracket.rungs[0].budget, bracket.s, self.cfg.eta);
                let mut active = Vec::with_capacity(n0);
                for (i, rung) in rungs.iter().enumerate() {
                    if i == 0 {
                        for _ in 0..n0 {
                            let id = self.suggest(bracket.s)?;
                            self.evaluate(id, rung.budget)?;
                            active.push(id);
                        }
                    } else {
                        for &id in &active {
                            self.evaluate(id, rung.budget)?;
                        }
                    }
                    let mut alive: Vec<usize> = active
                        .iter()
                        .copied()
                        .filter(|&id| self.trials[id].status != TrialStatus::Failed)
                        .collect();
                    let dir = self.cfg.direction;
                    let value = |id: usize| self.trials[id].last_value().expect("evaluated");
                    alive.sort_by(|&a, &b| dir.better_first(value(a), value(b)).then(a.cmp(&b)));
                    if rung.keep == 0 {
                        for &id in &alive {
                            self.set_status(id, TrialStatus::Complete)?;
                        }
                        break;
                    }
                    let keep = rung.keep.min(alive.len());
                    for &id in &alive[keep..] {
                        self.set_status(id, TrialStatus::Pruned)?;
                    }
                    alive.truncate(keep);
                    // failed trials were logged when they failed
                    active = alive;
                    if active.is_empty() {
                        break;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Runs a study. `objective(point, budget)` returns the value at that
/// budget; errors and non-finite values mark the trial failed. With `log`,
/// evaluations already recorded there are reused instead of recomputed and
/// new ones are appended.
pub fn run_study<F, E>(space: &SearchSpace, cfg: &StudyConfig, objective: F, log: Option<&mut StudyLog>) -> Result<StudyState>
where
    F: FnMut(&Point, f64) -> std::result::Result<f64, E>,
    E: Display,
{
    space.validate()?;
    let memo = log.as_ref().map(|l| l.memo()).unwrap_or_default();
    let mut runner = Runner {
        space,
        cfg,
        objective,
        log,
        memo,
        trials: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    runner.run()?;
    let trials = runner.trials;
    let best = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Complete)
        .min_by(|a, b| {
            cfg.direction
                .better_first(a.last_value().expect("complete"), b.last_value().expect("complete"))
                .then(a.id.cmp(&b.id))
        })
        .map(|t| t.id);
    Ok(StudyState {
        trials,
        seed: cfg.seed,
        max_trials: cfg.max_trials,
        direction: cfg.direction,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Dimension;

    fn small_space() -> SearchSpace {
        SearchSpace::new(vec![Dimension::new("a", 0, 20, 1).unwrap(), Dimension::new("b", 0, 20, 1).unwrap()]).unwrap()
    }

    fn quad(p: &Point) -> f64 {
        -(((p[0] - 13) as f64).powi(2) + ((p[1] - 4) as f64).powi(2))
    }

    #[test]
    fn single_trial_is_best() {
        let cfg = StudyConfig { max_trials: 1, ..Default::default() };
        let s = run_study(&small_space(), &cfg, |p, _| Ok::<_, String>(quad(p)), None).unwrap();
        assert_eq!(s.trials.len(), 1);
        assert_eq!(s.best, Some(0));
        assert_eq!(s.trials[0].status, TrialStatus::Complete);
        let budgets: Vec<f64> = s.trials[0].intermediate.iter().map(|x| x.0).collect();
        assert_eq!(budgets, vec![1.0, 3.0, 9.0, 27.0]);
    }

    #[test]
    fn failures_do_not_abort() {
        let cfg = StudyConfig { max_trials: 30, ..Default::default() };
        let s = run_study(
            &small_space(),
            &cfg,
            |p, _| if p[0] % 2 == 0 { Err("odd failure") } else { Ok(quad(p)) },
            None,
        )
        .unwrap();
        assert_eq!(s.trials.len(), 30);
        assert!(s.count(TrialStatus::Failed) > 0);
        assert_eq!(s.count(TrialStatus::Running), 0);
        assert_eq!(
            s.count(TrialStatus::Failed) + s.count(TrialStatus::Pruned) + s.count(TrialStatus::Complete),
            30
        );
        assert!(s.trials.iter().filter(|t| t.status == TrialStatus::Failed).all(|t| t.error.is_some()));
        assert!(s.best_trial().is_some_and(|t| t.point[0] % 2 == 1));
    }

    #[test]
    fn minimize_direction() {
        let cfg = StudyConfig {
            max_trials: 60,
            direction: Direction::Minimize,
            ..Default::default()
        };
        let s = run_study(&small_space(), &cfg, |p, _| Ok::<_, String>(-quad(p)), None).unwrap();
        let best = s.best_trial().unwrap().last_value().unwrap();
        let completes: Vec<f64> = s
            .trials
            .iter()
            .filter(|t| t.status == TrialStatus::Complete)
            .map(|t| t.last_value().unwrap())
            .collect();
        assert!(completes.iter().all(|&v| v >= best));
    }

    #[test]
    fn non_finite_values_fail_the_trial() {
        let cfg = StudyConfig { max_trials: 3, ..Default::default() };
        let s = run_study(&small_space(), &cfg, |_, _| Ok::<_, String>(f64::NAN), None).unwrap();
        assert_eq!(s.count(TrialStatus::Failed), 3);
        assert_eq!(s.best, None);
    }
}
