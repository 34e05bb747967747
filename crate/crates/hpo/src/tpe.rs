//! Tree-structured Parzen Estimator over lattice indices. Each dimension is
//! modelled independently by a mixture of Gaussian kernels, one per
//! observation, plus a flat prior, all evaluated only at lattice points.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::space::{Point, SearchSpace};
use crate::{HpoError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TpeConfig {
    /// Fraction of observations treated as good.
    pub gamma: f64,
    /// Below this many observations points are drawn uniformly.
    pub n_startup: usize,
    pub n_candidates: usize,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            n_startup: 10,
            n_candidates: 24,
        }
    }
}

/// A scored point; lower `loss` is better.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub point: Point,
    pub loss: f64,
}

/// Scott-style bandwidth in lattice steps. It never drops below one step,
/// nor below the axis span divided by `min(100, m + 1)` for `m` centers, so
/// that a few coincident observations cannot collapse the density to a spike.
pub fn bandwidth(centers: &[f64], levels: usize) -> f64 {
    let m = centers.len() as f64;
    let mean = centers.iter().sum::<f64>() / m;
    let var = centers.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / m;
    let floor = ((levels - 1) as f64 / (m + 1.0).min(100.0)).max(1.0);
    (1.06 * var.sqrt() * m.powf(-0.2)).max(floor)
}

/// Log-probabilities of lattice indices `0..levels` under an equal-weight
/// mixture of one Gaussian kernel per center, each normalized over the
/// lattice, and one uniform prior component.
pub fn log_pmf(centers: &[f64], levels: usize) -> Vec<f64> {
    let sigma = bandwidth(centers, levels);
    let log_weight = -((centers.len() + 1) as f64).ln();
    let kernels: Vec<Vec<f64>> = centers
        .iter()
        .map(|c| {
            let raw: Vec<f64> = (0..levels).map(|k| -0.5 * ((k as f64 - c) / sigma).powi(2)).collect();
            let z = log_sum_exp(raw.iter().copied());
            raw.into_iter().map(|v| v - z).collect()
        })
        .collect();
    let log_prior = -(levels as f64).ln();
    (0..levels)
        .map(|k| log_weight + log_sum_exp(kernels.iter().map(|kern| kern[k]).chain(std::iter::once(log_prior))))
        .collect()
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Next point to evaluate given `history`.
pub fn tpe_suggest(history: &[Observation], space: &SearchSpace, cfg: &TpeConfig, rng: &mut dyn RngCore) -> Result<Point> {
    space.validate()?;
    if !(cfg.gamma > 0.0 && cfg.gamma < 1.0) || cfg.n_candidates == 0 {
        return Err(HpoError::Space(format!(
            "gamma {} must lie in (0, 1) and n_candidates {} must be positive",
            cfg.gamma, cfg.n_candidates
        )));
    }
    let usable: Vec<(Vec<usize>, f64)> = history
        .iter()
        .filter(|o| o.loss.is_finite())
        .filter_map(|o| space.indices(&o.point).map(|ix| (ix, o.loss)))
        .collect();
    if usable.len() < cfg.n_startup.max(2) {
        return Ok(space.sample_uniform(rng));
    }
    let mut order: Vec<usize> = (0..usable.len()).collect();
    order.sort_by(|&a, &b| usable[a].1.total_cmp(&usable[b].1).then(a.cmp(&b)));
    let n_good = ((cfg.gamma * usable.len() as f64).ceil() as usize).clamp(1, usable.len() - 1);
    let (good, bad) = order.split_at(n_good);

    let mut models = Vec::with_capacity(space.dims.len());
    for (d, dim) in space.dims.iter().enumerate() {
        let centers = |set: &[usize]| set.iter().map(|&i| usable[i].0[d] as f64).collect::<Vec<_>>();
        let l = log_pmf(&centers(good), dim.levels());
        let g = log_pmf(&centers(bad), dim.levels());
        let sampler = WeightedIndex::new(l.iter().map(|v| v.exp())).expect("a normalized distribution");
        models.push((l, g, sampler));
    }

    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..cfg.n_candidates {
        let idx: Vec<usize> = models.iter().map(|(_, _, s)| s.sample(rng)).collect();
        let score: f64 = models.iter().zip(&idx).map(|((l, g, _), &k)| l[k] - g[k]).sum();
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, idx));
        }
    }
    let (_, idx) = best.expect("at least one candidate");
    Ok(space.dims.iter().zip(idx).map(|(d, k)| d.value(k)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Dimension;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line(levels: i64) -> SearchSpace {
        SearchSpace::new(vec![Dimension::new("x", 0, levels - 1, 1).unwrap()]).unwrap()
    }

    #[test]
    fn cold_start_is_on_lattice() {
        let s = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert!(s.contains(&tpe_suggest(&[], &s, &TpeConfig::default(), &mut rng).unwrap()));
        }
    }

    #[test]
    fn one_point_space() {
        let s = SearchSpace::new(vec![Dimension::new("x", 7, 7, 1).unwrap()]).unwrap();
        let hist: Vec<_> = (0..20).map(|i| Observation { point: vec![7], loss: i as f64 }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(tpe_suggest(&hist, &s, &TpeConfig::default(), &mut rng).unwrap(), vec![7]);
        }
    }

    #[test]
    fn pmf_is_normalized() {
        for centers in [vec![0.0], vec![3.0, 3.0, 9.0], vec![0.0, 31.0]] {
            let p: f64 = log_pmf(&centers, 32).iter().map(|v| v.exp()).sum();
            assert!((p - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bandwidth_floor_and_scaling() {
        assert_eq!(bandwidth(&[4.0], 2), 1.0);
        assert_eq!(bandwidth(&[4.0, 4.0, 4.0], 33), 8.0);
        assert_eq!(bandwidth(&[4.0; 200], 33), 1.0);
        let b = bandwidth(&[0.0, 10.0, 20.0, 30.0], 32);
        let sd = (125.0f64).sqrt();
        assert!((b - 1.06 * sd * 4f64.powf(-0.2)).abs() < 1e-12);
    }

    #[test]
    fn concentrates_near_good_points() {
        let s = line(40);
        let hist: Vec<_> = (0..40).map(|x| Observation { point: vec![x], loss: ((x - 30) as f64).powi(2) }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let picks: Vec<i64> = (0..100)
            .map(|_| tpe_suggest(&hist, &s, &TpeConfig::default(), &mut rng).unwrap()[0])
            .collect();
        let near = picks.iter().filter(|&&x| (x - 30).abs() <= 6).count();
        assert!(near >= 90, "{near}");
    }

    #[test]
    fn rejects_bad_config() {
        let s = line(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = TpeConfig { gamma: 1.0, ..Default::default() };
        assert!(tpe_suggest(&[], &s, &cfg, &mut rng).is_err());
    }
}
