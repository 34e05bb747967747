//! Bracket layout for Hyperband: each bracket is a run of successive halving
//! that trades the number of configurations against their starting budget.

use serde::{Deserialize, Serialize};

use crate::{HpoError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    /// Configurations evaluated at this rung.
    pub n_configs: usize,
    pub budget: f64,
    /// Configurations promoted to the next rung; zero on the last rung.
    pub keep: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub s: u32,
    pub rungs: Vec<Rung>,
}

impl Bracket {
    pub fn n_configs(&self) -> usize {
        self.rungs[0].n_configs
    }
}

/// Largest `s` with `eta^s <= r_max`, by exact integer arithmetic.
pub fn s_max(r_max: u64, eta: u64) -> u32 {
    let mut s = 0;
    let mut p: u64 = 1;
    while let Some(next) = p.checked_mul(eta) {
        if next > r_max {
            break;
        }
        p = next;
        s += 1;
    }
    s
}

/// Survivors of one halving step. At least one configuration always advances
/// so that a truncated bracket still reaches the full budget.
pub fn survivors(n: usize, eta: u64) -> usize {
    (n / eta as usize).max(1)
}

/// Successive-halving rungs starting `n` configurations at `budget`.
pub fn halving_rungs(n: usize, budget: f64, s: u32, eta: u64) -> Vec<Rung> {
    let mut rungs = Vec::with_capacity(s as usize + 1);
    let mut n_i = n;
    let mut r_i = budget;
    for i in 0..=s {
        let keep = if i == s { 0 } else { survivors(n_i, eta) };
        rungs.push(Rung {
            n_configs: n_i,
            budget: r_i,
            keep,
        });
        n_i = keep;
        r_i *= eta as f64;
    }
    rungs
}

/// Brackets `s = s_max, ..., 0` for maximum budget `r_max` and reduction
/// factor `eta`.
pub fn hyperband_schedule(r_max: u64, eta: u64) -> Result<Vec<Bracket>> {
    if r_max < 1 {
        return Err(HpoError::Schedule(format!("maximum budget {r_max} must be at least 1")));
    }
    if eta < 2 {
        return Err(HpoError::Schedule(format!("reduction factor {eta} must be at least 2")));
    }
    let s_max = s_max(r_max, eta);
    let brackets = (0..=s_max)
        .rev()
        .map(|s| {
            let eta_s = eta.pow(s);
            // ceil((s_max + 1) / (s + 1) * eta^s) in integers
            let num = (s_max as u128 + 1) * eta_s as u128;
            let n = num.div_ceil(s as u128 + 1) as usize;
            let budget = r_max as f64 / eta_s as f64;
            Bracket {
                s,
                rungs: halving_rungs(n, budget, s, eta),
            }
        })
        .collect();
    Ok(brackets)
}
