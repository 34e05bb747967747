use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::{HpoError, Result};

/// One value per dimension, in the order of [`SearchSpace::dims`].
pub type Point = Vec<i64>;

/// Integer range `low, low + step, ..., high`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub low: i64,
    pub high: i64,
    pub step: i64,
}

impl Dimension {
    pub fn new(name: impl Into<String>, low: i64, high: i64, step: i64) -> Result<Self> {
        let d = Self {
            name: name.into(),
            low,
            high,
            step,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.step <= 0 {
            return Err(HpoError::Space(format!("`{}`: step {} must be positive", self.name, self.step)));
        }
        if self.low > self.high {
            return Err(HpoError::Space(format!("`{}`: low {} exceeds high {}", self.name, self.low, self.high)));
        }
        if (self.high - self.low) % self.step != 0 {
            return Err(HpoError::Space(format!(
                "`{}`: step {} does not divide {}..{}",
                self.name, self.step, self.low, self.high
            )));
        }
        Ok(())
    }

    /// Number of lattice points.
    pub fn levels(&self) -> usize {
        ((self.high - self.low) / self.step) as usize + 1
    }

    pub fn value(&self, index: usize) -> i64 {
        self.low + index as i64 * self.step
    }

    /// Lattice index of `value`, if it lies on the lattice.
    pub fn index_of(&self, value: i64) -> Option<usize> {
        let off = value - self.low;
        (value >= self.low && value <= self.high && off % self.step == 0).then(|| (off / self.step) as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        let s = Self { dims };
        s.validate()?;
        Ok(s)
    }

    /// Three hidden-layer widths in `[64, 2048]`, step 64.
    pub fn head_widths() -> Self {
        let dims = (1..=3)
            .map(|i| Dimension {
                name: format!("layer_{i}"),
                low: 64,
                high: 2048,
                step: 64,
            })
            .collect();
        Self { dims }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(HpoError::Space("no dimensions".into()));
        }
        for (i, d) in self.dims.iter().enumerate() {
            d.validate()?;
            if self.dims[..i].iter().any(|o| o.name == d.name) {
                return Err(HpoError::Space(format!("duplicate dimension `{}`", d.name)));
            }
        }
        Ok(())
    }

    pub fn contains(&self, point: &[i64]) -> bool {
        point.len() == self.dims.len() && self.dims.iter().zip(point).all(|(d, &v)| d.index_of(v).is_some())
    }

    /// Lattice indices of `point`; `None` if it is off the lattice.
    pub fn indices(&self, point: &[i64]) -> Option<Vec<usize>> {
        if point.len() != self.dims.len() {
            return None;
        }
        self.dims.iter().zip(point).map(|(d, &v)| d.index_of(v)).collect()
    }

    pub fn sample_uniform(&self, rng: &mut dyn RngCore) -> Point {
        self.dims.iter().map(|d| d.value(rng.random_range(0..d.levels()))).collect()
    }

    /// Every lattice point, last dimension fastest.
    pub fn grid(&self) -> Vec<Point> {
        let mut out: Vec<Point> = vec![Vec::new()];
        for d in &self.dims {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..d.levels()).map(move |k| {
                        let mut q = p.clone();
                        q.push(d.value(k));
                        q
                    })
                })
                .collect();
        }
        out
    }
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self::head_widths()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_space() {
        let s = SearchSpace::default();
        assert_eq!(s.dims.len(), 3);
        assert_eq!(s.dims[0].levels(), 32);
        assert!(s.contains(&[64, 2048, 1024]));
        assert!(!s.contains(&[64, 2048, 1000]));
        assert!(!s.contains(&[0, 64, 64]));
    }

    #[test]
    fn invalid_dimensions() {
        assert!(Dimension::new("a", 5, 1, 1).is_err());
        assert!(Dimension::new("a", 0, 10, 3).is_err());
        assert!(Dimension::new("a", 0, 10, 0).is_err());
        assert!(Dimension::new("a", 3, 3, 7).is_ok());
        assert!(SearchSpace::new(vec![]).is_err());
        let a = Dimension::new("a", 0, 4, 2).unwrap();
        assert!(SearchSpace::new(vec![a.clone(), a]).is_err());
    }

    #[test]
    fn uniform_samples_stay_on_lattice() {
        let s = SearchSpace::new(vec![Dimension::new("a", -6, 6, 3).unwrap(), Dimension::new("b", 1, 1, 1).unwrap()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let p = s.sample_uniform(&mut rng);
            assert!(s.contains(&p), "{p:?}");
        }
    }

    #[test]
    fn grid_enumerates_every_point() {
        let s = SearchSpace::new(vec![Dimension::new("a", 0, 2, 1).unwrap(), Dimension::new("b", 10, 30, 10).unwrap()]).unwrap();
        let g = s.grid();
        assert_eq!(g.len(), 9);
        assert_eq!(g[1], vec![0, 20]);
        assert!(g.iter().all(|p| s.contains(p)));
    }
}
