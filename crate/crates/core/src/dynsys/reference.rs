//! Reference invariant measures, known through their integrals against the
//! test family.

use super::{MapSystem, Observable, Point, TestFunctionFamily};
use crate::error::{Error, Result};
use crate::scalar::Real;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    Analytic,
    LongOrbit { seed: u64, length: u64, batches: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMeasure<T> {
    pub name: String,
    pub integrals: Vec<T>,
    pub integral_error: T,
    pub provenance: Provenance,
}

impl<T: Real> ReferenceMeasure<T> {
    /// Lebesgue measure on the torus: nonconstant Fourier modes integrate to 0.
    pub fn lebesgue(family: &TestFunctionFamily<T>) -> Self {
        let integrals = family
            .functions
            .iter()
            .map(|f| match f {
                Observable::Fourier { .. } => T::zero(),
                Observable::Constant { value } => *value,
            })
            .collect();
        Self {
            name: "lebesgue".into(),
            integrals,
            integral_error: T::zero(),
            provenance: Provenance::Analytic,
        }
    }

    pub fn analytic(name: &str, integrals: Vec<T>) -> Self {
        Self { name: name.into(), integrals, integral_error: T::zero(), provenance: Provenance::Analytic }
    }

    /// Time averages along one seeded orbit of `length` steps. The declared
    /// error is three batch-means standard errors, maximized over functions.
    pub fn estimate_long_orbit(
        map: &dyn MapSystem<T>,
        family: &TestFunctionFamily<T>,
        length: u64,
        seed: u64,
        batches: u32,
    ) -> Result<Self> {
        if length == 0 || batches < 2 || length < batches as u64 {
            return Err(Error::InvalidInput("long-orbit estimate needs length ≥ batches ≥ 2".into()));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let space = map.space();
        let start = Point::new(space, [T::lit(rng.gen::<f64>()), T::lit(rng.gen::<f64>())]);
        let s = family.count();
        let per_batch = length / batches as u64;
        let mut batch_means = vec![vec![0f64; s]; batches as usize];
        let mut p = start;
        for bm in batch_means.iter_mut() {
            let mut acc = vec![0f64; s];
            for step in 0..per_batch {
                for (a, f) in acc.iter_mut().zip(&family.functions) {
                    *a += f.eval(&p).as_f64();
                }
                p = Point { coords: map.forward(p.coords), space };
                if !p.is_finite() {
                    return Err(Error::OrbitEscape { step: step as i64 });
                }
            }
            for (m, a) in bm.iter_mut().zip(acc) {
                *m = a / per_batch as f64;
            }
        }
        let b = batches as f64;
        let mut integrals = Vec::with_capacity(s);
        let mut err = 0f64;
        for i in 0..s {
            let mean = batch_means.iter().map(|r| r[i]).sum::<f64>() / b;
            let var = batch_means.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / (b - 1.0);
            err = err.max(3.0 * (var / b).sqrt());
            integrals.push(T::lit(mean));
        }
        Ok(Self {
            name: format!("{}-long-orbit", map.name()),
            integrals,
            integral_error: T::lit(err),
            provenance: Provenance::LongOrbit { seed, length: per_batch * batches as u64, batches },
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Checks the invariant `integrals.len() == family.count()`.
    pub fn matches(&self, family: &TestFunctionFamily<T>) -> bool {
        self.integrals.len() == family.count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{CatMap, StandardMap};

    #[test]
    fn long_orbit_estimate_for_cat_map_is_near_zero() {
        let fam = TestFunctionFamily::<f64>::fourier(1);
        let r = ReferenceMeasure::estimate_long_orbit(&CatMap, &fam, 200_000, 9, 50).unwrap();
        assert!(r.matches(&fam));
        assert!(r.integral_error > 0.0 && r.integral_error < 0.05);
        for v in &r.integrals {
            assert!(v.abs() < r.integral_error + 0.01);
        }
    }

    #[test]
    fn json_round_trip_keeps_seed_and_length() {
        let fam = TestFunctionFamily::<f64>::fourier(1);
        let r = ReferenceMeasure::estimate_long_orbit(&StandardMap::new(7.0), &fam, 10_000, 4, 10).unwrap();
        let dir = std::env::temp_dir().join(format!("varhorse-ref-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("ref.json");
        r.save_json(&p).unwrap();
        let back = ReferenceMeasure::<f64>::load_json(&p).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.provenance, Provenance::LongOrbit { seed: 4, length: 10_000, batches: 10 });
    }
}
