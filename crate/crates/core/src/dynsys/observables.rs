//! Test functions φ₁..φ_s with declared sup-norms and Lipschitz constants.

use super::Point;
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FourierMode(pub [i32; 2]);

impl FourierMode {
    pub fn l1(&self) -> i32 {
        self.0[0].abs() + self.0[1].abs()
    }

    pub fn l2(&self) -> f64 {
        (self.0[0] as f64).hypot(self.0[1] as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Observable<T> {
    /// `cos(2π k·x)`
    Fourier { k: FourierMode },
    Constant { value: T },
}

impl<T: Real> Observable<T> {
    pub fn eval(&self, p: &Point<T>) -> T {
        match self {
            Observable::Fourier { k } => {
                let kx = T::lit(k.0[0] as f64) * p.coords[0] + T::lit(k.0[1] as f64) * p.coords[1];
                (T::TAU() * kx).cos()
            }
            Observable::Constant { value } => *value,
        }
    }

    pub fn sup_norm(&self) -> T {
        match self {
            Observable::Fourier { .. } => T::one(),
            Observable::Constant { value } => value.abs(),
        }
    }

    /// Lipschitz constant with respect to the Euclidean distance.
    pub fn lipschitz(&self) -> T {
        match self {
            Observable::Fourier { k } => T::TAU() * T::lit(k.l2()),
            Observable::Constant { .. } => T::zero(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionFamily<T> {
    pub functions: Vec<Observable<T>>,
}

impl<T: Real> TestFunctionFamily<T> {
    pub fn new(functions: Vec<Observable<T>>) -> Self {
        Self { functions }
    }

    /// `cos(2πk·x)` for `0 < ‖k‖∞ ≤ k_max`, one mode per `±k` pair (first
    /// nonzero component positive), ordered by `‖k‖₁` then lexicographically.
    pub fn fourier(k_max: u32) -> Self {
        let km = k_max as i32;
        let mut modes: Vec<FourierMode> = (-km..=km)
            .flat_map(|a| (-km..=km).map(move |b| FourierMode([a, b])))
            .filter(|k| k.0 != [0, 0])
            .filter(|k| k.0[0] > 0 || (k.0[0] == 0 && k.0[1] > 0))
            .collect();
        modes.sort_by_key(|k| (k.l1(), k.0[0], k.0[1]));
        Self::new(modes.into_iter().map(|k| Observable::Fourier { k }).collect())
    }

    pub fn constant(value: T) -> Self {
        Self::new(vec![Observable::Constant { value }])
    }

    pub fn count(&self) -> usize {
        self.functions.len()
    }

    pub fn eval_all(&self, p: &Point<T>, s: usize) -> Vec<T> {
        self.functions[..s].iter().map(|f| f.eval(p)).collect()
    }

    pub fn max_lipschitz(&self, s: usize) -> T {
        self.functions[..s].iter().fold(T::zero(), |a, f| a.max(f.lipschitz()))
    }

    pub fn max_sup_norm(&self, s: usize) -> T {
        self.functions[..s].iter().fold(T::zero(), |a, f| a.max(f.sup_norm()))
    }

    /// Checks the declared sup-norm and Lipschitz bounds on sampled points and
    /// pairs; returns the first violating function index.
    pub fn check_declared_bounds(&self, points: &[Point<T>]) -> Result<(), usize> {
        let slack = T::lit(1e-12);
        for (i, f) in self.functions.iter().enumerate() {
            for (a, p) in points.iter().enumerate() {
                if f.eval(p).abs() > f.sup_norm() + slack {
                    return Err(i);
                }
                if let Some(q) = points.get(a + 1) {
                    let lhs = (f.eval(p) - f.eval(q)).abs();
                    if lhs > f.lipschitz() * p.distance(q) + slack {
                        return Err(i);
                    }
                }
            }
        }
        Ok(())
    }
}
