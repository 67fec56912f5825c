//! Built-in maps.

use super::{MapSystem, Space};
use crate::linalg::{Mat2, Vec2};
use crate::scalar::Real;

fn wrap<T: Real>(v: Vec2<T>) -> Vec2<T> {
    Space::Torus2.canonical(v)
}

/// Arnold cat map `x ↦ [[2,1],[1,1]] x mod 1`.
///
/// On the dyadic lattice `2⁻⁵⁰ℤ²` every step is exact in `f64`, so orbits
/// seeded there are true orbits rather than pseudo-orbits.
#[derive(Debug, Clone, Copy, Default)]
pub struct CatMap;

impl<T: Real> MapSystem<T> for CatMap {
    fn name(&self) -> &str {
        "cat"
    }
    fn space(&self) -> Space {
        Space::Torus2
    }
    fn forward(&self, x: Vec2<T>) -> Vec2<T> {
        wrap([x[0] + x[0] + x[1], x[0] + x[1]])
    }
    fn inverse(&self, x: Vec2<T>) -> Vec2<T> {
        wrap([x[0] - x[1], x[1] + x[1] - x[0]])
    }
    fn jacobian(&self, _x: Vec2<T>) -> Mat2<T> {
        Mat2::new(T::lit(2.0), T::one(), T::one(), T::one())
    }
    fn is_affine(&self) -> bool {
        true
    }
}

/// `x ↦ A x + κ (sin 2πx₂, 0) mod 1` with `A` the cat matrix.
#[derive(Debug, Clone, Copy)]
pub struct PerturbedCatMap {
    pub kappa: f64,
}

impl PerturbedCatMap {
    pub fn new(kappa: f64) -> Self {
        Self { kappa }
    }
}

impl<T: Real> MapSystem<T> for PerturbedCatMap {
    fn name(&self) -> &str {
        "perturbed-cat"
    }
    fn space(&self) -> Space {
        Space::Torus2
    }
    fn forward(&self, x: Vec2<T>) -> Vec2<T> {
        let k = T::lit(self.kappa);
        let s = (T::TAU() * x[1]).sin();
        wrap([x[0] + x[0] + x[1] + k * s, x[0] + x[1]])
    }
    fn inverse(&self, y: Vec2<T>) -> Vec2<T> {
        // x₂ − κ sin 2πx₂ = 2y₂ − y₁ (mod 1), then x₁ = y₂ − x₂.
        let k = T::lit(self.kappa);
        let c = y[1] + y[1] - y[0];
        let mut x2 = c;
        for _ in 0..60 {
            let g = x2 - k * (T::TAU() * x2).sin() - c;
            let dg = T::one() - k * T::TAU() * (T::TAU() * x2).cos();
            let step = g / dg;
            x2 = x2 - step;
            if step.abs() <= T::epsilon() * T::lit(4.0) {
                break;
            }
        }
        wrap([y[1] - x2, x2])
    }
    fn jacobian(&self, x: Vec2<T>) -> Mat2<T> {
        let k = T::lit(self.kappa);
        let d = T::one() + k * T::TAU() * (T::TAU() * x[1]).cos();
        Mat2::new(T::lit(2.0), d, T::one(), T::one())
    }
    fn parameters(&self) -> Vec<(String, f64)> {
        vec![("kappa".into(), self.kappa)]
    }
}

/// Chirikov standard map on `(q, p) ∈ T²`:
/// `p' = p + (K/2π) sin 2πq`, `q' = q + p'`.
#[derive(Debug, Clone, Copy)]
pub struct StandardMap {
    pub k: f64,
}

impl StandardMap {
    pub fn new(k: f64) -> Self {
        Self { k }
    }
}

impl<T: Real> MapSystem<T> for StandardMap {
    fn name(&self) -> &str {
        "standard"
    }
    fn space(&self) -> Space {
        Space::Torus2
    }
    fn forward(&self, x: Vec2<T>) -> Vec2<T> {
        let kk = T::lit(self.k) / T::TAU();
        let p = x[1] + kk * (T::TAU() * x[0]).sin();
        wrap([x[0] + p, p])
    }
    fn inverse(&self, y: Vec2<T>) -> Vec2<T> {
        let kk = T::lit(self.k) / T::TAU();
        let q = y[0] - y[1];
        let p = y[1] - kk * (T::TAU() * q).sin();
        wrap([q, p])
    }
    fn jacobian(&self, x: Vec2<T>) -> Mat2<T> {
        let c = T::lit(self.k) * (T::TAU() * x[0]).cos();
        Mat2::new(T::one() + c, T::one(), c, T::one())
    }
    fn parameters(&self) -> Vec<(String, f64)> {
        vec![("K".into(), self.k)]
    }
}

/// Linear map `x ↦ M x` of the plane (or of the torus when `M ∈ GL₂(ℤ)`).
#[derive(Debug, Clone)]
pub struct LinearMap<T> {
    name: String,
    space: Space,
    matrix: Mat2<T>,
    inverse: Mat2<T>,
}

impl<T: Real> LinearMap<T> {
    pub fn planar(name: &str, matrix: Mat2<T>) -> Self {
        let inverse = matrix.inverse().unwrap_or(Mat2::new(T::nan(), T::nan(), T::nan(), T::nan()));
        Self { name: name.into(), space: Space::Planar, matrix, inverse }
    }

    pub fn matrix(&self) -> Mat2<T> {
        self.matrix
    }
}

impl<T: Real> MapSystem<T> for LinearMap<T> {
    fn name(&self) -> &str {
        &self.name
    }
    fn space(&self) -> Space {
        self.space
    }
    fn forward(&self, x: Vec2<T>) -> Vec2<T> {
        self.space.canonical(self.matrix.apply(x))
    }
    fn inverse(&self, x: Vec2<T>) -> Vec2<T> {
        self.space.canonical(self.inverse.apply(x))
    }
    fn jacobian(&self, _x: Vec2<T>) -> Mat2<T> {
        self.matrix
    }
    fn parameters(&self) -> Vec<(String, f64)> {
        let m = self.matrix.m;
        ["a", "b", "c", "d"]
            .iter()
            .zip([m[0][0], m[0][1], m[1][0], m[1][1]])
            .map(|(n, v)| (n.to_string(), v.as_f64()))
            .collect()
    }
    fn is_affine(&self) -> bool {
        true
    }
}

/// Rigid rotation of the plane about the origin.
#[derive(Debug, Clone, Copy)]
pub struct Rotation {
    pub angle: f64,
}

impl Rotation {
    pub fn new(angle: f64) -> Self {
        Self { angle }
    }

    fn matrix<T: Real>(&self, sign: f64) -> Mat2<T> {
        let (s, c) = (sign * self.angle).sin_cos();
        Mat2::new(T::lit(c), T::lit(-s), T::lit(s), T::lit(c))
    }
}

impl<T: Real> MapSystem<T> for Rotation {
    fn name(&self) -> &str {
        "rotation"
    }
    fn space(&self) -> Space {
        Space::Planar
    }
    fn forward(&self, x: Vec2<T>) -> Vec2<T> {
        self.matrix(1.0).apply(x)
    }
    fn inverse(&self, x: Vec2<T>) -> Vec2<T> {
        self.matrix(-1.0).apply(x)
    }
    fn jacobian(&self, _x: Vec2<T>) -> Mat2<T> {
        self.matrix(1.0)
    }
    fn parameters(&self) -> Vec<(String, f64)> {
        vec![("angle".into(), self.angle)]
    }
    fn is_affine(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{iterate, Point, TAU_INV};
    use rand::{Rng, SeedableRng};

    fn maps() -> Vec<Box<dyn MapSystem<f64>>> {
        vec![
            Box::new(CatMap),
            Box::new(PerturbedCatMap::new(0.1)),
            Box::new(StandardMap::new(6.5)),
            Box::new(Rotation::new(0.3)),
        ]
    }

    #[test]
    fn inverse_composes_to_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for m in maps() {
            for _ in 0..200 {
                let x = Point::new(m.space(), [rng.gen::<f64>(), rng.gen::<f64>()]);
                let y = iterate(m.as_ref(), iterate(m.as_ref(), x, 1).unwrap(), -1).unwrap();
                assert!(m.space().max_distance(x.coords, y.coords) < TAU_INV, "{}", m.name());
                assert!(m.jacobian(x.coords).det().abs() > 1e-12);
            }
        }
    }

    #[test]
    fn conjugacy_of_iterates() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        // dyadic seeds keep the cat map exact
        let m = CatMap;
        for _ in 0..20 {
            let x = Point::torus(
                (rng.gen_range(0..1u64 << 50) as f64) / (1u64 << 50) as f64,
                (rng.gen_range(0..1u64 << 50) as f64) / (1u64 << 50) as f64,
            );
            let a = rng.gen_range(-100i64..=100);
            let b = rng.gen_range(-100i64..=100);
            let lhs = iterate::<f64>(&m, x, a + b).unwrap();
            let rhs = iterate(&m, iterate(&m, x, a).unwrap(), b).unwrap();
            assert!(MapSystem::<f64>::space(&m).max_distance(lhs.coords, rhs.coords) < TAU_INV);
        }
        // the rotation is an isometry, so composition error stays tiny
        let r = Rotation::new(0.9);
        let x = Point::planar(0.3, -0.2);
        let lhs = iterate::<f64>(&r, x, 150).unwrap();
        let rhs = iterate(&r, iterate(&r, x, 70).unwrap(), 80).unwrap();
        assert!(lhs.distance(&rhs) < TAU_INV);
    }

    #[test]
    fn standard_map_jacobian_matches_finite_differences() {
        let m = StandardMap::new(6.0);
        let x = [0.23, 0.61];
        let j = MapSystem::<f64>::jacobian(&m, x);
        let h = 1e-7;
        for c in 0..2 {
            let mut xp = x;
            xp[c] += h;
            let (a, b) = (m.forward(xp), m.forward(x));
            for r in 0..2 {
                let d = Space::Torus2.displacement(b, a)[r] / h;
                assert!((d - j.m[r][c]).abs() < 1e-5);
            }
        }
    }
}
