//! Phase spaces, maps, derivative cocycles, observables and reference
//! measures, plus orbit iteration and Birkhoff sums.

pub mod catalog;
pub mod observables;
pub mod reference;

use crate::error::{Error, Result};
use crate::linalg::{self, FactoredMatrix, Mat2, Vec2};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

pub use catalog::{CatMap, LinearMap, PerturbedCatMap, Rotation, StandardMap};
pub use observables::{FourierMode, Observable, TestFunctionFamily};
pub use reference::{Provenance, ReferenceMeasure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    /// `[0,1)²` with periodic identification.
    Torus2,
    Planar,
}

impl Space {
    /// Canonical representative of a coordinate pair.
    pub fn canonical<T: Real>(self, v: Vec2<T>) -> Vec2<T> {
        match self {
            Space::Planar => v,
            Space::Torus2 => [wrap_unit(v[0]), wrap_unit(v[1])],
        }
    }

    /// Displacement `b − a`, using the minimal image on the torus.
    pub fn displacement<T: Real>(self, a: Vec2<T>, b: Vec2<T>) -> Vec2<T> {
        let d = linalg::sub(b, a);
        match self {
            Space::Planar => d,
            Space::Torus2 => [d[0] - d[0].round(), d[1] - d[1].round()],
        }
    }

    pub fn distance<T: Real>(self, a: Vec2<T>, b: Vec2<T>) -> T {
        linalg::norm(self.displacement(a, b))
    }

    /// Max-norm distance, used for composition tolerances.
    pub fn max_distance<T: Real>(self, a: Vec2<T>, b: Vec2<T>) -> T {
        let d = self.displacement(a, b);
        d[0].abs().max(d[1].abs())
    }
}

fn wrap_unit<T: Real>(x: T) -> T {
    let r = x - x.floor();
    if r >= T::one() {
        T::zero()
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point<T> {
    pub coords: [T; 2],
    pub space: Space,
}

impl<T: Real> Point<T> {
    pub fn new(space: Space, coords: Vec2<T>) -> Self {
        Self { coords: space.canonical(coords), space }
    }

    pub fn torus(x: T, y: T) -> Self {
        Self::new(Space::Torus2, [x, y])
    }

    pub fn planar(x: T, y: T) -> Self {
        Self::new(Space::Planar, [x, y])
    }

    pub fn is_finite(&self) -> bool {
        self.coords[0].is_finite() && self.coords[1].is_finite()
    }

    pub fn distance(&self, other: &Self) -> T {
        self.space.distance(self.coords, other.coords)
    }

    pub fn offset(&self, v: Vec2<T>) -> Self {
        Self::new(self.space, linalg::add(self.coords, v))
    }
}

/// An invertible map of a flat two-dimensional phase space with evaluable
/// derivative. Implementations return nonfinite coordinates outside their
/// domain; callers turn that into [`Error::OrbitEscape`].
pub trait MapSystem<T: Real>: Send + Sync {
    fn name(&self) -> &str;
    fn space(&self) -> Space;
    fn forward(&self, x: Vec2<T>) -> Vec2<T>;
    fn inverse(&self, x: Vec2<T>) -> Vec2<T>;
    fn jacobian(&self, x: Vec2<T>) -> Mat2<T>;
    fn parameters(&self) -> Vec<(String, f64)> {
        Vec::new()
    }
    /// True when the map is affine on every connected piece of its domain,
    /// so that `f^j(z + w) = f^j(z) + Df^j(z) w` along branches.
    fn is_affine(&self) -> bool {
        false
    }
}

impl<T: Real, M: MapSystem<T> + ?Sized> MapSystem<T> for Box<M> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn space(&self) -> Space {
        (**self).space()
    }
    fn forward(&self, x: Vec2<T>) -> Vec2<T> {
        (**self).forward(x)
    }
    fn inverse(&self, x: Vec2<T>) -> Vec2<T> {
        (**self).inverse(x)
    }
    fn jacobian(&self, x: Vec2<T>) -> Mat2<T> {
        (**self).jacobian(x)
    }
    fn parameters(&self) -> Vec<(String, f64)> {
        (**self).parameters()
    }
    fn is_affine(&self) -> bool {
        (**self).is_affine()
    }
}

/// Composition tolerance for `inverse(forward(x)) = x`, max-norm.
pub const TAU_INV: f64 = 1e-9;

/// `f^n(x)`; negative `n` iterates the inverse.
pub fn iterate<T: Real>(map: &dyn MapSystem<T>, x: Point<T>, n: i64) -> Result<Point<T>> {
    let space = map.space();
    let mut c = x.coords;
    for k in 1..=n.unsigned_abs() {
        c = if n > 0 { map.forward(c) } else { map.inverse(c) };
        if !(c[0].is_finite() && c[1].is_finite()) {
            return Err(Error::OrbitEscape { step: k as i64 * n.signum() });
        }
    }
    Ok(Point::new(space, c))
}

/// `[x, f(x), …, f^n(x)]`, or the inverse orbit for negative `n`.
pub fn orbit<T: Real>(map: &dyn MapSystem<T>, x: Point<T>, n: i64) -> Result<Vec<Point<T>>> {
    let mut out = Vec::with_capacity(n.unsigned_abs() as usize + 1);
    out.push(x);
    let mut c = x.coords;
    for k in 1..=n.unsigned_abs() {
        c = if n > 0 { map.forward(c) } else { map.inverse(c) };
        if !(c[0].is_finite() && c[1].is_finite()) {
            return Err(Error::OrbitEscape { step: k as i64 * n.signum() });
        }
        out.push(Point { coords: c, space: x.space });
    }
    Ok(out)
}

/// `Df^n(x) = Df(f^{n−1}x)···Df(x)` in factored form.
pub fn cocycle<T: Real>(map: &dyn MapSystem<T>, x: Point<T>, n: usize) -> Result<FactoredMatrix<T>> {
    if n == 0 {
        return Err(Error::InvalidInput("cocycle length must be at least 1".into()));
    }
    let mut acc = FactoredMatrix::identity();
    let mut c = x.coords;
    for k in 0..n {
        if !(c[0].is_finite() && c[1].is_finite()) {
            return Err(Error::OrbitEscape { step: k as i64 });
        }
        acc.push(&map.jacobian(c)).ok_or(Error::DegenerateCocycle { step: k })?;
        if k + 1 < n {
            c = map.forward(c);
        }
    }
    Ok(acc)
}

/// Finite-time exponents `(χ⁺_n, χ⁻_n)`: log singular values of `Df^n_x`
/// divided by `n`.
pub fn finite_time_exponents<T: Real>(map: &dyn MapSystem<T>, x: Point<T>, n: usize) -> Result<(T, T)> {
    let c = cocycle(map, x, n)?;
    let [a, b] = c.log_singular_values();
    let nn = T::from_usize(n).unwrap();
    Ok((a / nn, b / nn))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Splitting<T> {
    pub stable: Vec2<T>,
    pub unstable: Vec2<T>,
    pub angle: T,
}

/// Generic seed direction for push-forward / pull-back.
pub(crate) fn seed_direction<T: Real>() -> Vec2<T> {
    linalg::normalize([T::lit(0.8191520442889918), T::lit(0.5735764363510462)]).0
}

/// Pushes a vector forward along a stored orbit `pts[0..=n]`, returning the
/// unit direction at `pts[n]` and the per-step log growth factors.
pub(crate) fn push_forward<T: Real>(
    map: &dyn MapSystem<T>,
    pts: &[Point<T>],
    v0: Vec2<T>,
) -> Result<(Vec2<T>, Vec<T>)> {
    let mut v = v0;
    let mut logs = Vec::with_capacity(pts.len().saturating_sub(1));
    for (k, p) in pts[..pts.len() - 1].iter().enumerate() {
        let j = map.jacobian(p.coords);
        if !j.is_finite() || j.det() == T::zero() {
            return Err(Error::DegenerateCocycle { step: k });
        }
        let (u, n) = linalg::normalize(j.apply(v));
        logs.push(n.ln());
        v = u;
    }
    Ok((v, logs))
}

/// Pulls a vector back from `pts[n]` to `pts[0]` along a stored forward
/// orbit using `Df^{-1}(f^{k+1}x) = Df(f^k x)^{-1}`. `logs[k]` is the growth
/// of the step landing at `pts[k]`.
pub(crate) fn pull_back<T: Real>(
    map: &dyn MapSystem<T>,
    pts: &[Point<T>],
    v0: Vec2<T>,
) -> Result<(Vec2<T>, Vec<T>)> {
    let n = pts.len() - 1;
    let mut v = v0;
    let mut logs = vec![T::zero(); n];
    for k in (0..n).rev() {
        let j = map
            .jacobian(pts[k].coords)
            .inverse()
            .ok_or(Error::DegenerateCocycle { step: k })?;
        let (u, g) = linalg::normalize(j.apply(v));
        logs[k] = g.ln();
        v = u;
    }
    Ok((v, logs))
}

/// Stable/unstable direction estimate at `x`: the unstable vector is pushed
/// forward from `f^{-n_back}x`, the stable vector pulled back from
/// `f^{n_fwd}x`.
pub fn oseledec_splitting_estimate<T: Real>(
    map: &dyn MapSystem<T>,
    x: Point<T>,
    n_back: usize,
    n_fwd: usize,
) -> Result<Splitting<T>> {
    let mut back = orbit(map, x, -(n_back as i64))?;
    back.reverse();
    let (e_u, _) = push_forward(map, &back, seed_direction())?;
    let fwd = orbit(map, x, n_fwd as i64)?;
    let (e_s, _) = pull_back(map, &fwd, seed_direction())?;
    let e_u = orient(e_u);
    let e_s = orient(e_s);
    let angle = linalg::line_angle(e_s, e_u);
    if angle.as_f64() < 1e-6 {
        return Err(Error::SplittingDegenerate { angle: angle.as_f64() });
    }
    Ok(Splitting { stable: e_s, unstable: e_u, angle })
}

/// Sign convention for direction vectors: first nonzero component positive.
pub(crate) fn orient<T: Real>(v: Vec2<T>) -> Vec2<T> {
    if v[0] < T::zero() || (v[0] == T::zero() && v[1] < T::zero()) {
        [-v[0], -v[1]]
    } else {
        v
    }
}

/// Unnormalized Birkhoff sum `Σ_{j<n} φ(f^j x)`.
pub fn birkhoff_sum<T: Real, F>(map: &dyn MapSystem<T>, x: Point<T>, n: usize, phi: F) -> Result<T>
where
    F: Fn(&Point<T>) -> T,
{
    let mut sum = T::zero();
    let mut p = x;
    for j in 0..n {
        if !p.is_finite() {
            return Err(Error::OrbitEscape { step: j as i64 });
        }
        sum = sum + phi(&p);
        if j + 1 < n {
            p = Point { coords: map.forward(p.coords), space: p.space };
        }
    }
    Ok(sum)
}

/// Birkhoff sums of every function of a family at once.
pub fn birkhoff_sums<T: Real>(
    map: &dyn MapSystem<T>,
    x: Point<T>,
    n: usize,
    family: &TestFunctionFamily<T>,
    s: usize,
) -> Result<Vec<T>> {
    let mut sums = vec![T::zero(); s];
    let mut p = x;
    for j in 0..n {
        if !p.is_finite() {
            return Err(Error::OrbitEscape { step: j as i64 });
        }
        for (acc, f) in sums.iter_mut().zip(&family.functions[..s]) {
            *acc = *acc + f.eval(&p);
        }
        if j + 1 < n {
            p = Point { coords: map.forward(p.coords), space: p.space };
        }
    }
    Ok(sums)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat() -> CatMap {
        CatMap
    }

    #[test]
    fn iterate_examples() {
        let m = cat();
        let o = iterate::<f64>(&m, Point::torus(0.0, 0.0), 5).unwrap();
        assert_eq!(o.coords, [0.0, 0.0]);
        let x = Point::torus(0.1, 0.2);
        assert_eq!(iterate(&m, x, 0).unwrap(), x);
        let y: Point<f64> = iterate(&m, x, 1).unwrap();
        assert!((y.coords[0] - 0.4).abs() < 1e-15 && (y.coords[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn escape_reports_step() {
        let m = LinearMap::planar("blowup", Mat2::diag(1e200, 1e-200));
        match iterate::<f64>(&m, Point::planar(1e200, 1.0), 3) {
            Err(Error::OrbitEscape { step }) => assert_eq!(step, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cocycle_examples() {
        let m = cat();
        let c = cocycle::<f64>(&m, Point::torus(0.3, 0.7), 2).unwrap().to_matrix();
        let want = [[5.0, 3.0], [3.0, 2.0]];
        for r in 0..2 {
            for k in 0..2 {
                assert!((c.m[r][k] - want[r][k]).abs() < 1e-12);
            }
        }
        let d = LinearMap::planar("diag", Mat2::diag(0.25, 4.0));
        let c = cocycle::<f64>(&d, Point::planar(0.1, 0.1), 3).unwrap().to_matrix();
        assert!((c.m[0][0] - 1.0 / 64.0).abs() < 1e-15 && (c.m[1][1] - 64.0).abs() < 1e-12);
        assert!(c.m[0][1].abs() < 1e-15 && c.m[1][0].abs() < 1e-15);
        let p = Point::torus(0.21, 0.4);
        let j = PerturbedCatMap::new(0.05).jacobian(p.coords);
        let c1 = cocycle::<f64>(&PerturbedCatMap::new(0.05), p, 1).unwrap().to_matrix();
        assert!((c1.m[0][1] - j.m[0][1]).abs() < 1e-14);
    }

    #[test]
    fn degenerate_cocycle() {
        let m = LinearMap::planar("proj", Mat2::new(1.0, 0.0, 0.0, 0.0));
        assert!(matches!(
            cocycle::<f64>(&m, Point::planar(0.0, 0.0), 2),
            Err(Error::DegenerateCocycle { step: 0 })
        ));
    }

    #[test]
    fn exponent_examples() {
        let lam = ((3.0 + 5f64.sqrt()) / 2.0).ln();
        let (a, b) = finite_time_exponents::<f64>(&cat(), Point::torus(0.123, 0.456), 50).unwrap();
        assert!((a - lam).abs() < 1e-3 && (b + lam).abs() < 1e-3);
        let rot = Rotation::new(0.7);
        let (a, b) = finite_time_exponents::<f64>(&rot, Point::planar(0.3, 0.1), 100).unwrap();
        assert!(a.abs() < 1e-2 && b.abs() < 1e-2);
        let d = LinearMap::planar("diag", Mat2::diag(0.25, 4.0));
        let (a, b) = finite_time_exponents::<f64>(&d, Point::planar(0.0, 0.0), 7).unwrap();
        assert!((a - 4f64.ln()).abs() < 1e-14 && (b + 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn exponents_in_single_precision() {
        let (a, b) = finite_time_exponents::<f32>(&cat(), Point::torus(0.2, 0.3), 50).unwrap();
        let lam = ((3.0 + 5f32.sqrt()) / 2.0).ln();
        assert!((a - lam).abs() < 1e-3 && (b + lam).abs() < 1e-3);
    }

    #[test]
    fn exponent_sum_matches_determinant() {
        let m = PerturbedCatMap::new(0.08);
        let x = Point::torus(0.31, 0.77);
        for n in [1usize, 5, 40] {
            let (a, b) = finite_time_exponents::<f64>(&m, x, n).unwrap();
            let c = cocycle(&m, x, n).unwrap();
            assert!(a >= b);
            assert!((a + b - c.log_abs_det() / n as f64).abs() < 1e-8);
        }
    }

    #[test]
    fn splitting_examples() {
        let s = oseledec_splitting_estimate::<f64>(&cat(), Point::torus(0.3, 0.4), 30, 30).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let eu = linalg::normalize([phi, 1.0]).0;
        let es = linalg::normalize([1.0, -phi]).0;
        assert!(linalg::line_angle(s.unstable, eu) < 1e-6);
        assert!(linalg::line_angle(s.stable, es) < 1e-6);
        assert!((s.angle - std::f64::consts::FRAC_PI_2).abs() < 1e-6);

        let d = LinearMap::planar("diag", Mat2::diag(0.25, 4.0));
        let s = oseledec_splitting_estimate::<f64>(&d, Point::planar(0.0, 0.0), 40, 40).unwrap();
        assert!(s.unstable[0].abs() < 1e-30 && s.unstable[1] == 1.0);
        assert!(s.stable[1].abs() < 1e-30 && s.stable[0] == 1.0);
    }

    #[test]
    fn perturbed_splitting_close_to_long_horizon_oracle() {
        let m = PerturbedCatMap::new(0.05);
        for &(x, y) in &[(0.12, 0.34), (0.5, 0.9), (0.77, 0.05)] {
            let p = Point::torus(x, y);
            let s = oseledec_splitting_estimate::<f64>(&m, p, 30, 30).unwrap();
            let oracle = oseledec_splitting_estimate::<f64>(&m, p, 200, 200).unwrap();
            assert!(linalg::line_angle(s.stable, oracle.stable) < 1e-8);
            assert!(linalg::line_angle(s.unstable, oracle.unstable) < 1e-8);
            assert!((s.angle - std::f64::consts::FRAC_PI_2).abs() < 0.2);
        }
    }

    #[test]
    fn birkhoff_examples() {
        let m = cat();
        let c = birkhoff_sum::<f64, _>(&m, Point::torus(0.3, 0.3), 7, |_| 2.5).unwrap();
        assert_eq!(c, 17.5);
        let phi = |p: &Point<f64>| (2.0 * std::f64::consts::PI * p.coords[0]).cos();
        assert_eq!(birkhoff_sum(&m, Point::torus(0.0, 0.0), 10, phi).unwrap(), 10.0);
        let s = birkhoff_sum(&m, Point::torus(0.1, 0.2), 3, phi).unwrap();
        let tp = 2.0 * std::f64::consts::PI;
        // orbit (0.1,0.2) → (0.4,0.3) → (0.1,0.7)
        let want = (tp * 0.1).cos() + (tp * 0.4).cos() + (tp * 0.1).cos();
        assert!((s - want).abs() < 1e-12);
    }
}
