//! Two-branch piecewise-affine horseshoe with known itineraries.
//!
//! The rectangle is the square `c + σ[−1,1]²` with `c = (0, 1/4)` and chart
//! axes along `x` (stable, contraction 1/4) and `y` (unstable, expansion 4).
//! Branch 1 returns after two steps through a box near `c + (1/2, 0)`;
//! branch 2 returns after three steps through boxes near `c + (t, 0)` and
//! `c + (2t, 0)` with `t` a dyadic approximation of 1/3. With these anchors
//! the low Fourier modes average to (nearly) zero along each branch, so the
//! horseshoe is quasi-generic for Lebesgue integrals.
//!
//! All constants are dyadic, so for `σ = 2⁻ᵏ` every orbit started on a
//! dyadic chart point is computed exactly in `f64`.

use crate::dynsys::{MapSystem, Point, Space};
use crate::branches::certify_branch;
use crate::dynsys::{ReferenceMeasure, TestFunctionFamily};
use crate::error::Result;
use crate::horseshoe::{build, VariableTimeHorseshoe};
use crate::pesin::ConeField;
use crate::linalg::{Mat2, Vec2};
use crate::pesin::Rectangle;
use crate::scalar::Real;

pub const CENTER: [f64; 2] = [0.0, 0.25];
/// Dyadic stand-in for 1/3 (`21845 / 2¹⁶`).
pub const THIRD: f64 = 21845.0 / 65536.0;
/// Stable-chart centres of the target cylinders `U_i`.
pub const TARGET_U: [f64; 2] = [-5.0 / 16.0, 5.0 / 16.0];
/// Unstable-chart centres of the source cylinders `S_i`.
pub const SOURCE_V: [f64; 2] = [-5.0 / 16.0, 5.0 / 16.0];
pub const RETURN_TIMES: [usize; 2] = [2, 3];
pub const CONTRACTION: f64 = 0.25;
pub const EXPANSION: f64 = 4.0;

// domain margins of the pieces, in chart units
const U_REACH: f64 = 9.0 / 8.0;
const V_MARGIN: f64 = 1.0 / 32.0;
const BOX_U: f64 = 9.0 / 32.0;
const BOX_V: f64 = 9.0 / 8.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFixture {
    pub sigma: f64,
}

impl AffineFixture {
    /// `sigma` must be a power of two no larger than `2⁻⁴`.
    pub fn new(sigma: f64) -> Self {
        debug_assert!(sigma > 0.0 && sigma <= 1.0 / 16.0 && sigma.log2().fract() == 0.0);
        Self { sigma }
    }

    /// Largest `σ = 2⁻ᵏ` for which the rectangle-sized branch pieces have
    /// diameter at most `delta`.
    pub fn for_delta(delta: f64) -> Self {
        let piece = (4.0f64 + 0.25).sqrt();
        let mut sigma = 1.0 / 16.0;
        while sigma * piece > delta && sigma > 1e-12 {
            sigma *= 0.5;
        }
        Self::new(sigma)
    }

    /// Intermediate anchors for each branch (excluding the rectangle centre).
    pub fn anchors(&self) -> [Vec<[f64; 2]>; 2] {
        let c = CENTER;
        [
            vec![[c[0] + 0.5, c[1]]],
            vec![[c[0] + THIRD, c[1]], [c[0] + 2.0 * THIRD, c[1]]],
        ]
    }

    pub fn rectangle<T: Real>(&self) -> Result<Rectangle<T>> {
        Rectangle::new(
            Point::planar(T::lit(CENTER[0]), T::lit(CENTER[1])),
            T::one(),
            [[T::one(), T::zero()], [T::zero(), T::one()]],
            T::lit(self.sigma),
            T::one(),
        )
    }

    /// Points `z_i = c(0, b_i)` with `f^{m_i}(z_i) = c(a_i, 0)` in the core.
    pub fn marked_points<T: Real>(&self) -> [Point<T>; 2] {
        SOURCE_V.map(|b| Point::planar(T::lit(CENTER[0]), T::lit(CENTER[1] + self.sigma * b)))
    }

    /// Certifies both branches through the marked points and assembles
    /// the horseshoe.
    pub fn horseshoe<T: Real>(
        &self,
        family: &TestFunctionFamily<T>,
        mu_ref: &ReferenceMeasure<T>,
        rho: T,
        s: usize,
        gamma: T,
    ) -> Result<VariableTimeHorseshoe<T>> {
        let rect = self.rectangle::<T>()?;
        let cones = ConeField::new(rect.clone(), gamma)?;
        let branches = self
            .marked_points::<T>()
            .into_iter()
            .zip(RETURN_TIMES)
            .map(|(z, m)| certify_branch(self, &rect, &cones, z, m, family, mu_ref, rho, s))
            .collect::<Result<Vec<_>>>()?;
        build(branches, rect)
    }

    fn local<T: Real>(&self, p: Vec2<T>, anchor: [f64; 2]) -> Vec2<T> {
        let s = T::lit(self.sigma);
        [(p[0] - T::lit(anchor[0])) / s, (p[1] - T::lit(anchor[1])) / s]
    }

    fn global<T: Real>(&self, l: Vec2<T>, anchor: [f64; 2]) -> Vec2<T> {
        let s = T::lit(self.sigma);
        [T::lit(anchor[0]) + s * l[0], T::lit(anchor[1]) + s * l[1]]
    }

    fn in_source<T: Real>(l: Vec2<T>, i: usize) -> bool {
        let b = T::lit(SOURCE_V[i]);
        l[0].abs() <= T::lit(U_REACH) && (l[1] - b).abs() <= T::lit(0.25 + V_MARGIN)
    }

    fn in_box<T: Real>(l: Vec2<T>, i: usize) -> bool {
        (l[0] - T::lit(TARGET_U[i])).abs() <= T::lit(BOX_U) && l[1].abs() <= T::lit(BOX_V)
    }

    /// The piece containing `p`: `Some((branch, step))` where step 0 is the
    /// source band at the centre.
    fn piece<T: Real>(&self, p: Vec2<T>) -> Option<(usize, usize)> {
        let l = self.local(p, CENTER);
        for i in 0..2 {
            if Self::in_source(l, i) {
                return Some((i, 0));
            }
        }
        let [a1, a2] = self.anchors();
        if Self::in_box(self.local(p, a1[0]), 0) {
            return Some((0, 1));
        }
        for (k, a) in a2.iter().enumerate() {
            if Self::in_box(self.local(p, *a), 1) {
                return Some((1, k + 1));
            }
        }
        None
    }

    fn step_anchor(&self, branch: usize, step: usize) -> [f64; 2] {
        if step == 0 {
            CENTER
        } else {
            self.anchors()[branch][step - 1]
        }
    }
}

impl<T: Real> MapSystem<T> for AffineFixture {
    fn name(&self) -> &str {
        "affine-fixture"
    }
    fn space(&self) -> Space {
        Space::Planar
    }
    fn forward(&self, p: Vec2<T>) -> Vec2<T> {
        let Some((i, step)) = self.piece(p) else {
            return [T::nan(), T::nan()];
        };
        let from = self.step_anchor(i, step);
        let l = self.local(p, from);
        let to = if step + 1 == RETURN_TIMES[i] { CENTER } else { self.step_anchor(i, step + 1) };
        let l = if step == 0 {
            [T::lit(TARGET_U[i]) + l[0] * T::lit(CONTRACTION), (l[1] - T::lit(SOURCE_V[i])) * T::lit(EXPANSION)]
        } else {
            l
        };
        self.global(l, to)
    }
    fn inverse(&self, q: Vec2<T>) -> Vec2<T> {
        let lc = self.local(q, CENTER);
        for i in 0..2 {
            if Self::in_box(lc, i) {
                let from = self.step_anchor(i, RETURN_TIMES[i] - 1);
                return self.global(lc, from);
            }
        }
        for i in 0..2 {
            for step in 1..RETURN_TIMES[i] {
                let l = self.local(q, self.step_anchor(i, step));
                if Self::in_box(l, i) {
                    if step == 1 {
                        let u = (l[0] - T::lit(TARGET_U[i])) / T::lit(CONTRACTION);
                        let v = l[1] / T::lit(EXPANSION) + T::lit(SOURCE_V[i]);
                        return self.global([u, v], CENTER);
                    }
                    return self.global(l, self.step_anchor(i, step - 1));
                }
            }
        }
        [T::nan(), T::nan()]
    }
    fn jacobian(&self, p: Vec2<T>) -> Mat2<T> {
        match self.piece(p) {
            Some((_, 0)) => Mat2::diag(T::lit(CONTRACTION), T::lit(EXPANSION)),
            Some(_) => Mat2::identity(),
            None => Mat2::new(T::nan(), T::nan(), T::nan(), T::nan()),
        }
    }
    fn parameters(&self) -> Vec<(String, f64)> {
        vec![("sigma".into(), self.sigma), ("third".into(), THIRD)]
    }
    fn is_affine(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{iterate, orbit};

    #[test]
    fn marked_points_return_on_schedule() {
        let fx = AffineFixture::new(2f64.powi(-9));
        let rect = fx.rectangle::<f64>().unwrap();
        for (i, z) in fx.marked_points::<f64>().into_iter().enumerate() {
            let pts = orbit(&fx, z, RETURN_TIMES[i] as i64).unwrap();
            let last = pts.last().unwrap();
            let uv = rect.to_chart(last);
            assert_eq!(uv, [TARGET_U[i], 0.0]);
            for p in &pts[1..RETURN_TIMES[i]] {
                assert!(!rect.in_core(p));
            }
        }
    }

    #[test]
    fn inverse_undoes_forward_exactly() {
        let fx = AffineFixture::new(2f64.powi(-9));
        let rect = fx.rectangle::<f64>().unwrap();
        for uv in [[0.5, -0.4], [-1.0, 0.3], [0.75, 0.5625], [0.0, -0.0625]] {
            let p = rect.from_chart(uv);
            let q = MapSystem::<f64>::forward(&fx, p.coords);
            assert_eq!(MapSystem::<f64>::inverse(&fx, q), p.coords);
        }
        let y = iterate(&fx, rect.from_chart([0.25, 0.25]), -3).unwrap();
        assert_eq!(iterate(&fx, y, 3).unwrap(), rect.from_chart([0.25, 0.25]));
    }

    #[test]
    fn outside_pieces_escape() {
        let fx = AffineFixture::new(2f64.powi(-9));
        assert!(iterate::<f64>(&fx, Point::planar(0.9, 0.9), 1).is_err());
        // the gap between the source bands is not in the domain
        let rect = fx.rectangle::<f64>().unwrap();
        assert!(iterate::<f64>(&fx, rect.from_chart([0.0, 0.0]), 1).is_err());
    }

    #[test]
    fn scale_follows_delta() {
        assert_eq!(AffineFixture::for_delta(0.099 / (4.0 * std::f64::consts::PI * 2f64.sqrt())).sigma, 2f64.powi(-9));
        assert_eq!(AffineFixture::for_delta(1.0).sigma, 1.0 / 16.0);
    }
}
