//! 2-vectors, 2×2 matrices and the norm-stabilized factored product used for
//! long derivative cocycles.

use crate::scalar::Real;
use serde::{Deserialize, Serialize};

pub type Vec2<T> = [T; 2];

pub fn dot<T: Real>(a: Vec2<T>, b: Vec2<T>) -> T {
    a[0] * b[0] + a[1] * b[1]
}

pub fn norm<T: Real>(a: Vec2<T>) -> T {
    a[0].hypot(a[1])
}

pub fn scale<T: Real>(a: Vec2<T>, s: T) -> Vec2<T> {
    [a[0] * s, a[1] * s]
}

pub fn add<T: Real>(a: Vec2<T>, b: Vec2<T>) -> Vec2<T> {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn sub<T: Real>(a: Vec2<T>, b: Vec2<T>) -> Vec2<T> {
    [a[0] - b[0], a[1] - b[1]]
}

/// Returns `(a / |a|, |a|)`.
pub fn normalize<T: Real>(a: Vec2<T>) -> (Vec2<T>, T) {
    let n = norm(a);
    ([a[0] / n, a[1] / n], n)
}

/// Angle in `[0, π/2]` between the lines spanned by `a` and `b`.
pub fn line_angle<T: Real>(a: Vec2<T>, b: Vec2<T>) -> T {
    let cross = (a[0] * b[1] - a[1] * b[0]).abs();
    let d = dot(a, b).abs();
    cross.atan2(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2<T> {
    pub m: [[T; 2]; 2],
}

impl<T: Real> Mat2<T> {
    pub fn new(a: T, b: T, c: T, d: T) -> Self {
        Self { m: [[a, b], [c, d]] }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::one())
    }

    pub fn diag(a: T, d: T) -> Self {
        Self::new(a, T::zero(), T::zero(), d)
    }

    /// Matrix whose columns are `c0` and `c1`.
    pub fn from_columns(c0: Vec2<T>, c1: Vec2<T>) -> Self {
        Self::new(c0[0], c1[0], c0[1], c1[1])
    }

    pub fn column(&self, j: usize) -> Vec2<T> {
        [self.m[0][j], self.m[1][j]]
    }

    pub fn det(&self) -> T {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.m[0][0], self.m[1][0], self.m[0][1], self.m[1][1])
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == T::zero() || !d.is_finite() {
            return None;
        }
        Some(Self::new(
            self.m[1][1] / d,
            -self.m[0][1] / d,
            -self.m[1][0] / d,
            self.m[0][0] / d,
        ))
    }

    pub fn mul(&self, o: &Self) -> Self {
        let a = &self.m;
        let b = &o.m;
        Self::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }

    pub fn apply(&self, v: Vec2<T>) -> Vec2<T> {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1],
            self.m[1][0] * v[0] + self.m[1][1] * v[1],
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.m.iter().flatten().fold(T::zero(), |acc, x| acc.max(x.abs()))
    }
}

/// Product of many 2×2 matrices held as `Q · D · U` with `Q` orthogonal,
/// `D = diag(s₀·e^{l₀}, s₁·e^{l₁})` kept in log form and `U` unit upper
/// triangular. Never overflows while the individual factors are finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactoredMatrix<T> {
    pub q: Mat2<T>,
    pub log_diag: [T; 2],
    pub sign_diag: [T; 2],
    pub upper: T,
    pub steps: usize,
}

impl<T: Real> FactoredMatrix<T> {
    pub fn identity() -> Self {
        Self {
            q: Mat2::identity(),
            log_diag: [T::zero(); 2],
            sign_diag: [T::one(); 2],
            upper: T::zero(),
            steps: 0,
        }
    }

    /// Left-multiplies the accumulated product by `j`. Returns `None` when
    /// `j` is singular or nonfinite.
    pub fn push(&mut self, j: &Mat2<T>) -> Option<()> {
        if !j.is_finite() || j.det() == T::zero() {
            return None;
        }
        let b = j.mul(&self.q);
        // Givens QR of b: b = q' r'
        let (c0, r00) = normalize(b.column(0));
        if r00 == T::zero() {
            return None;
        }
        let q1 = [-c0[1], c0[0]];
        let col1 = b.column(1);
        let r01 = dot(c0, col1);
        let r11 = dot(q1, col1);
        if r11 == T::zero() || !r11.is_finite() {
            return None;
        }
        // new upper entry: u + (r01/r00) · (d1/d0)
        let ratio = (self.log_diag[1] - self.log_diag[0]).exp() * self.sign_diag[1] * self.sign_diag[0];
        self.upper = self.upper + (r01 / r00) * ratio;
        self.log_diag[0] = self.log_diag[0] + r00.ln();
        self.log_diag[1] = self.log_diag[1] + r11.abs().ln();
        if r11 < T::zero() {
            self.sign_diag[1] = -self.sign_diag[1];
        }
        self.q = Mat2::from_columns(c0, q1);
        self.steps += 1;
        Some(())
    }

    /// Explicit matrix. Overflows when the accumulated growth exceeds the
    /// scalar range; use [`Self::apply_direction`] for long products.
    pub fn to_matrix(&self) -> Mat2<T> {
        let d0 = self.sign_diag[0] * self.log_diag[0].exp();
        let d1 = self.sign_diag[1] * self.log_diag[1].exp();
        let du = Mat2::new(d0, d0 * self.upper, T::zero(), d1);
        self.q.mul(&du)
    }

    /// `log‖M v‖` and the unit direction of `M v`, computed without forming `M`.
    pub fn apply_log(&self, v: Vec2<T>) -> (T, Vec2<T>) {
        let w = [v[0] + self.upper * v[1], v[1]];
        let (l0, l1) = (self.log_diag[0], self.log_diag[1]);
        let top = l0.max(l1);
        let x = self.sign_diag[0] * (l0 - top).exp() * w[0];
        let y = self.sign_diag[1] * (l1 - top).exp() * w[1];
        let out = self.q.apply([x, y]);
        let (dir, n) = normalize(out);
        (top + n.ln(), dir)
    }

    /// `M v` as an actual vector (finite whenever the result is).
    pub fn apply(&self, v: Vec2<T>) -> Vec2<T> {
        let (ln, dir) = self.apply_log(v);
        if ln == T::neg_infinity() {
            return [T::zero(); 2];
        }
        scale(dir, ln.exp())
    }

    /// Unit direction of `M⁻¹ v`.
    pub fn apply_inverse_direction(&self, v: Vec2<T>) -> Vec2<T> {
        let w = self.q.transpose().apply(v);
        let (l0, l1) = (-self.log_diag[0], -self.log_diag[1]);
        let top = l0.max(l1);
        let y = self.sign_diag[1] * (l1 - top).exp() * w[1];
        let x = self.sign_diag[0] * (l0 - top).exp() * w[0];
        normalize([x - self.upper * y, y]).0
    }

    /// Logs of the two singular values, larger first.
    pub fn log_singular_values(&self) -> [T; 2] {
        let (l0, l1) = (self.log_diag[0], self.log_diag[1]);
        let top = l0.max(l1);
        let a = (l0 - top).exp();
        let b = a * self.upper;
        let c = (l1 - top).exp();
        // singular values of [[a, b], [0, c]]
        let fro2 = a * a + b * b + c * c;
        let det = (a * c).abs();
        let disc = (fro2 * fro2 - T::lit(4.0) * det * det).max(T::zero()).sqrt();
        let s_max = ((fro2 + disc) / T::lit(2.0)).sqrt();
        let log_max = top + s_max.ln();
        let log_det = l0 + l1;
        [log_max, log_det - log_max]
    }

    pub fn log_abs_det(&self) -> T {
        self.log_diag[0] + self.log_diag[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factored_product_matches_direct_product() {
        let a = Mat2::<f64>::new(2.0, 1.0, 1.0, 1.0);
        let b = Mat2::new(0.5, -0.3, 0.2, 1.7);
        let mut f = FactoredMatrix::identity();
        let mut direct = Mat2::identity();
        for k in 0..12 {
            let j = if k % 3 == 0 { b } else { a };
            f.push(&j).unwrap();
            direct = j.mul(&direct);
        }
        let m = f.to_matrix();
        for r in 0..2 {
            for c in 0..2 {
                let rel = (m.m[r][c] - direct.m[r][c]).abs() / direct.max_abs();
                assert!(rel < 1e-12, "{m:?} vs {direct:?}");
            }
        }
    }

    #[test]
    fn long_product_stays_finite() {
        let a = Mat2::new(2.0, 1.0, 1.0, 1.0);
        let mut f = FactoredMatrix::<f64>::identity();
        for _ in 0..10_000 {
            f.push(&a).unwrap();
        }
        let [s0, s1] = f.log_singular_values();
        let lam = ((3.0 + 5f64.sqrt()) / 2.0).ln();
        assert!((s0 / 10_000.0 - lam).abs() < 1e-9);
        assert!((s1 / 10_000.0 + lam).abs() < 1e-9);
        let (ln, dir) = f.apply_log([1.0, 0.0]);
        assert!(ln.is_finite() && dir[0].is_finite());
    }

    #[test]
    fn singular_matrix_rejected() {
        let mut f = FactoredMatrix::<f64>::identity();
        assert!(f.push(&Mat2::new(1.0, 2.0, 2.0, 4.0)).is_none());
    }
}
