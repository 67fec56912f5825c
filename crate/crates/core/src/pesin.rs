//! Finite-horizon Pesin certificates, rectangles, cone fields and admissible
//! cylinders.

use crate::dynsys::{self, orient, orbit, MapSystem, Point, Space, Splitting};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat2, Vec2};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

/// Largest Pesin constant accepted before giving up.
pub const MAX_ELL: f64 = 1e6;
/// Resolution of the reported Pesin constant.
pub const ELL_RESOLUTION: f64 = 1e-3;
/// Extra horizon used to converge the splitting beyond the certified window.
pub const SPLITTING_HORIZON: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PesinCertificate<T> {
    pub base_point: Point<T>,
    pub horizon: usize,
    pub rate: T,
    pub ell: T,
    pub splitting: Splitting<T>,
}

impl<T: Real> PesinCertificate<T> {
    pub fn angle(&self) -> T {
        self.splitting.angle
    }

    /// Membership in the desk-scale Pesin set `Λ_{χ,ℓ₀}`.
    pub fn within(&self, ell0: T) -> bool {
        self.ell <= ell0
    }
}

fn cumulative(logs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out = vec![0.0];
    let mut acc = 0.0;
    for l in logs {
        acc += l;
        out.push(acc);
    }
    out
}

/// Smallest `ℓ ≥ 1` (on a `10⁻³` grid) such that over `0 ≤ k ≤ n`
/// `‖Df^k e_s‖, ‖Df^{−k} e_u‖ ≤ ℓe^{−kχ}`,
/// `‖Df^{−k} e_s‖, ‖Df^k e_u‖ ≥ ℓ⁻¹e^{kχ}` and `∠(e_s, e_u) ≥ ℓ⁻¹`.
///
/// Norms are accumulated from the numerically stable direction of travel
/// (stable vectors pulled back, unstable vectors pushed forward).
pub fn pesin_certificate<T: Real>(
    map: &dyn MapSystem<T>,
    x: Point<T>,
    n: usize,
    chi: T,
) -> Result<PesinCertificate<T>> {
    if n == 0 || chi <= T::zero() {
        return Err(Error::InvalidInput("pesin certificate needs n ≥ 1 and χ > 0".into()));
    }
    let total = n + SPLITTING_HORIZON;
    let fwd = orbit(map, x, total as i64)?;
    let mut back = orbit(map, x, -(total as i64))?;
    back.reverse();

    // e_s(f^k x) for k ≤ n by pull-back from f^{total} x.
    let (e_s, s_logs) = dynsys::pull_back(map, &fwd, dynsys::seed_direction())?;
    // ‖Df^k e_s‖ = Π_{j<k} 1/g_j where g_j is the inverse-step growth into f^j x.
    let stable_fwd = cumulative(s_logs[..n].iter().map(|g| -g.as_f64()));
    // ‖Df^{-k} e_s‖: keep pulling e_s back into the past.
    let past_tail = &back[total - n..];
    let (_, s_back_logs) = dynsys::pull_back(map, past_tail, e_s)?;
    let stable_back = cumulative(s_back_logs.iter().rev().map(|g| g.as_f64()));

    let (e_u, u_logs) = dynsys::push_forward(map, &back, dynsys::seed_direction())?;
    // ‖Df^{-k} e_u‖ = Π over the last k forward steps of 1/growth.
    let unstable_back = cumulative(u_logs.iter().rev().take(n).map(|g| -g.as_f64()));
    let (_, u_fwd_logs) = dynsys::push_forward(map, &fwd[..=n], e_u)?;
    let unstable_fwd = cumulative(u_fwd_logs.iter().map(|g| g.as_f64()));

    let e_s = orient(e_s);
    let e_u = orient(e_u);
    let angle = linalg::line_angle(e_s, e_u);
    if angle.as_f64() < 1e-6 {
        return Err(Error::SplittingDegenerate { angle: angle.as_f64() });
    }
    let c = chi.as_f64();
    let mut log_ell: f64 = -(angle.as_f64()).ln();
    for k in 0..=n {
        let kc = k as f64 * c;
        log_ell = log_ell
            .max(stable_fwd[k] + kc)
            .max(unstable_back[k] + kc)
            .max(kc - stable_back[k])
            .max(kc - unstable_fwd[k]);
    }
    let raw = log_ell.exp();
    if raw > MAX_ELL {
        return Err(Error::NoFiniteCertificate { required: raw });
    }
    let ell = if raw <= 1.0 + 1e-9 {
        1.0
    } else {
        ((raw - 1e-12) / ELL_RESOLUTION).ceil() * ELL_RESOLUTION
    };
    Ok(PesinCertificate {
        base_point: x,
        horizon: n,
        rate: chi,
        ell: T::lit(ell),
        splitting: Splitting { stable: e_s, unstable: e_u, angle },
    })
}

/// Linear chart `c(u, v) = center + scale·(u·e_s + v·e_u)` on `[−h, h]²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rectangle<T> {
    pub center: Point<T>,
    pub half_width: T,
    /// (stable axis, unstable axis)
    pub frame: [Vec2<T>; 2],
    pub scale: T,
    /// Pesin constant of the certificate the frame came from.
    pub ell: T,
}

impl<T: Real> Rectangle<T> {
    pub fn new(center: Point<T>, half_width: T, frame: [Vec2<T>; 2], scale: T, ell: T) -> Result<Self> {
        if !(half_width > T::zero() && half_width <= T::one()) {
            return Err(Error::InvalidInput(format!("rectangle half-width {half_width} not in (0,1]")));
        }
        if !(scale > T::zero()) {
            return Err(Error::InvalidInput("rectangle scale must be positive".into()));
        }
        let angle = linalg::line_angle(frame[0], frame[1]);
        if angle.as_f64() < 1e-9 || angle < T::one() / ell {
            return Err(Error::ChartDegenerate(format!("frame angle {angle} below 1/ℓ")));
        }
        if center.space == Space::Torus2 && (scale * half_width).as_f64() >= 0.25 {
            return Err(Error::ChartDegenerate(format!(
                "scale·h = {} reaches half the torus injectivity bound",
                scale * half_width
            )));
        }
        Ok(Self { center, half_width, frame, scale, ell })
    }

    pub fn frame_matrix(&self) -> Mat2<T> {
        Mat2::from_columns(self.frame[0], self.frame[1])
    }

    /// Tangent vector in phase coordinates → chart frame coordinates.
    pub fn vector_to_chart(&self, w: Vec2<T>) -> Vec2<T> {
        self.frame_matrix().inverse().expect("validated frame").apply(w)
    }

    pub fn vector_from_chart(&self, w: Vec2<T>) -> Vec2<T> {
        self.frame_matrix().apply(w)
    }

    pub fn from_chart(&self, uv: Vec2<T>) -> Point<T> {
        let d = linalg::scale(self.frame_matrix().apply(uv), self.scale);
        self.center.offset(d)
    }

    /// Phase-space offset of chart point `uv` relative to chart point `base`.
    pub fn chart_offset(&self, base: Vec2<T>, uv: Vec2<T>) -> Vec2<T> {
        linalg::scale(self.frame_matrix().apply(linalg::sub(uv, base)), self.scale)
    }

    pub fn to_chart(&self, p: &Point<T>) -> Vec2<T> {
        let d = self.center.space.displacement(self.center.coords, p.coords);
        let uv = self.vector_to_chart(d);
        [uv[0] / self.scale, uv[1] / self.scale]
    }

    pub fn in_box(&self, uv: Vec2<T>, half: T) -> bool {
        uv[0].abs() <= half && uv[1].abs() <= half
    }

    /// Chart core `[−h/2, h/2]²`.
    pub fn in_core(&self, p: &Point<T>) -> bool {
        let uv = self.to_chart(p);
        self.in_box(uv, self.half_width / T::lit(2.0))
    }

    pub fn diameter(&self) -> T {
        let [a, b] = self.frame;
        let d = linalg::norm(linalg::add(a, b)).max(linalg::norm(linalg::sub(a, b)));
        T::lit(2.0) * self.scale * self.half_width * d
    }

    pub fn with_half_width(&self, h: T) -> Result<Self> {
        Self::new(self.center, h, self.frame, self.scale, self.ell)
    }
}

/// Rectangle centred at the certificate's base point, framed by its
/// splitting, with chart scale `min(1/4, 1/(4‖G⁻¹‖))·½` (`G` the frame Gram
/// matrix).
pub fn build_rectangle<T: Real>(cert: &PesinCertificate<T>, h: T) -> Result<Rectangle<T>> {
    if !(h > T::zero() && h <= T::one()) {
        return Err(Error::InvalidInput(format!("rectangle half-width {h} not in (0,1]")));
    }
    let [e_s, e_u] = [cert.splitting.stable, cert.splitting.unstable];
    let c = linalg::dot(e_s, e_u).abs();
    if T::one() - c < T::lit(1e-9) {
        return Err(Error::ChartDegenerate("stable and unstable axes nearly parallel".into()));
    }
    let gram_inv_norm = T::one() / (T::one() - c);
    let chart_radius = T::lit(0.25);
    let scale = chart_radius.min(T::one() / (T::lit(4.0) * gram_inv_norm)) * T::lit(0.5);
    Rectangle::new(cert.base_point, h, [e_s, e_u], scale, cert.ell)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeField<T> {
    pub rectangle: Rectangle<T>,
    /// Slope width: `K^u = {|a| ≤ γ|b|}`, `K^s = {|b| ≤ γ|a|}` in chart
    /// frame coordinates `(a, b)`.
    pub gamma: T,
}

impl<T: Real> ConeField<T> {
    pub fn new(rectangle: Rectangle<T>, gamma: T) -> Result<Self> {
        if !(gamma > T::zero() && gamma < T::lit(0.5)) {
            return Err(Error::InvalidInput(format!("cone width {gamma} not in (0, 1/2)")));
        }
        Ok(Self { rectangle, gamma })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CylinderKind {
    /// Full in the stable coordinate `u`, pinched in `v`.
    Stable,
    /// Full in the unstable coordinate `v`, pinched in `u`.
    Unstable,
}

/// Region between two graphs over the full coordinate, stored as a midline
/// and a half-thickness sampled at `k` equispaced points of `[−h, h]`.
/// `k = 2` with `exact = true` is an affine strip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cylinder<T> {
    pub kind: CylinderKind,
    pub half_width: T,
    pub mid: Vec<T>,
    pub half: Vec<T>,
    pub exact: bool,
}

impl<T: Real> Cylinder<T> {
    pub fn new(kind: CylinderKind, half_width: T, mid: Vec<T>, half: Vec<T>, exact: bool) -> Result<Self> {
        if mid.len() < 2 || mid.len() != half.len() {
            return Err(Error::InvalidInput("cylinder needs ≥ 2 matching samples".into()));
        }
        if half.iter().any(|w| *w < T::zero() || !w.is_finite()) || mid.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput("cylinder samples must be finite with nonnegative thickness".into()));
        }
        Ok(Self { kind, half_width, mid, half, exact })
    }

    /// Affine strip `{|pinched − (a + b·full)| ≤ w}`.
    pub fn affine(kind: CylinderKind, half_width: T, intercept: T, slope: T, w: T) -> Result<Self> {
        let h = half_width;
        Self::new(kind, h, vec![intercept - slope * h, intercept + slope * h], vec![w, w], true)
    }

    /// The whole rectangle viewed as a cylinder of the given kind.
    pub fn full(kind: CylinderKind, half_width: T) -> Self {
        Self::affine(kind, half_width, T::zero(), T::zero(), half_width).expect("valid")
    }

    pub fn resolution(&self) -> usize {
        self.mid.len()
    }

    pub fn sample_coord(&self, i: usize) -> T {
        let k = T::from_usize(self.mid.len() - 1).unwrap();
        -self.half_width + T::lit(2.0) * self.half_width * T::from_usize(i).unwrap() / k
    }

    fn interp(&self, vals: &[T], t: T) -> T {
        let k = vals.len() - 1;
        let x = (t + self.half_width) / (T::lit(2.0) * self.half_width) * T::from_usize(k).unwrap();
        let x = x.max(T::zero()).min(T::from_usize(k).unwrap());
        let i = x.floor().to_usize().unwrap().min(k - 1);
        let f = x - T::from_usize(i).unwrap();
        vals[i] + (vals[i + 1] - vals[i]) * f
    }

    pub fn mid_at(&self, t: T) -> T {
        self.interp(&self.mid, t)
    }

    pub fn half_at(&self, t: T) -> T {
        self.interp(&self.half, t)
    }

    /// Chart point from (full coordinate, pinched coordinate).
    pub fn chart_point(&self, full: T, pinched: T) -> Vec2<T> {
        match self.kind {
            CylinderKind::Stable => [full, pinched],
            CylinderKind::Unstable => [pinched, full],
        }
    }

    /// (full, pinched) from a chart point.
    pub fn split(&self, uv: Vec2<T>) -> (T, T) {
        match self.kind {
            CylinderKind::Stable => (uv[0], uv[1]),
            CylinderKind::Unstable => (uv[1], uv[0]),
        }
    }

    pub fn contains(&self, uv: Vec2<T>, tol: T) -> bool {
        let (t, p) = self.split(uv);
        t.abs() <= self.half_width + tol && (p - self.mid_at(t)).abs() <= self.half_at(t) + tol
    }

    /// Largest Lipschitz constant of the two boundary graphs.
    pub fn lipschitz(&self) -> T {
        let dt = T::lit(2.0) * self.half_width / T::from_usize(self.mid.len() - 1).unwrap();
        self.mid
            .windows(2)
            .zip(self.half.windows(2))
            .map(|(m, w)| {
                let lo = ((m[1] - w[1]) - (m[0] - w[0])).abs();
                let hi = ((m[1] + w[1]) - (m[0] + w[0])).abs();
                lo.max(hi) / dt
            })
            .fold(T::zero(), T::max)
    }

    pub fn is_admissible(&self, gamma: T) -> bool {
        self.lipschitz() <= gamma * (T::one() + T::lit(1e-12))
    }

    /// Both boundary graphs stay inside `[−h, h]` in the pinched coordinate.
    pub fn spans_fully(&self, tol: T) -> bool {
        self.mid
            .iter()
            .zip(&self.half)
            .all(|(m, w)| m.abs() + *w <= self.half_width + tol)
    }

    /// Maximal thickness in the pinched coordinate (chart units).
    pub fn thickness(&self) -> T {
        self.half.iter().fold(T::zero(), |a, w| a.max(*w)) * T::lit(2.0)
    }

    /// Minimal gap between two cylinders of the same kind (negative when
    /// they overlap), evaluated on the finer of the two sample grids.
    pub fn separation(&self, other: &Self) -> T {
        let k = self.resolution().max(other.resolution());
        let ref_cyl = if self.resolution() >= other.resolution() { self } else { other };
        (0..k)
            .map(|i| {
                let t = ref_cyl.sample_coord(i);
                (self.mid_at(t) - other.mid_at(t)).abs() - self.half_at(t) - other.half_at(t)
            })
            .fold(T::infinity(), T::min)
    }

    /// `n × n` chart grid covering the cylinder.
    pub fn grid(&self, n: usize) -> Vec<Vec2<T>> {
        let n = n.max(2);
        let nn = T::from_usize(n - 1).unwrap();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            let t = -self.half_width + T::lit(2.0) * self.half_width * T::from_usize(i).unwrap() / nn;
            let (m, w) = (self.mid_at(t), self.half_at(t));
            for j in 0..n {
                let s = -T::one() + T::lit(2.0) * T::from_usize(j).unwrap() / nn;
                out.push(self.chart_point(t, m + w * s));
            }
        }
        out
    }

    /// Chart points along the boundary: both graphs plus the two end segments.
    pub fn boundary(&self) -> Vec<Vec2<T>> {
        let mut out = Vec::new();
        for i in 0..self.resolution() {
            let t = self.sample_coord(i);
            out.push(self.chart_point(t, self.mid[i] - self.half[i]));
            out.push(self.chart_point(t, self.mid[i] + self.half[i]));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeCertificate<T> {
    pub pass: bool,
    /// Minimal angular slack `atan γ − atan(slope)` over grid and cone edges.
    pub margin: T,
    /// Largest slope of an image of an unstable cone edge.
    pub unstable_image_width: T,
    /// Largest slope of a preimage of a stable cone edge.
    pub stable_image_width: T,
    /// Minimal log growth of the unstable chart coordinate under `Df^m`.
    pub log_unstable_expansion: T,
    /// Minimal log growth of the stable chart coordinate under `Df^{-m}`.
    pub log_stable_expansion: T,
    pub samples: usize,
    pub witness: Option<ConeWitness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeWitness {
    pub point: [f64; 2],
    pub vector: [f64; 2],
}

impl<T: Real> ConeCertificate<T> {
    /// Contraction bound `λ̄` of unstable-direction widths under pull-back.
    pub fn unstable_contraction(&self) -> T {
        (-self.log_unstable_expansion).exp()
    }

    pub fn stable_contraction(&self) -> T {
        (-self.log_stable_expansion).exp()
    }
}

/// Checks on a `samples × samples` grid of `domain` that `Df^m` maps the
/// unstable cone strictly inside itself and `Df^{-m}` (at the image point)
/// does the same for the stable cone, using the four extreme cone edges.
pub fn cone_preserved<T: Real>(
    map: &dyn MapSystem<T>,
    domain: &Cylinder<T>,
    m: usize,
    cones: &ConeField<T>,
    samples: usize,
) -> Result<ConeCertificate<T>> {
    let rect = &cones.rectangle;
    let g = cones.gamma;
    let ucone = [[g, T::one()], [-g, T::one()]];
    let scone = [[T::one(), g], [T::one(), -g]];
    let atan_g = g.atan();
    let mut cert = ConeCertificate {
        pass: true,
        margin: T::infinity(),
        unstable_image_width: T::zero(),
        stable_image_width: T::zero(),
        log_unstable_expansion: T::infinity(),
        log_stable_expansion: T::infinity(),
        samples,
        witness: None,
    };
    for uv in domain.grid(samples) {
        let p = rect.from_chart(uv);
        let d = dynsys::cocycle(map, p, m)?;
        for v in ucone {
            let w = rect.vector_from_chart(v);
            let (ln, dir) = d.apply_log(w);
            let img = rect.vector_to_chart(dir);
            let slope = (img[0] / img[1]).abs();
            let slope = if slope.is_nan() { T::infinity() } else { slope };
            cert.unstable_image_width = cert.unstable_image_width.max(slope);
            let lg = ln + img[1].abs().ln();
            cert.log_unstable_expansion = cert.log_unstable_expansion.min(lg);
            let slack = atan_g - slope.atan();
            if slack < cert.margin {
                cert.margin = slack;
            }
            if !(slope < g) && cert.witness.is_none() {
                cert.witness = Some(ConeWitness {
                    point: p.coords.map(|c| c.as_f64()),
                    vector: v.map(|c| c.as_f64()),
                });
            }
        }
        for v in scone {
            let w = rect.vector_from_chart(v);
            let dir = d.apply_inverse_direction(linalg::normalize(w).0);
            let img = rect.vector_to_chart(dir);
            let slope = (img[1] / img[0]).abs();
            let slope = if slope.is_nan() { T::infinity() } else { slope };
            cert.stable_image_width = cert.stable_image_width.max(slope);
            // growth of the stable coordinate under the inverse
            let inv_growth = inverse_log_growth(&d, w);
            let lg = inv_growth + img[0].abs().ln();
            cert.log_stable_expansion = cert.log_stable_expansion.min(lg);
            let slack = atan_g - slope.atan();
            if slack < cert.margin {
                cert.margin = slack;
            }
            if !(slope < g) && cert.witness.is_none() {
                cert.witness = Some(ConeWitness {
                    point: p.coords.map(|c| c.as_f64()),
                    vector: v.map(|c| c.as_f64()),
                });
            }
        }
    }
    cert.pass = cert.witness.is_none() && cert.margin > T::zero();
    Ok(cert)
}

/// `log‖M⁻¹ w‖` for a factored `M`.
fn inverse_log_growth<T: Real>(d: &linalg::FactoredMatrix<T>, w: Vec2<T>) -> T {
    let q = d.q.transpose().apply(w);
    let (l0, l1) = (-d.log_diag[0], -d.log_diag[1]);
    let top = l0.max(l1);
    let y = d.sign_diag[1] * (l1 - top).exp() * q[1];
    let x = d.sign_diag[0] * (l0 - top).exp() * q[0];
    top + linalg::norm([x - d.upper * y, y]).ln()
}
