//! Returns to a rectangle, hyperbolic branch certification and
//! quasi-genericity.

use crate::dynsys::{self, iterate, orbit, MapSystem, Point, ReferenceMeasure, Space, TestFunctionFamily};
use crate::error::{Error, Result};
use crate::linalg::{self, Vec2};
use crate::pesin::{cone_preserved, pesin_certificate, ConeCertificate, ConeField, Cylinder, CylinderKind, Rectangle};
use crate::scalar::Real;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Chart-coordinate tolerance for branch geometry.
pub const TAU_BRANCH: f64 = 1e-7;
/// Returned by [`delta_modulus`] for families with zero Lipschitz constant.
pub const DELTA_CAP: f64 = 0.1;
pub const DEFAULT_ELL0: f64 = 10.0;
/// Polyline resolution of numerically pulled-back cylinders.
pub const GRAPH_SAMPLES: usize = 65;
pub const CONE_SAMPLES: usize = 33;
pub const QG_GRID: usize = 5;
/// Largest return time handled by direct iteration of non-affine maps.
pub const NUMERIC_MAX_M: usize = 40;
/// Largest misalignment between the propagated splitting and the chart
/// frame for which the diagonal affine model is used.
pub const ADAPTED_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiGenericityParams<T> {
    pub rho: T,
    pub s: usize,
    pub n_min: usize,
}

impl<T: Real> QuasiGenericityParams<T> {
    pub fn new(rho: T, s: usize, n_min: usize, family: &TestFunctionFamily<T>) -> Result<Self> {
        check_rho_s(rho, s, family)?;
        if n_min == 0 {
            return Err(Error::InvalidInput("n_min must be positive".into()));
        }
        Ok(Self { rho, s, n_min })
    }
}

fn check_rho_s<T: Real>(rho: T, s: usize, family: &TestFunctionFamily<T>) -> Result<()> {
    if !(rho > T::zero()) {
        return Err(Error::InvalidInput(format!("ρ = {rho} must be positive")));
    }
    if s == 0 || s > family.count() {
        return Err(Error::InvalidInput(format!("s = {s} outside 1..={}", family.count())));
    }
    Ok(())
}

/// `δ(ρ, s) = 0.99ρ / (2 max_{i≤s} Lip φ_i)`, so that `d(x, y) < δ` forces
/// `|φ_i(x) − φ_i(y)| < ρ/2` for every `i ≤ s`.
pub fn delta_modulus<T: Real>(family: &TestFunctionFamily<T>, rho: T, s: usize) -> Result<T> {
    check_rho_s(rho, s, family)?;
    let lip = family.max_lipschitz(s);
    if lip == T::zero() {
        return Ok(T::lit(DELTA_CAP));
    }
    Ok(T::lit(0.99) * rho / (T::lit(2.0) * lip))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QgOutcome<T> {
    pub pass: bool,
    pub max_residual: T,
    /// First test function attaining the maximal residual, on failure.
    pub witness: Option<usize>,
    pub residuals: Vec<T>,
}

impl<T: Real> QgOutcome<T> {
    fn from_residuals(residuals: Vec<T>, threshold: T) -> Self {
        let (idx, max) = residuals
            .iter()
            .enumerate()
            .fold((0, T::zero()), |(bi, bm), (i, r)| if *r > bm { (i, *r) } else { (bi, bm) });
        let pass = max <= threshold;
        Self { pass, max_residual: max, witness: (!pass).then_some(idx), residuals }
    }
}

/// `|(1/n)Σ φ_i − ∫φ_i dμ|` for `i ≤ s` along the given orbit points.
pub fn average_residuals<T: Real>(
    points: &[Point<T>],
    family: &TestFunctionFamily<T>,
    mu_ref: &ReferenceMeasure<T>,
    s: usize,
) -> Vec<T> {
    let mut sums = vec![T::zero(); s];
    for p in points {
        for (acc, f) in sums.iter_mut().zip(&family.functions[..s]) {
            *acc = *acc + f.eval(p);
        }
    }
    let n = T::from_usize(points.len()).unwrap();
    sums.iter().zip(&mu_ref.integrals).map(|(sum, i)| (*sum / n - *i).abs()).collect()
}

fn check_reference<T: Real>(mu_ref: &ReferenceMeasure<T>, s: usize) -> Result<()> {
    if mu_ref.integrals.len() < s {
        return Err(Error::InvalidInput(format!(
            "reference measure `{}` knows {} integrals, {s} requested",
            mu_ref.name,
            mu_ref.integrals.len()
        )));
    }
    Ok(())
}

/// `(ρ, s, n)` quasi-genericity of `x`, passing iff the maximal residual is
/// at most `ρ − integral_error`.
pub fn quasi_generic_point<T: Real>(
    map: &dyn MapSystem<T>,
    x: Point<T>,
    n: usize,
    family: &TestFunctionFamily<T>,
    mu_ref: &ReferenceMeasure<T>,
    rho: T,
    s: usize,
) -> Result<QgOutcome<T>> {
    if n == 0 {
        return Err(Error::InvalidInput("quasi-genericity needs n ≥ 1".into()));
    }
    check_rho_s(rho, s, family)?;
    check_reference(mu_ref, s)?;
    let sums = dynsys::birkhoff_sums(map, x, n, family, s)?;
    let nn = T::from_usize(n).unwrap();
    let residuals = sums.iter().zip(&mu_ref.integrals).map(|(sum, i)| (*sum / nn - *i).abs()).collect();
    Ok(QgOutcome::from_residuals(residuals, rho - mu_ref.integral_error))
}

fn first_return<T: Real>(map: &dyn MapSystem<T>, rect: &Rectangle<T>, z: Point<T>, n_min: usize, m_max: usize) -> Option<usize> {
    let mut p = z;
    for m in 1..=m_max {
        p = Point { coords: map.forward(p.coords), space: p.space };
        if !p.is_finite() {
            return None;
        }
        if m >= n_min && rect.in_core(&p) {
            return Some(m);
        }
    }
    None
}

/// For each seed (in order) the smallest `m ∈ [n_min, m_max]` with `f^m(z)`
/// in the rectangle core. Seeds without such a return, or whose orbit
/// escapes, are dropped.
pub fn detect_returns<T: Real>(
    map: &dyn MapSystem<T>,
    rect: &Rectangle<T>,
    seeds: &[Point<T>],
    n_min: usize,
    m_max: usize,
) -> Result<Vec<(Point<T>, usize)>> {
    if let Some(bad) = seeds.iter().position(|z| !rect.in_core(z)) {
        return Err(Error::InvalidInput(format!("seed {bad} is outside the rectangle core")));
    }
    if m_max < n_min || n_min == 0 {
        return Ok(Vec::new());
    }
    let hits: Vec<Option<usize>> = seeds.par_iter().map(|z| first_return(map, rect, *z, n_min, m_max)).collect();
    Ok(seeds.iter().zip(hits).filter_map(|(z, m)| m.map(|m| (*z, m))).collect())
}

/// `count` seeds drawn uniformly from the rectangle core. On the torus they
/// are rounded to the dyadic lattice `2⁻⁵⁰ℤ²`, where toral automorphisms
/// with integer matrices are evaluated exactly.
pub fn core_seeds<T: Real, R: Rng>(rect: &Rectangle<T>, count: usize, rng: &mut R) -> Vec<Point<T>> {
    let half = rect.half_width.as_f64() / 2.0;
    let lattice = 2f64.powi(50);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < 4 * count + 16 {
        tries += 1;
        let uv = [T::lit(rng.gen_range(-half..=half)), T::lit(rng.gen_range(-half..=half))];
        let mut p = rect.from_chart(uv);
        if p.space == Space::Torus2 {
            let c = p.coords.map(|x| T::lit((x.as_f64() * lattice).round() / lattice));
            p = Point::new(Space::Torus2, Space::Torus2.canonical(c));
        }
        if rect.in_core(&p) {
            out.push(p);
        }
    }
    out
}

/// Stable and unstable tangent data along a branch orbit `z, …, f^m z`:
/// `Df^j v₀ = stable_norms[j]·stable_dirs[j]` with `v₀` the pull-back of the
/// chart stable axis from `f^m z`, and `Df^j e_u = unstable_norms[j]·
/// unstable_dirs[j]` with `e_u` the chart unstable axis at `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentData<T> {
    pub orbit: Vec<Point<T>>,
    pub stable_dirs: Vec<Vec2<T>>,
    pub stable_norms: Vec<T>,
    pub unstable_dirs: Vec<Vec2<T>>,
    pub unstable_norms: Vec<T>,
    /// Sign relating `v₀` to the chart stable axis at `z`.
    pub stable_sign: T,
    /// Sign relating `unstable_dirs[m]` to the chart unstable axis at `f^m z`.
    pub unstable_sign: T,
}

fn cross<T: Real>(a: Vec2<T>, b: Vec2<T>) -> T {
    a[0] * b[1] - a[1] * b[0]
}

fn sign<T: Real>(x: T) -> T {
    if x < T::zero() {
        -T::one()
    } else {
        T::one()
    }
}

/// Tangent data along `pts`, or `None` when the propagated splitting does not
/// match the chart frame at both ends within [`ADAPTED_TOL`].
pub fn adapted_tangent<T: Real>(map: &dyn MapSystem<T>, rect: &Rectangle<T>, pts: &[Point<T>]) -> Result<Option<TangentData<T>>> {
    let m = pts.len() - 1;
    let [e_s, e_u] = rect.frame;
    let mut sdirs = vec![e_s; m + 1];
    let mut growth = vec![T::one(); m];
    for k in (0..m).rev() {
        let jinv = map.jacobian(pts[k].coords).inverse().ok_or(Error::DegenerateCocycle { step: k })?;
        let (d, g) = linalg::normalize(jinv.apply(sdirs[k + 1]));
        sdirs[k] = d;
        growth[k] = g;
    }
    let mut snorms = vec![T::one(); m + 1];
    for j in 0..m {
        snorms[j + 1] = snorms[j] / growth[j];
    }
    let mut udirs = vec![e_u; m + 1];
    let mut unorms = vec![T::one(); m + 1];
    for k in 0..m {
        let j = map.jacobian(pts[k].coords);
        if !j.is_finite() {
            return Err(Error::DegenerateCocycle { step: k });
        }
        let (d, g) = linalg::normalize(j.apply(udirs[k]));
        udirs[k + 1] = d;
        unorms[k + 1] = unorms[k] * g;
    }
    if !snorms.iter().chain(&unorms).all(|x| x.is_finite() && *x > T::zero()) {
        return Ok(None);
    }
    let tol = T::lit(ADAPTED_TOL);
    if cross(sdirs[0], e_s).abs() > tol || cross(udirs[m], e_u).abs() > tol {
        return Ok(None);
    }
    Ok(Some(TangentData {
        orbit: pts.to_vec(),
        stable_sign: sign(linalg::dot(sdirs[0], e_s)),
        unstable_sign: sign(linalg::dot(udirs[m], e_u)),
        stable_dirs: sdirs,
        stable_norms: snorms,
        unstable_dirs: udirs,
        unstable_norms: unorms,
    }))
}

/// How `f^m` acts in chart coordinates near a branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "track", rename_all = "lowercase")]
pub enum ChartAction<T> {
    /// `ξ ↦ image + diag(stable_factor, unstable_factor)(ξ − base)`.
    Affine { base: Vec2<T>, image: Vec2<T>, stable_factor: T, unstable_factor: T, tangent: TangentData<T> },
    /// Direct iteration of the map.
    Numeric { base: Vec2<T>, image: Vec2<T> },
}

impl<T: Real> ChartAction<T> {
    pub fn base(&self) -> Vec2<T> {
        match self {
            ChartAction::Affine { base, .. } | ChartAction::Numeric { base, .. } => *base,
        }
    }

    pub fn image(&self) -> Vec2<T> {
        match self {
            ChartAction::Affine { image, .. } | ChartAction::Numeric { image, .. } => *image,
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, ChartAction::Affine { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QgCertificate<T> {
    pub rho: T,
    pub s: usize,
    pub delta: T,
    /// Residual of the base point at horizon `m`, certified against `ρ/2`.
    pub base_residual: T,
    /// Largest residual over the source grid at horizon `m`.
    pub grid_residual: T,
    pub grid_samples: usize,
    pub grid_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicBranch<T> {
    pub return_time: usize,
    pub base_point: Point<T>,
    pub landing_point: Point<T>,
    pub source: Cylinder<T>,
    pub target: Cylinder<T>,
    pub action: ChartAction<T>,
    pub cone_certificate: ConeCertificate<T>,
    /// Diameters of `f^j(S)` for `j = 0..m`.
    pub diameter_profile: Vec<T>,
    /// Extent of `f^j(S)` along the propagated stable and unstable axes
    /// (affine track only).
    pub stable_extent: Option<Vec<T>>,
    pub unstable_extent: Option<Vec<T>>,
    pub qg_certificate: QgCertificate<T>,
    /// Pesin constant at the landing point, when checked.
    pub landing_ell: Option<T>,
}

impl<T: Real> HyperbolicBranch<T> {
    /// `f^m` in chart coordinates.
    pub fn forward_chart(&self, map: &dyn MapSystem<T>, rect: &Rectangle<T>, xi: Vec2<T>) -> Result<Vec2<T>> {
        action_forward(&self.action, map, rect, self.return_time, xi)
    }

    /// `f^{−m}` in chart coordinates.
    pub fn inverse_chart(&self, map: &dyn MapSystem<T>, rect: &Rectangle<T>, xi: Vec2<T>) -> Result<Vec2<T>> {
        action_inverse(&self.action, map, rect, self.return_time, xi)
    }

    /// `f^j(c(ξ))` for `j = 0..steps` (`steps ≤ m`).
    pub fn orbit_of(&self, map: &dyn MapSystem<T>, rect: &Rectangle<T>, xi: Vec2<T>, steps: usize) -> Result<Vec<Point<T>>> {
        action_orbit(&self.action, map, rect, xi, steps)
    }

    /// Like [`Self::orbit_of`] with the chart point given as its offset from
    /// the base point. On the affine track the offset keeps its relative
    /// precision even when far below the resolution of chart coordinates.
    pub fn orbit_from_offset(&self, map: &dyn MapSystem<T>, rect: &Rectangle<T>, offset: Vec2<T>, steps: usize) -> Result<Vec<Point<T>>> {
        let base = self.action.base();
        match &self.action {
            ChartAction::Affine { tangent, .. } => Ok(affine_orbit(tangent, rect, offset, steps)?),
            ChartAction::Numeric { .. } => action_orbit(&self.action, map, rect, linalg::add(base, offset), steps),
        }
    }

    /// `f^{−m}(target) ∩ S`, a stable cylinder inside the source.
    pub fn pull_back_stable(&self, map: &dyn MapSystem<T>, rect: &Rectangle<T>, target: &Cylinder<T>) -> Result<Cylinder<T>> {
        pull_back(&self.action, map, rect, self.return_time, target, &self.source)
    }

    /// `f^m(source ∩ S)`, an unstable cylinder inside the target.
    pub fn push_forward_unstable(&self, map: &dyn MapSystem<T>, rect: &Rectangle<T>, source: &Cylinder<T>) -> Result<Cylinder<T>> {
        push_forward(&self.action, map, rect, self.return_time, source, &self.target)
    }

    pub fn is_affine(&self) -> bool {
        self.action.is_affine()
    }
}

fn action_forward<T: Real>(a: &ChartAction<T>, map: &dyn MapSystem<T>, rect: &Rectangle<T>, m: usize, xi: Vec2<T>) -> Result<Vec2<T>> {
    match a {
        ChartAction::Affine { base, image, stable_factor, unstable_factor, .. } => Ok([
            image[0] + *stable_factor * (xi[0] - base[0]),
            image[1] + *unstable_factor * (xi[1] - base[1]),
        ]),
        ChartAction::Numeric { .. } => Ok(rect.to_chart(&iterate(map, rect.from_chart(xi), m as i64)?)),
    }
}

fn action_inverse<T: Real>(a: &ChartAction<T>, map: &dyn MapSystem<T>, rect: &Rectangle<T>, m: usize, xi: Vec2<T>) -> Result<Vec2<T>> {
    match a {
        ChartAction::Affine { base, image, stable_factor, unstable_factor, .. } => Ok([
            base[0] + (xi[0] - image[0]) / *stable_factor,
            base[1] + (xi[1] - image[1]) / *unstable_factor,
        ]),
        ChartAction::Numeric { .. } => Ok(rect.to_chart(&iterate(map, rect.from_chart(xi), -(m as i64))?)),
    }
}

fn action_orbit<T: Real>(a: &ChartAction<T>, map: &dyn MapSystem<T>, rect: &Rectangle<T>, xi: Vec2<T>, steps: usize) -> Result<Vec<Point<T>>> {
    match a {
        ChartAction::Affine { base, tangent, .. } => affine_orbit(tangent, rect, [xi[0] - base[0], xi[1] - base[1]], steps),
        ChartAction::Numeric { .. } => orbit(map, rect.from_chart(xi), steps as i64),
    }
}

fn affine_orbit<T: Real>(tangent: &TangentData<T>, rect: &Rectangle<T>, offset: Vec2<T>, steps: usize) -> Result<Vec<Point<T>>> {
    if steps >= tangent.orbit.len() {
        return Err(Error::InvalidInput(format!("orbit of {steps} steps exceeds branch time")));
    }
    let du = offset[0] * rect.scale * tangent.stable_sign;
    let dv = offset[1] * rect.scale;
    Ok((0..=steps)
        .map(|j| {
            let off = linalg::add(
                linalg::scale(tangent.stable_dirs[j], du * tangent.stable_norms[j]),
                linalg::scale(tangent.unstable_dirs[j], dv * tangent.unstable_norms[j]),
            );
            tangent.orbit[j].offset(off)
        })
        .collect())
}

fn pull_back<T: Real>(
    a: &ChartAction<T>,
    map: &dyn MapSystem<T>,
    rect: &Rectangle<T>,
    m: usize,
    target: &Cylinder<T>,
    hint: &Cylinder<T>,
) -> Result<Cylinder<T>> {
    if target.kind != CylinderKind::Stable || hint.kind != CylinderKind::Stable {
        return Err(Error::InvalidInput("pull-back needs stable cylinders".into()));
    }
    let h = rect.half_width;
    match a {
        ChartAction::Affine { base, image, stable_factor, unstable_factor, .. } => {
            let k = target.resolution();
            let mut c = Cylinder::new(CylinderKind::Stable, h, vec![T::zero(); k], vec![T::zero(); k], target.exact)?;
            for j in 0..k {
                let u = c.sample_coord(j);
                let up = image[0] + *stable_factor * (u - base[0]);
                c.mid[j] = base[1] + (target.mid_at(up) - image[1]) / *unstable_factor;
                c.half[j] = target.half_at(up) / unstable_factor.abs();
            }
            Ok(c)
        }
        ChartAction::Numeric { base, .. } => {
            let eval = |full: T, pinched: T| -> Result<(T, T)> {
                let img = action_forward(a, map, rect, m, [full, pinched])?;
                Ok((img[0], img[1]))
            };
            let start = if hint.contains(*base, T::zero()) { (base[0], base[1]) } else { (T::zero(), hint.mid_at(T::zero())) };
            sampled_strip(CylinderKind::Stable, h, hint, target, eval, start)
        }
    }
}

fn push_forward<T: Real>(
    a: &ChartAction<T>,
    map: &dyn MapSystem<T>,
    rect: &Rectangle<T>,
    m: usize,
    source: &Cylinder<T>,
    hint: &Cylinder<T>,
) -> Result<Cylinder<T>> {
    if source.kind != CylinderKind::Unstable || hint.kind != CylinderKind::Unstable {
        return Err(Error::InvalidInput("push-forward needs unstable cylinders".into()));
    }
    let h = rect.half_width;
    match a {
        ChartAction::Affine { base, image, stable_factor, unstable_factor, .. } => {
            let k = source.resolution();
            let mut c = Cylinder::new(CylinderKind::Unstable, h, vec![T::zero(); k], vec![T::zero(); k], source.exact)?;
            for j in 0..k {
                let vp = c.sample_coord(j);
                let v = base[1] + (vp - image[1]) / *unstable_factor;
                c.mid[j] = image[0] + *stable_factor * (source.mid_at(v) - base[0]);
                c.half[j] = source.half_at(v) * stable_factor.abs();
            }
            Ok(c)
        }
        ChartAction::Numeric { image, .. } => {
            let eval = |full: T, pinched: T| -> Result<(T, T)> {
                let pre = action_inverse(a, map, rect, m, [pinched, full])?;
                Ok((pre[1], pre[0]))
            };
            let start = if hint.contains(*image, T::zero()) { (image[1], image[0]) } else { (T::zero(), hint.mid_at(T::zero())) };
            sampled_strip(CylinderKind::Unstable, h, hint, source, eval, start)
        }
    }
}

/// Sub-cylinder of `hint` whose image under `eval` lies in `target`.
/// `eval` maps (full, pinched) coordinates of `hint`'s kind to (full,
/// pinched) coordinates of `target`'s kind and must be monotone in the
/// pinched coordinate across `hint`.
fn sampled_strip<T: Real, E>(kind: CylinderKind, h: T, hint: &Cylinder<T>, target: &Cylinder<T>, eval: E, start: (T, T)) -> Result<Cylinder<T>>
where
    E: Fn(T, T) -> Result<(T, T)>,
{
    let k = GRAPH_SAMPLES;
    let mut out = Cylinder::new(kind, h, vec![T::zero(); k], vec![T::zero(); k], false)?;
    let level = |t: T, p: T, c: T| -> Result<T> {
        let (tf, tp) = eval(t, p)?;
        Ok(tp - target.mid_at(tf) - c * target.half_at(tf))
    };
    let pos = |t: T| -> usize {
        let x = (t + h) / (T::lit(2.0) * h) * T::from_usize(k - 1).unwrap();
        x.round().to_usize().unwrap_or(0).min(k - 1)
    };
    let i0 = pos(start.0);
    let orientation = {
        let t = out.sample_coord(i0);
        let lo = hint.mid_at(t) - hint.half_at(t);
        let hi = hint.mid_at(t) + hint.half_at(t);
        let eps = (hi - lo) * T::lit(1e-7);
        let g = start.1.max(lo + eps).min(hi - eps);
        let d = level(t, g + eps, T::zero())? - level(t, g - eps, T::zero())?;
        if d == T::zero() || !d.is_finite() {
            return Err(Error::CrossFail("image does not move across the pinched coordinate".into()));
        }
        sign(d)
    };
    let order: Vec<usize> = (i0..k).chain((0..i0).rev()).collect();
    let mut guess = start.1;
    for (n, &i) in order.iter().enumerate() {
        if n > 0 && i + 1 == i0 {
            guess = out.mid[i0];
        }
        let t = out.sample_coord(i);
        let lo = (hint.mid_at(t) - hint.half_at(t)).max(-h);
        let hi = (hint.mid_at(t) + hint.half_at(t)).min(h);
        let g = guess.max(lo).min(hi);
        let a = solve_monotone(|p| Ok(orientation * level(t, p, -T::one())?), g, lo, hi)?;
        let b = solve_monotone(|p| Ok(orientation * level(t, p, T::one())?), g, lo, hi)?;
        out.mid[i] = (a + b) / T::lit(2.0);
        out.half[i] = (b - a).abs() / T::lit(2.0);
        guess = out.mid[i];
    }
    Ok(out)
}

/// Root of an increasing function on `[lo, hi]`, marching from `guess`.
fn solve_monotone<T: Real, F>(f: F, guess: T, lo: T, hi: T) -> Result<T>
where
    F: Fn(T) -> Result<T>,
{
    let mut a = guess;
    let mut fa = f(a)?;
    if fa == T::zero() {
        return Ok(a);
    }
    let dir = if fa < T::zero() { T::one() } else { -T::one() };
    let mut step = ((hi - lo) * T::lit(1e-6)).max(T::epsilon() * (T::one() + guess.abs()));
    let (mut b, mut fb);
    loop {
        b = (a + dir * step).max(lo).min(hi);
        fb = f(b)?;
        if !fb.is_finite() {
            return Err(Error::CrossFail("orbit left the domain while tracing a cylinder boundary".into()));
        }
        if (fb < T::zero()) != (fa < T::zero()) || fb == T::zero() {
            break;
        }
        if b == lo || b == hi {
            return Err(Error::CrossFail("cylinder boundary not found inside the rectangle".into()));
        }
        a = b;
        fa = fb;
        step = step * T::lit(2.0);
    }
    for _ in 0..200 {
        let c = (a + b) / T::lit(2.0);
        if c == a || c == b {
            break;
        }
        let fc = f(c)?;
        if (fc < T::zero()) == (fa < T::zero()) {
            a = c;
            fa = fc;
        } else {
            b = c;
        }
    }
    Ok((a + b) / T::lit(2.0))
}

fn check_crossing<T: Real>(
    map: &dyn MapSystem<T>,
    rect: &Rectangle<T>,
    action: &ChartAction<T>,
    m: usize,
    s: &Cylinder<T>,
    u: &Cylinder<T>,
) -> Result<()> {
    let tau = T::lit(TAU_BRANCH);
    let h = rect.half_width;
    if !s.spans_fully(tau) {
        return Err(Error::CrossFail("source does not span the rectangle".into()));
    }
    if !u.spans_fully(tau) {
        return Err(Error::CrossFail("target does not span the rectangle".into()));
    }
    match action {
        ChartAction::Affine { stable_factor, unstable_factor, .. } => {
            let rel = T::lit(1e-12);
            let ok_s = s.half.iter().all(|w| ((*w * unstable_factor.abs()) - h).abs() <= rel * h);
            let ok_u = u.half.iter().all(|w| (*w - h * stable_factor.abs()).abs() <= rel * h);
            if !(ok_s && ok_u) {
                return Err(Error::CrossFail("affine image widths inconsistent with the branch factors".into()));
            }
        }
        ChartAction::Numeric { .. } => {
            for i in 0..s.resolution() {
                let t = s.sample_coord(i);
                for sgn in [-T::one(), T::one()] {
                    let p = s.chart_point(t, s.mid[i] + sgn * s.half[i]);
                    let q = action_forward(action, map, rect, m, p)?;
                    if (q[1].abs() - h).abs() > tau || !u.contains(q, tau) {
                        return Err(Error::CrossFail(format!("source boundary point {i} not mapped onto the target boundary")));
                    }
                }
            }
            for sgn in [-h, h] {
                for j in 0..5 {
                    let f = T::from_usize(j).unwrap() / T::lit(4.0);
                    let p = [sgn, s.mid_at(sgn) + s.half_at(sgn) * (T::lit(2.0) * f - T::one())];
                    let q = action_forward(action, map, rect, m, p)?;
                    if ((q[0] - u.mid_at(q[1])).abs() - u.half_at(q[1])).abs() > tau {
                        return Err(Error::CrossFail("source side not mapped onto the target side".into()));
                    }
                }
            }
        }
    }
    Ok(())
}

fn parallelogram_diameter<T: Real>(a: T, b: T, cos: T) -> T {
    (a * a + b * b + T::lit(2.0) * a * b * cos.abs()).sqrt()
}

struct Profile<T> {
    diameters: Vec<T>,
    stable: Option<Vec<T>>,
    unstable: Option<Vec<T>>,
}

fn diameter_profile<T: Real>(
    map: &dyn MapSystem<T>,
    rect: &Rectangle<T>,
    action: &ChartAction<T>,
    m: usize,
    s: &Cylinder<T>,
) -> Result<Profile<T>> {
    match action {
        ChartAction::Affine { tangent, .. } => {
            let side_s = T::lit(2.0) * rect.half_width * rect.scale;
            let side_u = (s.thickness() + T::lit(2.0) * rect.half_width * s.lipschitz()) * rect.scale;
            let mut diameters = Vec::with_capacity(m);
            let mut st = Vec::with_capacity(m);
            let mut un = Vec::with_capacity(m);
            for j in 0..m {
                let a = side_s * tangent.stable_norms[j];
                let b = side_u * tangent.unstable_norms[j];
                let cos = linalg::dot(tangent.stable_dirs[j], tangent.unstable_dirs[j]);
                diameters.push(parallelogram_diameter(a, b, cos));
                st.push(a);
                un.push(b);
            }
            Ok(Profile { diameters, stable: Some(st), unstable: Some(un) })
        }
        ChartAction::Numeric { .. } => {
            let mut pts = s.boundary();
            for t in [-rect.half_width, rect.half_width] {
                for j in 1..4 {
                    let f = T::from_usize(j).unwrap() / T::lit(2.0) - T::one();
                    pts.push(s.chart_point(t, s.mid_at(t) + s.half_at(t) * f));
                }
            }
            let orbits = pts
                .iter()
                .map(|p| orbit(map, rect.from_chart(*p), m as i64))
                .collect::<Result<Vec<_>>>()?;
            let diameters = (0..m)
                .map(|j| {
                    let mut d = T::zero();
                    for a in 0..orbits.len() {
                        for b in a + 1..orbits.len() {
                            d = d.max(orbits[a][j].distance(&orbits[b][j]));
                        }
                    }
                    d
                })
                .collect();
            Ok(Profile { diameters, stable: None, unstable: None })
        }
    }
}

/// Largest `(ρ, s, m)` residual over an `n × n` grid of the branch source.
pub fn grid_quasi_genericity<T: Real>(
    map: &dyn MapSystem<T>,
    rect: &Rectangle<T>,
    branch: &HyperbolicBranch<T>,
    family: &TestFunctionFamily<T>,
    mu_ref: &ReferenceMeasure<T>,
    rho: T,
    s: usize,
    n: usize,
) -> Result<QgOutcome<T>> {
    check_rho_s(rho, s, family)?;
    check_reference(mu_ref, s)?;
    let m = branch.return_time;
    let per_point = branch
        .source
        .grid(n)
        .into_iter()
        .map(|xi| {
            let mut pts = branch.orbit_of(map, rect, xi, m)?;
            pts.truncate(m);
            Ok(average_residuals(&pts, family, mu_ref, s))
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = (0..s)
        .map(|i| per_point.iter().map(|r| r[i]).fold(T::zero(), T::max))
        .collect();
    Ok(QgOutcome::from_residuals(worst, rho - mu_ref.integral_error))
}

/// Builds and certifies the branch `f^m : S → U` through `z`, in the order
/// crossing, cones, diameters, base-point quasi-genericity at `ρ/2`.
#[allow(clippy::too_many_arguments)]
pub fn certify_branch<T: Real>(
    map: &dyn MapSystem<T>,
    rect: &Rectangle<T>,
    cones: &ConeField<T>,
    z: Point<T>,
    m: usize,
    family: &TestFunctionFamily<T>,
    mu_ref: &ReferenceMeasure<T>,
    rho: T,
    s: usize,
) -> Result<HyperbolicBranch<T>> {
    check_rho_s(rho, s, family)?;
    check_reference(mu_ref, s)?;
    if m == 0 {
        return Err(Error::InvalidInput("return time must be positive".into()));
    }
    let pts = orbit(map, z, m as i64)?;
    let landing = pts[m];
    if !rect.in_core(&z) || !rect.in_core(&landing) {
        return Err(Error::InvalidInput("base point and its return must lie in the rectangle core".into()));
    }
    let base = rect.to_chart(&z);
    let image = rect.to_chart(&landing);
    let tangent = if map.is_affine() { adapted_tangent(map, rect, &pts)? } else { None };
    let action = match tangent {
        Some(t) => ChartAction::Affine {
            base,
            image,
            stable_factor: t.stable_sign * t.stable_norms[m],
            unstable_factor: t.unstable_sign * t.unstable_norms[m],
            tangent: t,
        },
        None if m <= NUMERIC_MAX_M => ChartAction::Numeric { base, image },
        None => {
            return Err(Error::CrossFail(format!(
                "return time {m} too long for direct iteration of a non-affine branch"
            )))
        }
    };

    // (a) crossing
    let h = rect.half_width;
    let full_s = Cylinder::full(CylinderKind::Stable, h);
    let full_u = Cylinder::full(CylinderKind::Unstable, h);
    let source = pull_back(&action, map, rect, m, &full_s, &full_s)?;
    let target = push_forward(&action, map, rect, m, &full_u, &full_u)?;
    check_crossing(map, rect, &action, m, &source, &target)?;
    if !source.is_admissible(cones.gamma) || !target.is_admissible(cones.gamma) {
        return Err(Error::CrossFail("branch cylinders are not admissible".into()));
    }

    // (b) cones
    let cone_certificate = cone_preserved(map, &source, m, cones, CONE_SAMPLES)?;
    if !cone_certificate.pass {
        let w = cone_certificate.witness.clone().unwrap_or(crate::pesin::ConeWitness { point: [f64::NAN; 2], vector: [f64::NAN; 2] });
        return Err(Error::ConeFail { point: w.point, vector: w.vector });
    }

    // (c) diameters
    let delta = delta_modulus(family, rho, s)?;
    let profile = diameter_profile(map, rect, &action, m, &source)?;
    if let Some((j, d)) = profile.diameters.iter().enumerate().find(|(_, d)| **d > delta) {
        return Err(Error::DiamFail { j, diameter: d.as_f64(), delta: delta.as_f64() });
    }

    // (d) base point at ρ/2
    let half_rho = rho / T::lit(2.0);
    let qg = quasi_generic_point(map, z, m, family, mu_ref, half_rho, s)?;
    if !qg.pass {
        return Err(Error::QgFail { index: qg.witness.unwrap_or(0), residual: qg.max_residual.as_f64() });
    }

    let mut branch = HyperbolicBranch {
        return_time: m,
        base_point: z,
        landing_point: landing,
        source,
        target,
        action,
        cone_certificate,
        diameter_profile: profile.diameters,
        stable_extent: profile.stable,
        unstable_extent: profile.unstable,
        qg_certificate: QgCertificate {
            rho,
            s,
            delta,
            base_residual: qg.max_residual,
            grid_residual: T::zero(),
            grid_samples: QG_GRID,
            grid_pass: false,
        },
        landing_ell: None,
    };
    let grid = grid_quasi_genericity(map, rect, &branch, family, mu_ref, rho, s, QG_GRID)?;
    branch.qg_certificate.grid_residual = grid.max_residual;
    branch.qg_certificate.grid_pass = grid.pass;
    Ok(branch)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandingCheck<T> {
    pub horizon: usize,
    pub chi: T,
    pub ell0: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSearch<T> {
    pub seeds: Vec<Point<T>>,
    pub n_min: usize,
    pub m_max: usize,
    /// Maximal number of (seed, return time) candidates certified.
    pub budget: usize,
    /// Later return times tried per seed when its cylinders overlap.
    pub repair_budget: usize,
    pub landing: Option<LandingCheck<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSet<T> {
    pub rho: T,
    pub s: usize,
    pub delta: T,
    pub gamma: T,
    pub branches: Vec<HyperbolicBranch<T>>,
    pub examined: usize,
    pub repairs: usize,
}

impl<T: Real> BranchSet<T> {
    pub fn return_times(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.return_time).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn separation_tolerance<T: Real>(a: &HyperbolicBranch<T>, b: &HyperbolicBranch<T>) -> T {
    if a.is_affine() && b.is_affine() {
        T::zero()
    } else {
        T::lit(10.0 * TAU_BRANCH)
    }
}

/// Whether two branches have disjoint sources and disjoint targets.
pub fn branches_disjoint<T: Real>(a: &HyperbolicBranch<T>, b: &HyperbolicBranch<T>) -> bool {
    let tol = separation_tolerance(a, b);
    a.source.separation(&b.source) > tol && a.target.separation(&b.target) > tol
}

/// True when every point lies (within `1e-12`) on the periodic orbit of the
/// first one, with period at most `max_period`.
pub fn single_periodic_orbit<T: Real>(map: &dyn MapSystem<T>, points: &[Point<T>], max_period: usize) -> bool {
    let Some(p0) = points.first() else { return false };
    let tol = T::lit(1e-12);
    let Ok(orb) = orbit(map, *p0, max_period as i64) else { return false };
    let Some(period) = (1..orb.len()).find(|&k| orb[k].distance(p0) < tol) else { return false };
    points.iter().all(|p| orb[..period].iter().any(|q| q.distance(p) < tol))
}

fn landing_ok<T: Real>(map: &dyn MapSystem<T>, b: &mut HyperbolicBranch<T>, check: &Option<LandingCheck<T>>) -> std::result::Result<(), String> {
    let Some(c) = check else { return Ok(()) };
    match pesin_certificate(map, b.landing_point, c.horizon, c.chi) {
        Ok(cert) if cert.within(c.ell0) => {
            b.landing_ell = Some(cert.ell);
            Ok(())
        }
        Ok(cert) => Err(format!("landing point Pesin constant {} above {}", cert.ell, c.ell0)),
        Err(e) => Err(format!("landing point: {e}")),
    }
}

fn next_return<T: Real>(map: &dyn MapSystem<T>, rect: &Rectangle<T>, z: Point<T>, after: usize, m_max: usize) -> Option<usize> {
    let p = iterate(map, z, after as i64).ok()?;
    first_return(map, rect, p, 1, m_max.checked_sub(after)?).map(|k| k + after)
}

const CERTIFY_CHUNK: usize = 64;

/// Searches for `n_target` certified branches with pairwise disjoint
/// sources and targets. Overlapping candidates are repaired by moving to
/// later return times of the same seed.
#[allow(clippy::too_many_arguments)]
pub fn build_branch_set<T: Real>(
    map: &dyn MapSystem<T>,
    rect: &Rectangle<T>,
    cones: &ConeField<T>,
    family: &TestFunctionFamily<T>,
    mu_ref: &ReferenceMeasure<T>,
    rho: T,
    s: usize,
    n_target: usize,
    search: &BranchSearch<T>,
) -> Result<BranchSet<T>> {
    if n_target < 2 {
        return Err(Error::InvalidInput("a branch set needs at least two branches".into()));
    }
    let delta = delta_modulus(family, rho, s)?;
    let mut diagnostics = Vec::new();
    let mut accepted: Vec<HyperbolicBranch<T>> = Vec::new();
    let mut examined = 0;
    let mut repairs = 0;
    let candidates = if search.budget == 0 {
        Vec::new()
    } else {
        detect_returns(map, rect, &search.seeds, search.n_min, search.m_max)?
    };
    let mut cursor = 0;
    'outer: while cursor < candidates.len() && examined < search.budget && accepted.len() < n_target {
        let take = CERTIFY_CHUNK.min(search.budget - examined).min(candidates.len() - cursor);
        let chunk = &candidates[cursor..cursor + take];
        cursor += take;
        let results: Vec<Result<HyperbolicBranch<T>>> = chunk
            .par_iter()
            .map(|(z, m)| certify_branch(map, rect, cones, *z, *m, family, mu_ref, rho, s))
            .collect();
        for ((z, m), res) in chunk.iter().zip(results) {
            examined += 1;
            let mut branch = match res {
                Ok(b) => b,
                Err(e) => {
                    diagnostics.push(format!("seed {:?} m={m}: {e}", z.coords));
                    continue;
                }
            };
            let mut attempts = 0;
            loop {
                let verdict = landing_ok(map, &mut branch, &search.landing).and_then(|_| {
                    match accepted.iter().position(|a| !branches_disjoint(a, &branch)) {
                        Some(i) => Err(format!("cylinders overlap branch {i}")),
                        None => Ok(()),
                    }
                });
                match verdict {
                    Ok(()) => {
                        accepted.push(branch);
                        break;
                    }
                    Err(msg) => {
                        diagnostics.push(format!("seed {:?} m={}: {msg}", z.coords, branch.return_time));
                        if attempts >= search.repair_budget || examined >= search.budget {
                            break;
                        }
                        let Some(m2) = next_return(map, rect, *z, branch.return_time, search.m_max) else { break };
                        attempts += 1;
                        repairs += 1;
                        examined += 1;
                        match certify_branch(map, rect, cones, *z, m2, family, mu_ref, rho, s) {
                            Ok(b) => branch = b,
                            Err(e) => {
                                diagnostics.push(format!("seed {:?} m={m2}: {e}", z.coords));
                                break;
                            }
                        }
                    }
                }
            }
            if accepted.len() >= n_target || examined >= search.budget {
                break 'outer;
            }
        }
    }
    if accepted.len() < n_target {
        return Err(Error::BudgetExhausted { found: accepted.len(), examined, diagnostics });
    }
    let bases: Vec<_> = accepted.iter().map(|b| b.base_point).collect();
    let max_period = accepted.iter().map(|b| b.return_time).sum();
    if single_periodic_orbit(map, &bases, max_period) {
        return Err(Error::AtomicBranchSet);
    }
    Ok(BranchSet { rho, s, delta, gamma: cones.gamma, branches: accepted, examined, repairs })
}
