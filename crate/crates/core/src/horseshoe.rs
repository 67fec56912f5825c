//! Variable-time horseshoes: symbolic coding over hyperbolic branches,
//! cylinder refinement, coded points and their saturated `f`-orbits.

use crate::branches::{branches_disjoint, HyperbolicBranch, TAU_BRANCH};
use crate::dynsys::{MapSystem, Point};
use crate::error::{Error, Result};
use crate::linalg::Vec2;
use crate::pesin::{Cylinder, CylinderKind, Rectangle};
use crate::scalar::Real;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Default bound on the number of cylinders enumerated by [`refine`].
pub const DEFAULT_CAP: u64 = 1 << 20;
/// Depth of the cylinders used to code periodic points.
pub const CODING_DEPTH: usize = 24;
/// Longest past or future accepted by [`point_from_word`].
pub const MAX_CODING_DEPTH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordKind {
    Forward,
    Backward,
    Periodic,
}

/// Finite word over the symbols `1..=N`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SymbolicWord {
    pub letters: Vec<usize>,
    pub kind: WordKind,
}

impl SymbolicWord {
    pub fn new(letters: Vec<usize>, kind: WordKind) -> Result<Self> {
        if letters.is_empty() {
            return Err(Error::InvalidInput("symbolic words are nonempty".into()));
        }
        if letters.contains(&0) {
            return Err(Error::InvalidInput("symbols start at 1".into()));
        }
        Ok(Self { letters, kind })
    }

    pub fn periodic(letters: &[usize]) -> Result<Self> {
        Self::new(letters.to_vec(), WordKind::Periodic)
    }

    pub fn forward(letters: &[usize]) -> Result<Self> {
        Self::new(letters.to_vec(), WordKind::Forward)
    }

    pub fn backward(letters: &[usize]) -> Result<Self> {
        Self::new(letters.to_vec(), WordKind::Backward)
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn check_alphabet(&self, n: usize) -> Result<()> {
        match self.letters.iter().find(|&&l| l > n) {
            Some(l) => Err(Error::InvalidInput(format!("symbol {l} outside 1..={n}"))),
            None => Ok(()),
        }
    }

    /// Cyclic left rotation by `k` (periodic words).
    pub fn rotate(&self, k: usize) -> Self {
        let n = self.letters.len();
        let letters = (0..n).map(|i| self.letters[(i + k) % n]).collect();
        Self { letters, kind: self.kind }
    }

    /// Lexicographically least rotation.
    pub fn canonical_rotation(&self) -> Self {
        (0..self.len()).map(|k| self.rotate(k)).min_by(|a, b| a.letters.cmp(&b.letters)).unwrap()
    }

    /// Length of the shortest word whose power is this word.
    pub fn primitive_period(&self) -> usize {
        let n = self.len();
        (1..=n).find(|&p| n % p == 0 && (0..n).all(|i| self.letters[i] == self.letters[i % p])).unwrap()
    }

    /// `Σ m_{w_j}` over one period.
    pub fn period(&self, return_times: &[usize]) -> usize {
        self.letters.iter().map(|&l| return_times[l - 1]).sum()
    }
}

impl fmt::Display for SymbolicWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.letters.iter().all(|&l| l < 10) {
            for l in &self.letters {
                write!(f, "{l}")?;
            }
            Ok(())
        } else {
            let s: Vec<String> = self.letters.iter().map(|l| l.to_string()).collect();
            write!(f, "{}", s.join("."))
        }
    }
}

/// Lyndon words (aperiodic necklace representatives) over `1..=n` of
/// length at most `max_len`, in lexicographic order.
pub fn lyndon_words(n: usize, max_len: usize) -> Vec<SymbolicWord> {
    let mut out = Vec::new();
    if n == 0 || max_len == 0 {
        return out;
    }
    let mut w: Vec<usize> = vec![0];
    while !w.is_empty() {
        out.push(SymbolicWord { letters: w.iter().map(|x| x + 1).collect(), kind: WordKind::Periodic });
        let m = w.len();
        while w.len() < max_len {
            let c = w[w.len() - m];
            w.push(c);
        }
        while w.last() == Some(&(n - 1)) {
            w.pop();
        }
        if let Some(last) = w.last_mut() {
            *last += 1;
        }
    }
    out
}

/// All words of exactly `len` letters over `1..=n`, in lexicographic order.
pub fn all_words(n: usize, len: usize) -> Vec<Vec<usize>> {
    let count = n.pow(len as u32);
    (0..count).map(|idx| word_of_index(idx, n, len)).collect()
}

fn word_of_index(mut idx: usize, n: usize, len: usize) -> Vec<usize> {
    let mut w = vec![0; len];
    for k in (0..len).rev() {
        w[k] = idx % n + 1;
        idx /= n;
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableTimeHorseshoe<T> {
    pub rectangle: Rectangle<T>,
    pub branches: Vec<HyperbolicBranch<T>>,
    /// `crossing_matrix[i][j]`: `S_i` crosses `U_j` fully.
    pub crossing_matrix: Vec<Vec<bool>>,
    /// A single branch: the coding space is one point.
    pub degenerate: bool,
}

fn crosses<T: Real>(s: &Cylinder<T>, u: &Cylinder<T>) -> bool {
    let tau = T::lit(TAU_BRANCH);
    s.spans_fully(tau) && u.spans_fully(tau) && s.lipschitz() * u.lipschitz() < T::one()
}

/// Assembles the horseshoe after re-checking disjointness and full crossing.
pub fn build<T: Real>(branches: Vec<HyperbolicBranch<T>>, rectangle: Rectangle<T>) -> Result<VariableTimeHorseshoe<T>> {
    if branches.is_empty() {
        return Err(Error::InvalidInput("a horseshoe needs at least one branch".into()));
    }
    let n = branches.len();
    for i in 0..n {
        for j in i + 1..n {
            if !branches_disjoint(&branches[i], &branches[j]) {
                return Err(Error::Overlap(format!("branches {} and {}", i + 1, j + 1)));
            }
        }
    }
    let mut crossing_matrix = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            if !crosses(&branches[i].source, &branches[j].target) {
                return Err(Error::CrossingIncomplete { i: i + 1, j: j + 1 });
            }
            crossing_matrix[i][j] = true;
        }
    }
    Ok(VariableTimeHorseshoe { rectangle, branches, crossing_matrix, degenerate: n == 1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodedPoint<T> {
    pub point: Point<T>,
    pub chart: Vec2<T>,
    /// Largest distance from `point` to a corner of the coding cylinders'
    /// intersection, plus a rounding floor.
    pub error_radius: T,
    pub corners: [Vec2<T>; 4],
    /// Offset from the base point of the first branch, on the affine track.
    /// Unstable offsets of long branches lie far below the resolution of
    /// `chart`, so orbits are generated from this instead.
    pub offset: Option<Vec2<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturatedOrbit<T> {
    pub points: Vec<Point<T>>,
    /// Bound on the distance between each point and the true orbit point,
    /// propagated from the coding error through each branch.
    pub error_radius: T,
}

impl<T: Real> VariableTimeHorseshoe<T> {
    pub fn n_symbols(&self) -> usize {
        self.branches.len()
    }

    pub fn return_times(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.return_time).collect()
    }

    pub fn is_affine(&self) -> bool {
        self.branches.iter().all(|b| b.is_affine())
    }

    /// `λ̄`: the largest unstable-width contraction over all branches.
    pub fn lambda_bar(&self) -> T {
        self.branches.iter().map(|b| b.cone_certificate.unstable_contraction()).fold(T::zero(), T::max)
    }

    /// Stable counterpart of [`Self::lambda_bar`] for unstable cylinders.
    pub fn lambda_bar_stable(&self) -> T {
        self.branches.iter().map(|b| b.cone_certificate.stable_contraction()).fold(T::zero(), T::max)
    }

    fn branch(&self, letter: usize) -> Result<&HyperbolicBranch<T>> {
        self.branches
            .get(letter.wrapping_sub(1))
            .ok_or_else(|| Error::InvalidInput(format!("symbol {letter} outside 1..={}", self.n_symbols())))
    }

    /// Chart tolerance for containment checks between cylinders.
    pub fn nesting_tolerance(&self) -> T {
        if self.is_affine() {
            T::lit(64.0) * T::epsilon() * self.rectangle.half_width
        } else {
            T::lit(TAU_BRANCH)
        }
    }

    /// `S_{w₁…w_n}`: points whose next `n` branches are `w₁, …, w_n`.
    pub fn stable_cylinder(&self, map: &dyn MapSystem<T>, future: &[usize]) -> Result<Cylinder<T>> {
        let Some((&last, rest)) = future.split_last() else {
            return Ok(Cylinder::full(CylinderKind::Stable, self.rectangle.half_width));
        };
        let mut c = self.branch(last)?.source.clone();
        for &l in rest.iter().rev() {
            c = self.branch(l)?.pull_back_stable(map, &self.rectangle, &c)?;
        }
        Ok(c)
    }

    /// `U_{w₁…w_n}`: points whose last `n` branches were `w₁, …, w_n`
    /// (oldest first).
    pub fn unstable_cylinder(&self, map: &dyn MapSystem<T>, past: &[usize]) -> Result<Cylinder<T>> {
        let Some((&first, rest)) = past.split_first() else {
            return Ok(Cylinder::full(CylinderKind::Unstable, self.rectangle.half_width));
        };
        let mut c = self.branch(first)?.target.clone();
        for &l in rest {
            c = self.branch(l)?.push_forward_unstable(map, &self.rectangle, &c)?;
        }
        Ok(c)
    }

    fn coded(&self, s: &Cylinder<T>, u: &Cylinder<T>, depth: usize) -> CodedPoint<T> {
        let rect = &self.rectangle;
        let center = intersect(s, u, T::zero(), T::zero());
        let one = T::one();
        let corners = [(-one, -one), (-one, one), (one, -one), (one, one)].map(|(a, b)| intersect(s, u, a, b));
        let point = rect.from_chart(center);
        let mut r = T::zero();
        for c in &corners {
            r = r.max(rect.from_chart(*c).distance(&point));
        }
        let floor = rect.scale * T::epsilon() * T::lit(16.0) * T::from_usize(depth + 1).unwrap();
        CodedPoint { point, chart: center, error_radius: r + floor, corners, offset: None }
    }

    /// Centre of `U_past ∩ S_future`. `past` lists symbols oldest first.
    pub fn point_from_word(&self, map: &dyn MapSystem<T>, past: &[usize], future: &[usize]) -> Result<CodedPoint<T>> {
        let depth = past.len().max(future.len());
        if depth > MAX_CODING_DEPTH {
            return Err(Error::CapExceeded { requested: depth as u64, cap: MAX_CODING_DEPTH as u64 });
        }
        let s = self.stable_cylinder(map, future)?;
        let u = self.unstable_cylinder(map, past)?;
        Ok(self.coded(&s, &u, past.len() + future.len()))
    }

    /// Past and future of the periodic point of `word` rotated by `k`,
    /// truncated to `depth` symbols each.
    pub fn periodic_coding(word: &SymbolicWord, k: usize, depth: usize) -> (Vec<usize>, Vec<usize>) {
        let p = word.len();
        let future = (0..depth).map(|j| word.letters[(k + j) % p]).collect();
        let past = (0..depth).map(|j| word.letters[(k + p * depth - depth + j) % p]).collect();
        (past, future)
    }

    /// The `F`-periodic point with itinerary `word`, starting at letter `k`.
    pub fn periodic_point(&self, map: &dyn MapSystem<T>, word: &SymbolicWord, k: usize) -> Result<CodedPoint<T>> {
        word.check_alphabet(self.n_symbols())?;
        let (past, future) = Self::periodic_coding(word, k, self.coding_depth(word));
        let mut coded = self.point_from_word(map, &past, &future)?;
        if let Some(offsets) = self.affine_offsets(word) {
            let d = offsets[k % word.len()];
            let base = self.branch(word.letters[k % word.len()])?.action.base();
            coded.chart = [base[0] + d[0], base[1] + d[1]];
            coded.point = self.rectangle.from_chart(coded.chart);
            coded.offset = Some(d);
        }
        // return defect of one period: stable coordinate pushed forward,
        // unstable coordinate pulled back (both contracting)
        let p = word.len();
        let mut fwd = coded.chart;
        let mut bwd = coded.chart;
        for j in 0..p {
            fwd = self.branch(word.letters[(k + j) % p])?.forward_chart(map, &self.rectangle, fwd)?;
            bwd = self.branch(word.letters[(k + p - 1 - j) % p])?.inverse_chart(map, &self.rectangle, bwd)?;
        }
        let defect = self.rectangle.from_chart([fwd[0], bwd[1]]).distance(&coded.point);
        coded.error_radius = coded.error_radius.max(defect);
        Ok(coded)
    }

    /// Coding depth for a periodic word: [`CODING_DEPTH`] symbols, reduced so
    /// that cylinder widths stay representable.
    fn coding_depth(&self, word: &SymbolicWord) -> usize {
        let worst = self
            .branches
            .iter()
            .map(|b| (T::one() / b.cone_certificate.unstable_contraction()).ln().as_f64())
            .fold(0.0, f64::max);
        if worst <= 0.0 {
            return CODING_DEPTH;
        }
        let fit = (600.0 / worst).floor() as usize;
        CODING_DEPTH.min(fit.max(word.len())).max(1)
    }

    /// Offsets `d_k = ξ_k − base_{w_k}` of the periodic orbit of `word`, from
    /// `d_{k+1} = (image_{w_k} − base_{w_{k+1}}) + A_{w_k} d_k`, iterated
    /// forward in the stable coordinate and backward in the unstable one.
    fn affine_offsets(&self, word: &SymbolicWord) -> Option<Vec<Vec2<T>>> {
        use crate::branches::ChartAction;
        let acts: Vec<_> = word
            .letters
            .iter()
            .map(|&l| match &self.branches.get(l.wrapping_sub(1))?.action {
                ChartAction::Affine { base, image, stable_factor, unstable_factor, .. } => {
                    Some((*base, *image, *stable_factor, *unstable_factor))
                }
                _ => None,
            })
            .collect::<Option<_>>()?;
        let p = acts.len();
        let gap: Vec<Vec2<T>> = (0..p)
            .map(|k| {
                let next = acts[(k + 1) % p].0;
                [acts[k].1[0] - next[0], acts[k].1[1] - next[1]]
            })
            .collect();
        let mut d = vec![[T::zero(), T::zero()]; p];
        for _ in 0..400 {
            let prev = d.clone();
            for k in 0..p {
                d[(k + 1) % p][0] = gap[k][0] + acts[k].2 * d[k][0];
            }
            for k in (0..p).rev() {
                d[k][1] = (d[(k + 1) % p][1] - gap[k][1]) / acts[k].3;
            }
            if d == prev {
                break;
            }
        }
        Some(d)
    }

    /// `L` points of the `f`-orbit following `itinerary`, each symbol `k`
    /// contributing `m_k` steps. At every return the orbit is re-projected
    /// onto the coded point of the shifted itinerary.
    pub fn saturate_orbit(&self, map: &dyn MapSystem<T>, itinerary: &SymbolicWord, len: usize) -> Result<SaturatedOrbit<T>> {
        itinerary.check_alphabet(self.n_symbols())?;
        if len == 0 {
            return Err(Error::InvalidInput("orbit length must be positive".into()));
        }
        let times = self.return_times();
        if itinerary.kind != WordKind::Periodic {
            let covered = itinerary.period(&times);
            if covered < len {
                return Err(Error::InsufficientItinerary { covered, needed: len });
            }
        }
        let p = itinerary.len();
        let periodic = itinerary.kind == WordKind::Periodic;
        let mut cache: Vec<Option<CodedPoint<T>>> = vec![None; if periodic { p } else { 0 }];
        let mut points = Vec::with_capacity(len);
        let mut radius = T::zero();
        let mut k = 0;
        while points.len() < len {
            let letter = itinerary.letters[k % p];
            let coded = if periodic {
                match &cache[k % p] {
                    Some(c) => c.clone(),
                    None => {
                        let c = self.periodic_point(map, itinerary, k % p)?;
                        cache[k % p] = Some(c.clone());
                        c
                    }
                }
            } else {
                let past_from = k.saturating_sub(CODING_DEPTH);
                let future_to = (k + CODING_DEPTH).min(p);
                self.point_from_word(map, &itinerary.letters[past_from..k], &itinerary.letters[k..future_to])?
            };
            let branch = self.branch(letter)?;
            let m = branch.return_time;
            let steps = (len - points.len()).min(m);
            if let Some(d) = coded.offset {
                let orb = branch.orbit_from_offset(map, &self.rectangle, d, m)?;
                let floor = T::lit(64.0) * T::epsilon() * T::from_usize(m + p).unwrap();
                radius = radius.max(coded.error_radius).max(floor);
                points.extend_from_slice(&orb[..steps]);
                k += 1;
                continue;
            }
            let orb = branch.orbit_of(map, &self.rectangle, coded.chart, m)?;
            for c in &coded.corners {
                let corner_orbit = branch.orbit_of(map, &self.rectangle, *c, m)?;
                for j in 0..m {
                    radius = radius.max(corner_orbit[j].distance(&orb[j]));
                }
            }
            radius = radius.max(coded.error_radius);
            points.extend_from_slice(&orb[..steps]);
            k += 1;
        }
        Ok(SaturatedOrbit { points, error_radius: radius })
    }
}

/// Solves `v = mid_S(u) + a·half_S(u)`, `u = mid_U(v) + b·half_U(v)`.
fn intersect<T: Real>(s: &Cylinder<T>, u: &Cylinder<T>, a: T, b: T) -> Vec2<T> {
    let mut x = u.mid_at(T::zero());
    let mut y = s.mid_at(x) + a * s.half_at(x);
    for _ in 0..200 {
        let nx = u.mid_at(y) + b * u.half_at(y);
        let ny = s.mid_at(nx) + a * s.half_at(nx);
        if nx == x && ny == y {
            break;
        }
        x = nx;
        y = ny;
    }
    [x, y]
}

fn nested<T: Real>(child: &Cylinder<T>, parent: &Cylinder<T>, tol: T) -> bool {
    let k = child.resolution().max(parent.resolution());
    let r = if child.resolution() >= parent.resolution() { child } else { parent };
    (0..k).all(|i| {
        let t = r.sample_coord(i);
        (child.mid_at(t) - parent.mid_at(t)).abs() + child.half_at(t) <= parent.half_at(t) + tol
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionalDiameters<T> {
    /// Largest extent of unstable cylinders along the stable axis.
    pub stable_direction: T,
    /// Largest extent of stable cylinders along the unstable axis.
    pub unstable_direction: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderRefinement<T> {
    pub depth: usize,
    pub n_symbols: usize,
    /// Indexed by the word read as a base-`N` number.
    pub stable_cylinders: Vec<Cylinder<T>>,
    pub unstable_cylinders: Vec<Cylinder<T>>,
    pub max_diameters: DirectionalDiameters<T>,
    /// Maximal directional diameters at depths `1..=depth`.
    pub level_diameters: Vec<DirectionalDiameters<T>>,
}

impl<T: Real> CylinderRefinement<T> {
    pub fn word(&self, index: usize) -> Vec<usize> {
        word_of_index(index, self.n_symbols, self.depth)
    }

    pub fn index(&self, word: &[usize]) -> usize {
        word.iter().fold(0, |acc, &l| acc * self.n_symbols + (l - 1))
    }

    pub fn count(&self) -> usize {
        self.stable_cylinders.len()
    }

    /// Plot-ready rows: kind, word, chart bounding box, thickness and
    /// phase-space width.
    pub fn to_csv(&self, rect: &Rectangle<T>) -> Result<String> {
        #[derive(Serialize)]
        struct Row {
            kind: &'static str,
            word: String,
            depth: usize,
            u_min: f64,
            u_max: f64,
            v_min: f64,
            v_max: f64,
            thickness: f64,
            width: f64,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for (kind, cyls) in [("stable", &self.stable_cylinders), ("unstable", &self.unstable_cylinders)] {
            for (idx, c) in cyls.iter().enumerate() {
                let h = c.half_width.as_f64();
                let lo = (0..c.resolution()).map(|i| (c.mid[i] - c.half[i]).as_f64()).fold(f64::INFINITY, f64::min);
                let hi = (0..c.resolution()).map(|i| (c.mid[i] + c.half[i]).as_f64()).fold(f64::NEG_INFINITY, f64::max);
                let (u, v) = match c.kind {
                    CylinderKind::Stable => ((-h, h), (lo, hi)),
                    CylinderKind::Unstable => ((lo, hi), (-h, h)),
                };
                let word = SymbolicWord { letters: self.word(idx), kind: WordKind::Forward };
                w.serialize(Row {
                    kind,
                    word: word.to_string(),
                    depth: self.depth,
                    u_min: u.0,
                    u_max: u.1,
                    v_min: v.0,
                    v_max: v.1,
                    thickness: c.thickness().as_f64(),
                    width: (c.thickness() * rect.scale).as_f64(),
                })
                .map_err(|e| Error::InvalidInput(e.to_string()))?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

fn level_diameters<T: Real>(rect: &Rectangle<T>, s: &[Cylinder<T>], u: &[Cylinder<T>]) -> DirectionalDiameters<T> {
    let fold = |cs: &[Cylinder<T>]| cs.iter().map(|c| c.thickness()).fold(T::zero(), T::max) * rect.scale;
    DirectionalDiameters { stable_direction: fold(u), unstable_direction: fold(s) }
}

/// Depth-`n` stable and unstable cylinders, with nesting verified at every
/// level.
pub fn refine<T: Real>(map: &dyn MapSystem<T>, hs: &VariableTimeHorseshoe<T>, n: usize, cap: u64) -> Result<CylinderRefinement<T>> {
    if n == 0 {
        return Err(Error::InvalidInput("refinement depth must be at least 1".into()));
    }
    let nsym = hs.n_symbols();
    let requested = (nsym as u64).checked_pow(n as u32).unwrap_or(u64::MAX);
    if requested > cap {
        return Err(Error::CapExceeded { requested, cap });
    }
    let rect = &hs.rectangle;
    let tol = hs.nesting_tolerance();
    let mut s: Vec<Cylinder<T>> = hs.branches.iter().map(|b| b.source.clone()).collect();
    let mut u: Vec<Cylinder<T>> = hs.branches.iter().map(|b| b.target.clone()).collect();
    let mut levels = vec![level_diameters(rect, &s, &u)];
    for d in 2..=n {
        let prev = nsym.pow(d as u32 - 1);
        let count = prev * nsym;
        let new_s: Vec<Cylinder<T>> = (0..count)
            .into_par_iter()
            .map(|idx| hs.branches[idx / prev].pull_back_stable(map, rect, &s[idx % prev]))
            .collect::<Result<_>>()?;
        let new_u: Vec<Cylinder<T>> = (0..count)
            .into_par_iter()
            .map(|idx| hs.branches[idx % nsym].push_forward_unstable(map, rect, &u[idx / nsym]))
            .collect::<Result<_>>()?;
        for idx in 0..count {
            if !nested(&new_s[idx], &s[idx / nsym], tol) {
                return Err(Error::Overlap(format!("stable cylinder {} not nested in its parent", idx)));
            }
            if !nested(&new_u[idx], &u[idx % prev], tol) {
                return Err(Error::Overlap(format!("unstable cylinder {} not nested in its parent", idx)));
            }
        }
        s = new_s;
        u = new_u;
        levels.push(level_diameters(rect, &s, &u));
    }
    Ok(CylinderRefinement {
        depth: n,
        n_symbols: nsym,
        max_diameters: *levels.last().unwrap(),
        level_diameters: levels,
        stable_cylinders: s,
        unstable_cylinders: u,
    })
}
