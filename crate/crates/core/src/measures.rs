//! Periodic-orbit measures on the saturate, the block decomposition of
//! Birkhoff sums, the `2ρ` / `3ρ` checks and the convergence experiment.

use crate::branches::{build_branch_set, delta_modulus, BranchSearch};
use crate::dynsys::{MapSystem, Point, ReferenceMeasure, TestFunctionFamily};
use crate::error::{Error, Result};
use crate::fixture::AffineFixture;
use crate::horseshoe::{build, lyndon_words, SymbolicWord, VariableTimeHorseshoe, WordKind};
use crate::pesin::{ConeField, Rectangle};
use crate::scalar::Real;
use num_traits::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::ops::Add;
use std::sync::Arc;

/// Default bound on `N^W` for the word enumeration of a stage.
pub const DEFAULT_WORD_CAP: u64 = 1 << 16;

fn check_rho_s<T: Real>(family: &TestFunctionFamily<T>, rho: T, s: usize) -> Result<()> {
    if !(rho > T::zero()) {
        return Err(Error::InvalidInput("ρ must be positive".into()));
    }
    if s == 0 || s > family.count() {
        return Err(Error::InvalidInput(format!("s = {s} outside 1..={}", family.count())));
    }
    Ok(())
}

/// `T(ρ, s) = ⌈max m_k · max_{i≤s} ‖φ_i‖∞ / ρ⌉`, with the ceiling guarded
/// against rounding just above an integer.
pub fn saturation_time<T: Real>(return_times: &[usize], family: &TestFunctionFamily<T>, rho: T, s: usize) -> Result<usize> {
    check_rho_s(family, rho, s)?;
    let m = return_times.iter().copied().max().ok_or_else(|| Error::InvalidInput("no return times".into()))?;
    let x = (T::from_usize(m).unwrap() * family.max_sup_norm(s) / rho).as_f64();
    let r = x.round();
    let t = if (x - r).abs() <= 1e-9 * x.max(1.0) { r } else { x.ceil() };
    Ok(t.max(1.0) as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    /// 1-based symbol.
    pub symbol: usize,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrbitDecomposition {
    pub l: usize,
    pub block_counts: Vec<usize>,
    pub l_prime: usize,
    pub remainder: usize,
    pub blocks: Vec<Block>,
}

/// Greedy split of `0..L` into whole return blocks along `itinerary`
/// (periodic words repeat) followed by a remainder.
pub fn decompose(return_times: &[usize], itinerary: &SymbolicWord, l: usize) -> Result<OrbitDecomposition> {
    if l == 0 {
        return Err(Error::InvalidInput("L must be positive".into()));
    }
    itinerary.check_alphabet(return_times.len())?;
    if itinerary.kind != WordKind::Periodic {
        let covered = itinerary.period(return_times);
        if covered < l {
            return Err(Error::InsufficientItinerary { covered, needed: l });
        }
    }
    let mut counts = vec![0; return_times.len()];
    let mut blocks = Vec::new();
    let mut pos = 0;
    for k in 0.. {
        let symbol = itinerary.letters[k % itinerary.len()];
        let m = return_times[symbol - 1];
        if pos + m > l {
            break;
        }
        blocks.push(Block { symbol, start: pos, len: m });
        counts[symbol - 1] += 1;
        pos += m;
    }
    let dec = OrbitDecomposition { l, block_counts: counts, l_prime: pos, remainder: l - pos, blocks };
    let max_m = return_times.iter().copied().max().unwrap_or(0);
    debug_assert_eq!(dec.l_prime + dec.remainder, l);
    debug_assert!(dec.remainder < max_m);
    Ok(dec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSum<S> {
    pub blocks: Vec<S>,
    pub per_symbol: Vec<S>,
    pub remainder: S,
}

impl<S: Clone + Zero + Add<Output = S>> SplitSum<S> {
    pub fn total(&self) -> S {
        self.per_symbol.iter().cloned().fold(S::zero(), |a, b| a + b) + self.remainder.clone()
    }
}

/// Splits `Σ_{j<L} values[j]` into block sums, their per-symbol totals and
/// the remainder sum.
pub fn split_sum<S: Clone + Zero + Add<Output = S>>(values: &[S], dec: &OrbitDecomposition) -> Result<SplitSum<S>> {
    if values.len() < dec.l {
        return Err(Error::InvalidInput(format!("{} values for L = {}", values.len(), dec.l)));
    }
    let sum = |r: &[S]| r.iter().cloned().fold(S::zero(), |a, b| a + b);
    let blocks: Vec<S> = dec.blocks.iter().map(|b| sum(&values[b.start..b.start + b.len])).collect();
    let mut per_symbol = vec![S::zero(); dec.block_counts.len()];
    for (b, v) in dec.blocks.iter().zip(&blocks) {
        per_symbol[b.symbol - 1] = per_symbol[b.symbol - 1].clone() + v.clone();
    }
    Ok(SplitSum { blocks, per_symbol, remainder: sum(&values[dec.l_prime..dec.l]) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbitMeasure<T> {
    pub word: SymbolicWord,
    pub period: usize,
    pub support: Vec<Point<T>>,
    pub integrals: Vec<T>,
    pub error_radius: T,
}

/// Equidistribution on the `f`-orbit of the periodic point coded by `word`.
pub fn periodic_measure<T: Real>(
    map: &dyn MapSystem<T>,
    hs: &VariableTimeHorseshoe<T>,
    word: &SymbolicWord,
    family: &TestFunctionFamily<T>,
    s: usize,
) -> Result<PeriodicOrbitMeasure<T>> {
    if word.kind != WordKind::Periodic {
        return Err(Error::InvalidInput("periodic measures need a periodic word".into()));
    }
    if s == 0 || s > family.count() {
        return Err(Error::InvalidInput(format!("s = {s} outside 1..={}", family.count())));
    }
    let period = word.period(&hs.return_times());
    let orbit = hs.saturate_orbit(map, word, period)?;
    let n = T::from_usize(period).unwrap();
    let integrals = (0..s)
        .map(|i| orbit.points.iter().fold(T::zero(), |a, p| a + family.functions[i].eval(p)) / n)
        .collect();
    Ok(PeriodicOrbitMeasure { word: word.clone(), period, support: orbit.points, integrals, error_radius: orbit.error_radius })
}

/// `O(ρ', s)` around a reference measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakStarNeighborhood<T> {
    pub rho: T,
    pub s: usize,
    pub reference: ReferenceMeasure<T>,
}

impl<T: Real> WeakStarNeighborhood<T> {
    pub fn new(rho: T, s: usize, reference: ReferenceMeasure<T>) -> Result<Self> {
        if !(rho > T::zero()) {
            return Err(Error::InvalidInput("neighborhood radius must be positive".into()));
        }
        if s == 0 || s > reference.integrals.len() {
            return Err(Error::InvalidInput(format!("s = {s} outside 1..={}", reference.integrals.len())));
        }
        Ok(Self { rho, s, reference })
    }

    /// `max_{i≤s} |∫φ_i dν − ∫φ_i dμ|`.
    pub fn distance(&self, integrals: &[T]) -> T {
        integrals[..self.s]
            .iter()
            .zip(&self.reference.integrals)
            .fold(T::zero(), |a, (x, y)| a.max((*x - *y).abs()))
    }

    pub fn contains(&self, integrals: &[T], slack: T) -> bool {
        self.distance(integrals) < self.rho + slack
    }
}

/// Widening of every threshold: coding error through the test functions,
/// plus the reference measure's own error.
pub fn error_slack<T: Real>(error_radius: T, family: &TestFunctionFamily<T>, s: usize, mu_ref: &ReferenceMeasure<T>) -> T {
    error_radius * family.max_lipschitz(s) + mu_ref.integral_error
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoRhoOutcome<T> {
    pub pass: bool,
    pub l: usize,
    pub max_residual: T,
    pub threshold: T,
    pub slack: T,
    pub residuals: Vec<T>,
}

/// Birkhoff residual over `L` steps of the saturated orbit of `word`,
/// against `2ρ` plus slack. Requires `L ≥ T(ρ, s)`.
#[allow(clippy::too_many_arguments)]
pub fn check_two_rho<T: Real>(
    map: &dyn MapSystem<T>,
    hs: &VariableTimeHorseshoe<T>,
    word: &SymbolicWord,
    l: usize,
    family: &TestFunctionFamily<T>,
    mu_ref: &ReferenceMeasure<T>,
    rho: T,
    s: usize,
) -> Result<TwoRhoOutcome<T>> {
    let t = saturation_time(&hs.return_times(), family, rho, s)?;
    if l < t {
        return Err(Error::InvalidInput(format!("L = {l} below saturation time {t}")));
    }
    if mu_ref.integrals.len() < s {
        return Err(Error::InvalidInput("reference measure has fewer than s integrals".into()));
    }
    let orbit = hs.saturate_orbit(map, word, l)?;
    let n = T::from_usize(l).unwrap();
    let residuals: Vec<T> = (0..s)
        .map(|i| {
            let avg = orbit.points.iter().fold(T::zero(), |a, p| a + family.functions[i].eval(p)) / n;
            (avg - mu_ref.integrals[i]).abs()
        })
        .collect();
    let max_residual = residuals.iter().copied().fold(T::zero(), T::max);
    let slack = error_slack(orbit.error_radius, family, s, mu_ref);
    let threshold = T::lit(2.0) * rho;
    Ok(TwoRhoOutcome { pass: max_residual < threshold + slack, l, max_residual, threshold, slack, residuals })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeRhoOutcome<T> {
    pub pass: bool,
    pub distance: T,
    pub threshold: T,
    pub slack: T,
}

/// Whether a candidate measure lies in `O(3ρ, s)` (plus slack).
pub fn check_three_rho<T: Real>(
    candidate: &PeriodicOrbitMeasure<T>,
    family: &TestFunctionFamily<T>,
    mu_ref: &ReferenceMeasure<T>,
    rho: T,
    s: usize,
) -> Result<ThreeRhoOutcome<T>> {
    check_rho_s(family, rho, s)?;
    if candidate.integrals.len() < s {
        return Err(Error::InvalidInput("candidate has fewer than s integrals".into()));
    }
    let threshold = T::lit(3.0) * rho;
    let nb = WeakStarNeighborhood::new(threshold, s, mu_ref.clone())?;
    let distance = nb.distance(&candidate.integrals);
    let slack = error_slack(candidate.error_radius, family, s, mu_ref);
    Ok(ThreeRhoOutcome { pass: distance < threshold + slack, distance, threshold, slack })
}

/// Birkhoff horizon for the `2ρ ⇒ 3ρ` chain at a candidate of period `P`.
pub fn chain_horizon(saturation_time: usize, period: usize) -> usize {
    saturation_time.max(10 * period)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureRow {
    pub word: String,
    /// Least rotation of the word's primitive root.
    pub cyclic_class: String,
    pub length: usize,
    pub period: usize,
    pub distance: f64,
    pub slack: f64,
    pub pass: bool,
}

fn primitive_class(word: &SymbolicWord) -> SymbolicWord {
    let root = SymbolicWord { letters: word.letters[..word.primitive_period()].to_vec(), kind: WordKind::Periodic };
    root.canonical_rotation()
}

/// `3ρ` check for every word of length `1..=max_len`. Measures are
/// computed once per cyclic class (rotations and powers share an orbit).
#[allow(clippy::too_many_arguments)]
pub fn measure_sweep<T: Real>(
    map: &dyn MapSystem<T>,
    hs: &VariableTimeHorseshoe<T>,
    family: &TestFunctionFamily<T>,
    mu_ref: &ReferenceMeasure<T>,
    rho: T,
    s: usize,
    max_len: usize,
) -> Result<Vec<MeasureRow>> {
    let n = hs.n_symbols();
    let classes = lyndon_words(n, max_len);
    let outcomes: Vec<(SymbolicWord, ThreeRhoOutcome<T>)> = classes
        .par_iter()
        .map(|w| {
            let m = periodic_measure(map, hs, w, family, s)?;
            Ok((w.clone(), check_three_rho(&m, family, mu_ref, rho, s)?))
        })
        .collect::<Result<_>>()?;
    let by_class: HashMap<Vec<usize>, ThreeRhoOutcome<T>> = outcomes.into_iter().map(|(w, o)| (w.letters, o)).collect();
    let times = hs.return_times();
    let mut rows = Vec::new();
    for len in 1..=max_len {
        for letters in crate::horseshoe::all_words(n, len) {
            let word = SymbolicWord { letters, kind: WordKind::Periodic };
            let class = primitive_class(&word);
            let o = by_class[&class.letters];
            rows.push(MeasureRow {
                word: word.to_string(),
                cyclic_class: class.to_string(),
                length: len,
                period: word.period(&times),
                distance: o.distance.as_f64(),
                slack: o.slack.as_f64(),
                pass: o.pass,
            });
        }
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[MeasureRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    if rows.is_empty() {
        w.write_record(["word", "cyclic_class", "length", "period", "distance", "slack", "pass"])
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// A horseshoe together with the map it lives in.
pub struct Stage<T: Real> {
    pub map: Arc<dyn MapSystem<T>>,
    pub horseshoe: VariableTimeHorseshoe<T>,
}

/// Produces a certified horseshoe for given `(ρ, s)`.
pub trait HorseshoeSource<T: Real>: Sync {
    fn describe(&self) -> String;
    fn stage(&self, family: &TestFunctionFamily<T>, mu_ref: &ReferenceMeasure<T>, rho: T, s: usize) -> Result<Stage<T>>;
}

/// The affine fixture, rescaled at every stage so that its pieces fit
/// inside `δ(ρ, s)`.
#[derive(Debug, Clone, Copy)]
pub struct FixtureSource {
    pub gamma: f64,
}

impl<T: Real> HorseshoeSource<T> for FixtureSource {
    fn describe(&self) -> String {
        "affine-fixture".into()
    }

    fn stage(&self, family: &TestFunctionFamily<T>, mu_ref: &ReferenceMeasure<T>, rho: T, s: usize) -> Result<Stage<T>> {
        let delta = delta_modulus(family, rho, s)?;
        let fx = AffineFixture::for_delta(delta.as_f64());
        let horseshoe = fx.horseshoe(family, mu_ref, rho, s, T::lit(self.gamma))?;
        Ok(Stage { map: Arc::new(fx), horseshoe })
    }
}

/// Branch search in a fixed map and rectangle.
pub struct SearchSource<T: Real> {
    pub map: Arc<dyn MapSystem<T>>,
    pub rectangle: Rectangle<T>,
    pub gamma: T,
    pub n_branches: usize,
    pub search: BranchSearch<T>,
}

impl<T: Real> HorseshoeSource<T> for SearchSource<T> {
    fn describe(&self) -> String {
        format!("search in {}", self.map.name())
    }

    fn stage(&self, family: &TestFunctionFamily<T>, mu_ref: &ReferenceMeasure<T>, rho: T, s: usize) -> Result<Stage<T>> {
        let cones = ConeField::new(self.rectangle.clone(), self.gamma)?;
        let set = build_branch_set(self.map.as_ref(), &self.rectangle, &cones, family, mu_ref, rho, s, self.n_branches, &self.search)?;
        let horseshoe = build(set.branches, self.rectangle.clone())?;
        Ok(Stage { map: self.map.clone(), horseshoe })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry<T> {
    pub rho: T,
    pub s: usize,
}

/// `ρ` strictly decreasing and positive, `s` nondecreasing and positive.
/// On failure returns the entry index, the offending field and a message.
pub fn validate_schedule<T: Real>(schedule: &[ScheduleEntry<T>]) -> std::result::Result<(), (usize, &'static str, String)> {
    for (i, e) in schedule.iter().enumerate() {
        if !(e.rho > T::zero()) {
            return Err((i, "rho", "ρ must be positive".into()));
        }
        if e.s == 0 {
            return Err((i, "s", "s must be positive".into()));
        }
        if i > 0 {
            if !(e.rho < schedule[i - 1].rho) {
                return Err((i, "rho", "ρ must be strictly decreasing".into()));
            }
            if e.s < schedule[i - 1].s {
                return Err((i, "s", "s must be nondecreasing".into()));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    /// Bound on `N^W` for the word length `W` of each stage.
    pub word_cap: u64,
    /// Optional further bound on `W`.
    pub max_word_len: Option<usize>,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self { word_cap: DEFAULT_WORD_CAP, max_word_len: None }
    }
}

impl ExperimentOptions {
    pub fn word_len(&self, n_symbols: usize) -> usize {
        let mut w = 0;
        while (n_symbols as u64).checked_pow(w as u32 + 1).is_some_and(|c| c <= self.word_cap) {
            w += 1;
            if n_symbols < 2 {
                break;
            }
        }
        let w = w.max(1);
        self.max_word_len.map_or(w, |m| w.min(m))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub rho: f64,
    pub s: usize,
    pub n_branches: usize,
    pub return_times: Vec<usize>,
    pub word_len: usize,
    pub measures: usize,
    pub d: f64,
    pub threshold: f64,
    pub slack: f64,
    pub pass: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub source: String,
    pub stages: Vec<StageReport>,
}

impl ConvergenceReport {
    pub fn all_pass(&self) -> bool {
        self.stages.iter().all(|s| s.pass)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["stage", "rho", "s", "n_branches", "return_times", "word_len", "measures", "d", "threshold", "slack", "pass", "error"])
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        for s in &self.stages {
            let times: Vec<String> = s.return_times.iter().map(|m| m.to_string()).collect();
            w.write_record([
                s.stage.to_string(),
                s.rho.to_string(),
                s.s.to_string(),
                s.n_branches.to_string(),
                times.join(" "),
                s.word_len.to_string(),
                s.measures.to_string(),
                s.d.to_string(),
                s.threshold.to_string(),
                s.slack.to_string(),
                s.pass.to_string(),
                s.error.clone().unwrap_or_default(),
            ])
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// Per-stage objects kept for artifact output.
pub struct StageArtifacts<T: Real> {
    pub stage: Option<Stage<T>>,
    pub rows: Vec<MeasureRow>,
}

pub struct ConvergenceRun<T: Real> {
    pub report: ConvergenceReport,
    pub stages: Vec<StageArtifacts<T>>,
}

/// Builds a horseshoe per schedule entry and records the worst `3ρ`
/// distance over all periodic measures up to the stage's word length.
/// Stage failures are recorded and the experiment continues.
pub fn convergence_experiment<T: Real>(
    source: &dyn HorseshoeSource<T>,
    family: &TestFunctionFamily<T>,
    mu_ref: &ReferenceMeasure<T>,
    schedule: &[ScheduleEntry<T>],
    options: &ExperimentOptions,
) -> Result<ConvergenceRun<T>> {
    if let Err((i, field, msg)) = validate_schedule(schedule) {
        return Err(Error::InvalidInput(format!("schedule[{i}].{field}: {msg}")));
    }
    let mut reports = Vec::new();
    let mut artifacts = Vec::new();
    for (i, e) in schedule.iter().enumerate() {
        let mut report = StageReport {
            stage: i + 1,
            rho: e.rho.as_f64(),
            s: e.s,
            n_branches: 0,
            return_times: Vec::new(),
            word_len: 0,
            measures: 0,
            d: f64::NAN,
            threshold: 3.0 * e.rho.as_f64(),
            slack: 0.0,
            pass: false,
            error: None,
        };
        let outcome = source.stage(family, mu_ref, e.rho, e.s).and_then(|stage| {
            let hs = &stage.horseshoe;
            let w = options.word_len(hs.n_symbols());
            let classes = lyndon_words(hs.n_symbols(), w);
            let results: Vec<ThreeRhoOutcome<T>> = classes
                .par_iter()
                .map(|word| {
                    let m = periodic_measure(stage.map.as_ref(), hs, word, family, e.s)?;
                    check_three_rho(&m, family, mu_ref, e.rho, e.s)
                })
                .collect::<Result<_>>()?;
            let rows = measure_rows(&classes, &results, &hs.return_times());
            Ok((stage, w, results, rows))
        });
        match outcome {
            Ok((stage, w, results, rows)) => {
                report.n_branches = stage.horseshoe.n_symbols();
                report.return_times = stage.horseshoe.return_times();
                report.word_len = w;
                report.measures = results.len();
                report.d = results.iter().map(|o| o.distance.as_f64()).fold(0.0, f64::max);
                report.slack = results.iter().map(|o| o.slack.as_f64()).fold(0.0, f64::max);
                report.pass = results.iter().all(|o| o.pass);
                artifacts.push(StageArtifacts { stage: Some(stage), rows });
            }
            Err(err) => {
                report.error = Some(err.to_string());
                artifacts.push(StageArtifacts { stage: None, rows: Vec::new() });
            }
        }
        reports.push(report);
    }
    Ok(ConvergenceRun { report: ConvergenceReport { source: source.describe(), stages: reports }, stages: artifacts })
}

fn measure_rows<T: Real>(classes: &[SymbolicWord], results: &[ThreeRhoOutcome<T>], times: &[usize]) -> Vec<MeasureRow> {
    classes
        .iter()
        .zip(results)
        .map(|(w, o)| MeasureRow {
            word: w.to_string(),
            cyclic_class: w.to_string(),
            length: w.len(),
            period: w.period(times),
            distance: o.distance.as_f64(),
            slack: o.slack.as_f64(),
            pass: o.pass,
        })
        .collect()
}
