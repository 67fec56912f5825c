//! Experiment configuration (TOML) and the end-to-end batch pipeline.

use crate::branches::{core_seeds, BranchSearch, LandingCheck};
use crate::dynsys::{CatMap, MapSystem, PerturbedCatMap, Point, ReferenceMeasure, StandardMap, TestFunctionFamily};
use crate::error::{Error, Result};
use crate::horseshoe::{refine, DirectionalDiameters};
use crate::measures::{
    convergence_experiment, rows_to_csv, validate_schedule, ExperimentOptions, FixtureSource, HorseshoeSource,
    ScheduleEntry, SearchSource, StageReport,
};
use crate::pesin::{build_rectangle, pesin_certificate, Rectangle};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MapConfig {
    Fixture,
    Cat,
    PerturbedCat { kappa: f64 },
    Standard { k: f64 },
}

impl MapConfig {
    pub fn build(&self) -> Arc<dyn MapSystem<f64>> {
        match *self {
            MapConfig::Fixture => Arc::new(crate::fixture::AffineFixture::new(1.0 / 16.0)),
            MapConfig::Cat => Arc::new(CatMap),
            MapConfig::PerturbedCat { kappa } => Arc::new(PerturbedCatMap::new(kappa)),
            MapConfig::Standard { k } => Arc::new(StandardMap::new(k)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub k_max: u32,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self { k_max: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReferenceConfig {
    #[default]
    Lebesgue,
    Analytic { integrals: Vec<f64> },
    LongOrbit { length: u64, batches: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// Base point of the Pesin rectangle (search maps only).
    pub base: [f64; 2],
    pub cert_n: usize,
    pub chi: f64,
    pub h: f64,
    pub gamma: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { base: [0.318309886, 0.577215664], cert_n: 20, chi: 0.9, h: 0.015, gamma: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub seeds: usize,
    pub n_min: usize,
    pub m_max: usize,
    pub budget: usize,
    #[serde(default = "default_repair")]
    pub repair_budget: usize,
    #[serde(default = "default_branches")]
    pub branches: usize,
    /// Pesin check at landing points: horizon, with `geometry.chi` and `ell0`.
    pub landing_horizon: Option<usize>,
    #[serde(default = "default_ell0")]
    pub ell0: f64,
}

fn default_repair() -> usize {
    3
}
fn default_branches() -> usize {
    2
}
fn default_ell0() -> f64 {
    crate::branches::DEFAULT_ELL0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapsConfig {
    pub word_cap: u64,
    pub max_word_len: Option<usize>,
    pub refine_depth: usize,
    pub refine_cap: u64,
}

impl Default for CapsConfig {
    fn default() -> Self {
        Self {
            word_cap: crate::measures::DEFAULT_WORD_CAP,
            max_word_len: None,
            refine_depth: 6,
            refine_cap: crate::horseshoe::DEFAULT_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub map: MapConfig,
    #[serde(default)]
    pub family: FamilyConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    pub schedule: Vec<ScheduleEntry<f64>>,
    #[serde(default)]
    pub geometry: GeometryConfig,
    pub search: Option<SearchConfig>,
    #[serde(default)]
    pub caps: CapsConfig,
}

fn default_name() -> String {
    "experiment".into()
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config { path: path.into(), message: message.into() }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let message = e.into_inner().message().trim().to_string();
            config_err(if path == "." { "<root>" } else { &path }, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err("<file>", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if let Err((i, field, msg)) = validate_schedule(&self.schedule) {
            return Err(config_err(&format!("schedule[{i}].{field}"), msg));
        }
        let count = TestFunctionFamily::<f64>::fourier(self.family.k_max).count();
        if self.family.k_max == 0 {
            return Err(config_err("family.k_max", "must be positive"));
        }
        for (i, e) in self.schedule.iter().enumerate() {
            if e.s > count {
                return Err(config_err(&format!("schedule[{i}].s"), format!("exceeds the {count} functions of the family")));
            }
        }
        if let ReferenceConfig::Analytic { integrals } = &self.reference {
            if integrals.len() < count {
                return Err(config_err("reference.integrals", format!("needs {count} values")));
            }
        }
        let g = &self.geometry;
        if !(g.gamma > 0.0 && g.gamma < 0.5) {
            return Err(config_err("geometry.gamma", "must lie in (0, 1/2)"));
        }
        if !(g.h > 0.0) {
            return Err(config_err("geometry.h", "must be positive"));
        }
        if g.cert_n == 0 {
            return Err(config_err("geometry.cert_n", "must be positive"));
        }
        let c = &self.caps;
        if c.word_cap == 0 {
            return Err(config_err("caps.word_cap", "must be positive"));
        }
        if c.refine_depth == 0 {
            return Err(config_err("caps.refine_depth", "must be at least 1"));
        }
        if c.refine_cap == 0 {
            return Err(config_err("caps.refine_cap", "must be positive"));
        }
        if c.max_word_len == Some(0) {
            return Err(config_err("caps.max_word_len", "must be positive"));
        }
        match (&self.map, &self.search) {
            (MapConfig::Fixture, _) => {}
            (_, None) => return Err(config_err("search", "required for maps other than the fixture")),
            (_, Some(s)) => {
                if s.seeds == 0 {
                    return Err(config_err("search.seeds", "must be positive"));
                }
                if s.budget == 0 {
                    return Err(config_err("search.budget", "must be positive"));
                }
                if s.n_min == 0 || s.m_max < s.n_min {
                    return Err(config_err("search.m_max", "need 1 ≤ n_min ≤ m_max"));
                }
                if s.branches < 2 {
                    return Err(config_err("search.branches", "at least two branches"));
                }
            }
        }
        Ok(())
    }

    pub fn family(&self) -> TestFunctionFamily<f64> {
        TestFunctionFamily::fourier(self.family.k_max)
    }

    pub fn reference(&self, family: &TestFunctionFamily<f64>) -> Result<ReferenceMeasure<f64>> {
        match &self.reference {
            ReferenceConfig::Lebesgue => Ok(ReferenceMeasure::lebesgue(family)),
            ReferenceConfig::Analytic { integrals } => Ok(ReferenceMeasure::analytic("analytic", integrals.clone())),
            ReferenceConfig::LongOrbit { length, batches } => {
                ReferenceMeasure::estimate_long_orbit(self.map.build().as_ref(), family, *length, self.seed, *batches)
            }
        }
    }

    /// Pesin rectangle for search maps.
    pub fn rectangle(&self) -> Result<Rectangle<f64>> {
        let map = self.map.build();
        let g = &self.geometry;
        let cert = pesin_certificate(map.as_ref(), Point::new(map.space(), g.base), g.cert_n, g.chi)?;
        build_rectangle(&cert, g.h)
    }

    pub fn source(&self) -> Result<Box<dyn HorseshoeSource<f64>>> {
        if self.map == MapConfig::Fixture {
            return Ok(Box::new(FixtureSource { gamma: self.geometry.gamma }));
        }
        let s = self.search.as_ref().ok_or_else(|| config_err("search", "missing"))?;
        let rectangle = self.rectangle()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let seeds = core_seeds(&rectangle, s.seeds, &mut rng);
        let landing = s.landing_horizon.map(|horizon| LandingCheck { horizon, chi: self.geometry.chi, ell0: s.ell0 });
        Ok(Box::new(SearchSource {
            map: self.map.build(),
            rectangle,
            gamma: self.geometry.gamma,
            n_branches: s.branches,
            search: BranchSearch { seeds, n_min: s.n_min, m_max: s.m_max, budget: s.budget, repair_budget: s.repair_budget, landing },
        }))
    }

    pub fn options(&self) -> ExperimentOptions {
        ExperimentOptions { word_cap: self.caps.word_cap, max_word_len: self.caps.max_word_len }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    #[serde(flatten)]
    pub report: StageReport,
    pub refine_depth: usize,
    pub max_diameters: Option<DirectionalDiameters<f64>>,
    pub refine_error: Option<String>,
}

impl StageSummary {
    pub fn pass(&self) -> bool {
        self.report.pass && self.refine_error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub threads: usize,
    pub map: MapConfig,
    pub source: String,
    pub word_cap: u64,
    pub stages: Vec<StageSummary>,
    pub pass: bool,
}

/// Runs the schedule and writes, per stage, `horseshoe.json`,
/// `refinement.csv` and `measures.csv` under `stage_<n>/`, plus
/// `summary.json` and `summary.csv` in `out`.
pub fn run(config: &ExperimentConfig, out: &Path, threads: usize) -> Result<RunSummary> {
    let family = config.family();
    let mu_ref = config.reference(&family)?;
    let source = config.source()?;
    let conv = convergence_experiment(source.as_ref(), &family, &mu_ref, &config.schedule, &config.options())?;
    fs::create_dir_all(out)?;
    let mut stages = Vec::new();
    for (report, art) in conv.report.stages.iter().zip(&conv.stages) {
        let dir = out.join(format!("stage_{}", report.stage));
        fs::create_dir_all(&dir)?;
        let mut summary = StageSummary { report: report.clone(), refine_depth: 0, max_diameters: None, refine_error: None };
        if let Some(stage) = &art.stage {
            let hs = &stage.horseshoe;
            fs::write(dir.join("horseshoe.json"), serde_json::to_string_pretty(hs)?)?;
            let depth = fitting_depth(hs.n_symbols(), config.caps.refine_depth, config.caps.refine_cap);
            summary.refine_depth = depth;
            match refine(stage.map.as_ref(), hs, depth, config.caps.refine_cap) {
                Ok(r) => {
                    fs::write(dir.join("refinement.csv"), r.to_csv(&hs.rectangle)?)?;
                    summary.max_diameters = Some(r.max_diameters);
                }
                Err(e) => summary.refine_error = Some(e.to_string()),
            }
        }
        fs::write(dir.join("measures.csv"), rows_to_csv(&art.rows)?)?;
        stages.push(summary);
    }
    let pass = stages.iter().all(StageSummary::pass);
    let summary = RunSummary {
        name: config.name.clone(),
        seed: config.seed,
        threads,
        map: config.map.clone(),
        source: conv.report.source.clone(),
        word_cap: config.caps.word_cap,
        stages,
        pass,
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    fs::write(out.join("summary.csv"), conv.report.to_csv()?)?;
    Ok(summary)
}

/// Largest depth `≤ depth` whose cylinder count fits under `cap`.
pub fn fitting_depth(n_symbols: usize, depth: usize, cap: u64) -> usize {
    (1..=depth)
        .take_while(|&d| (n_symbols as u64).checked_pow(d as u32).is_some_and(|c| c <= cap))
        .last()
        .unwrap_or(1)
}

/// `summary.json` files in `dir` and its immediate subdirectories, sorted
/// by path.
pub fn find_summaries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let direct = dir.join("summary.json");
    if direct.is_file() {
        out.push(direct);
    }
    if dir.is_dir() {
        for entry in fs::read_dir(dir)? {
            let p = entry?.path().join("summary.json");
            if p.is_file() {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Fixed-width table with one line per stage of every summary.
pub fn render_table(summaries: &[RunSummary]) -> String {
    let mut s = format!(
        "{:<16} {:>5} {:>8} {:>3} {:>3} {:<12} {:>12} {:>10} {:>5}\n",
        "name", "stage", "rho", "s", "N", "m", "d", "3rho", "pass"
    );
    for run in summaries {
        for st in &run.stages {
            let r = &st.report;
            let times: Vec<String> = r.return_times.iter().map(|m| m.to_string()).collect();
            s.push_str(&format!(
                "{:<16} {:>5} {:>8} {:>3} {:>3} {:<12} {:>12.4e} {:>10.4} {:>5}\n",
                run.name,
                r.stage,
                r.rho,
                r.s,
                r.n_branches,
                times.join(","),
                r.d,
                r.threshold,
                if st.pass() { "yes" } else { "no" }
            ));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"
name = "fixture"
seed = 1
map = { kind = "fixture" }
[[schedule]]
rho = 0.1
s = 4
[[schedule]]
rho = 0.05
s = 4
"#;

    #[test]
    fn parses_and_validates() {
        let c = ExperimentConfig::parse(FIXTURE).unwrap();
        assert_eq!(c.schedule.len(), 2);
        assert_eq!(c.caps.refine_depth, 6);
        let bad = FIXTURE.replace("rho = 0.05", "rho = 0.2");
        match ExperimentConfig::parse(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "schedule[1].rho"),
            other => panic!("{other:?}"),
        }
        let bad = FIXTURE.replace("rho = 0.05", "rho = \"x\"");
        match ExperimentConfig::parse(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "schedule[1].rho"),
            other => panic!("{other:?}"),
        }
        let bad = FIXTURE.replace("s = 4", "s = 9");
        match ExperimentConfig::parse(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "schedule[0].s"),
            other => panic!("{other:?}"),
        }
        let bad = FIXTURE.replace("kind = \"fixture\"", "kind = \"cat\"");
        match ExperimentConfig::parse(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "search"),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::parse(&format!("{FIXTURE}\n[caps]\nrefine_depth = 0\n")) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "caps.refine_depth"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn depth_fits_cap() {
        assert_eq!(fitting_depth(2, 6, 1 << 20), 6);
        assert_eq!(fitting_depth(2, 30, 1 << 20), 20);
        assert_eq!(fitting_depth(3, 30, 100), 4);
    }

    #[test]
    fn empty_table_has_header_only() {
        assert_eq!(render_table(&[]).lines().count(), 1);
    }
}
