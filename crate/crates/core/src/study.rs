//! Batch orchestration: a JSON study configuration names groups (CSV files
//! or simulator draws) organized into families of periods, and the run
//! writes fits, decomposition tables and a manifest into one directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::ControlFit;
use crate::counterfactual::{
    ate_education, decompose_between, decompose_series, fit_group, series_ratio, DecompResult, GroupFit, GroupSpecs,
    PeriodEffects, COMPONENTS,
};
use crate::data::{validate_sample, MicroSample, TrimRule, ValidationReport};
use crate::error::{Error, Result};
use crate::inference::{bootstrap_statistic, BootstrapConfig, BootstrapResult};
use crate::oracle::{simulate_hsm, HSMParams};
use crate::outcome::OutcomeFit;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Csv {
        path: PathBuf,
        #[serde(default)]
        weight_column: Option<String>,
    },
    Simulate {
        params: HSMParams,
        n: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub group_id: String,
    #[serde(default = "default_family")]
    pub family: String,
    /// Period label written in the `year` column.
    pub period: String,
    pub source: Source,
}

fn default_family() -> String {
    "all".into()
}

/// Trimming policy: a fixed upper bound, or a quantile of each group's
/// positive hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimPolicy {
    #[serde(default)]
    pub h_max: Option<f64>,
    #[serde(default = "default_trim_quantile")]
    pub h_max_quantile: Option<f64>,
    #[serde(default)]
    pub h_min: f64,
}

fn default_trim_quantile() -> Option<f64> {
    Some(0.99)
}

impl Default for TrimPolicy {
    fn default() -> Self {
        Self {
            h_max: None,
            h_max_quantile: default_trim_quantile(),
            h_min: 0.0,
        }
    }
}

impl TrimPolicy {
    pub fn rule_for(&self, sample: &MicroSample) -> Result<TrimRule> {
        match (self.h_max, self.h_max_quantile) {
            (Some(h), _) => TrimRule::new(self.h_min, Some(h)),
            (None, Some(q)) => TrimRule::upper_quantile(sample, q, self.h_min),
            (None, None) => TrimRule::new(self.h_min, None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioSpec {
    pub tau_hi: f64,
    pub tau_lo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetweenSpec {
    /// The table reports `first − second`.
    pub families: [String; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteSpec {
    pub variable: String,
    pub e0: f64,
    pub e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub groups: Vec<GroupEntry>,
    pub specs: GroupSpecs,
    #[serde(default)]
    pub trim: TrimPolicy,
    /// Base group per family.
    pub base: BTreeMap<String, String>,
    pub taus: Vec<f64>,
    #[serde(default)]
    pub ratio: Option<RatioSpec>,
    #[serde(default)]
    pub between: Option<BetweenSpec>,
    #[serde(default)]
    pub ate: Vec<AteSpec>,
    #[serde(default)]
    pub bootstrap: Option<BootstrapConfig>,
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn check(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::Config("no groups configured".into()));
        }
        let mut ids = BTreeSet::new();
        for g in &self.groups {
            if !ids.insert(g.group_id.as_str()) {
                return Err(Error::Config(format!("duplicate group `{}`", g.group_id)));
            }
            if g.group_id.is_empty() || g.group_id.contains(['/', '\\']) {
                return Err(Error::Config(format!("invalid group id `{}`", g.group_id)));
            }
        }
        for family in self.families() {
            let base = self
                .base
                .get(&family)
                .ok_or_else(|| Error::Config(format!("no base group for family `{family}`")))?;
            if !self.groups.iter().any(|g| &g.group_id == base && g.family == family) {
                return Err(Error::Config(format!("base group `{base}` is not in family `{family}`")));
            }
        }
        check_taus(&self.taus)?;
        if let Some(r) = &self.ratio {
            check_taus(&[r.tau_lo, r.tau_hi])?;
        }
        if let Some(b) = &self.between {
            let families = self.families();
            for f in &b.families {
                if !families.contains(f) {
                    return Err(Error::Config(format!("unknown family `{f}` in between")));
                }
            }
        }
        if let Some(b) = &self.bootstrap {
            b.check()?;
        }
        if let Some(h) = self.trim.h_max {
            if !(h > self.trim.h_min) {
                return Err(Error::Config("trim h_max must exceed h_min".into()));
            }
        }
        if let Some(q) = self.trim.h_max_quantile {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::Config("trim quantile must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Family names in order of first appearance.
    pub fn families(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for g in &self.groups {
            if !out.contains(&g.family) {
                out.push(g.family.clone());
            }
        }
        out
    }

    /// Makes `group_id` the base of its family.
    pub fn set_base(&mut self, group_id: &str) -> Result<()> {
        let g = self
            .groups
            .iter()
            .find(|g| g.group_id == group_id)
            .ok_or_else(|| Error::Config(format!("unknown base group `{group_id}`")))?;
        self.base.insert(g.family.clone(), group_id.to_string());
        Ok(())
    }

    pub fn sha256(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

fn check_taus(taus: &[f64]) -> Result<()> {
    if taus.is_empty() || taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) || taus.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("percentiles must be strictly increasing in (0, 1): {taus:?}")));
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct LoadedGroup {
    pub entry: GroupEntry,
    pub sample: Arc<MicroSample>,
    pub trim: TrimRule,
    /// Hash of the inputs that determine this group's fit.
    pub fit_key: String,
}

/// A configuration with its groups loaded.
#[derive(Debug, Clone)]
pub struct Study {
    pub config: StudyConfig,
    pub groups: Vec<LoadedGroup>,
}

impl Study {
    /// Loads every group; relative CSV paths resolve against `root`.
    pub fn load(config: StudyConfig, root: &Path) -> Result<Self> {
        config.check()?;
        let groups = config
            .groups
            .iter()
            .map(|entry| {
                let (sample, input_hash) = match &entry.source {
                    Source::Csv { path, weight_column } => {
                        let path = root.join(path);
                        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                        let sample = crate::data::read_csv(bytes.as_slice(), &entry.group_id, weight_column.as_deref())?;
                        (sample, sha256_hex(&bytes))
                    }
                    Source::Simulate { params, n, seed } => {
                        let sample = simulate_hsm(params, *n, *seed)?.with_group_id(entry.group_id.clone());
                        (sample, sha256_hex(serde_json::to_string(&entry.source)?.as_bytes()))
                    }
                };
                let trim = config.trim.rule_for(&sample)?;
                let key_src = serde_json::to_string(&(VERSION, &entry.group_id, &input_hash, &config.specs, &trim))?;
                Ok(LoadedGroup {
                    entry: entry.clone(),
                    sample: Arc::new(sample),
                    trim,
                    fit_key: sha256_hex(key_src.as_bytes()),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { config, groups })
    }

    pub fn validate(&self) -> Vec<(String, ValidationReport)> {
        self.groups
            .iter()
            .map(|g| (g.entry.group_id.clone(), validate_sample(&g.sample)))
            .collect()
    }

    fn family_members(&self, family: &str) -> Vec<&LoadedGroup> {
        self.groups.iter().filter(|g| g.entry.family == family).collect()
    }
}

/// Collects output files and their hashes; every write goes through here.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn files(&self) -> &BTreeMap<String, String> {
        &self.files
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CachedFit {
    key: String,
    control: ControlFit,
    outcome: OutcomeFit,
}

fn fit_file(group_id: &str) -> String {
    format!("fits/{group_id}.json")
}

/// Fits every group, reusing `fits/<group>.json` when its key matches.
pub fn fit_all(study: &Study, out: &mut OutputDir) -> Result<BTreeMap<String, GroupFit>> {
    let fit_one = |g: &LoadedGroup| -> Result<GroupFit> {
        let cached = std::fs::read(out.path().join(fit_file(&g.entry.group_id)))
            .ok()
            .and_then(|bytes| serde_json::from_slice::<CachedFit>(&bytes).ok())
            .filter(|c| c.key == g.fit_key);
        match cached {
            Some(c) => GroupFit::new(g.sample.clone(), c.control, c.outcome),
            None => fit_group(g.sample.clone(), &study.config.specs, &g.trim),
        }
    };
    #[cfg(feature = "parallel")]
    let fits: Vec<Result<GroupFit>> = {
        use rayon::prelude::*;
        study.groups.par_iter().map(fit_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let fits: Vec<Result<GroupFit>> = study.groups.iter().map(fit_one).collect();

    let mut map = BTreeMap::new();
    for (g, fit) in study.groups.iter().zip(fits) {
        let fit = fit?;
        let record = CachedFit {
            key: g.fit_key.clone(),
            control: fit.control.clone(),
            outcome: fit.outcome.clone(),
        };
        out.write(&fit_file(&g.entry.group_id), serde_json::to_string(&record)?.as_bytes())?;
        map.insert(g.entry.group_id.clone(), fit);
    }
    Ok(map)
}

/// Writes the first-stage fits only.
pub fn fit_hours(study: &Study, out: &mut OutputDir) -> Result<()> {
    for g in &study.groups {
        let control = crate::control::estimate_control(&g.sample, &study.config.specs.r_spec, &study.config.specs.control)
            .map_err(|e| Error::stage("control function", &g.entry.group_id, e))?;
        out.write(
            &format!("hours/{}.json", g.entry.group_id),
            serde_json::to_string(&control)?.as_bytes(),
        )?;
    }
    Ok(())
}

fn family_series(study: &Study, fits: &BTreeMap<String, GroupFit>, family: &str, taus: &[f64]) -> Result<Vec<PeriodEffects>> {
    let base = &fits[&study.config.base[family]];
    let periods: Vec<(String, &GroupFit)> = study
        .family_members(family)
        .into_iter()
        .map(|g| (g.entry.period.clone(), &fits[&g.entry.group_id]))
        .collect();
    decompose_series(&periods, base, taus)
}

/// Quantile decompositions of every family, re-referenced to its first
/// period.
pub fn decompose_all(study: &Study, fits: &BTreeMap<String, GroupFit>) -> Result<BTreeMap<String, Vec<PeriodEffects>>> {
    study
        .config
        .families()
        .into_iter()
        .map(|f| Ok((f.clone(), family_series(study, fits, &f, &study.config.taus)?)))
        .collect()
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(header)?;
    for row in rows {
        wtr.write_record(&row)?;
    }
    wtr.into_inner().map_err(|e| Error::Data(format!("CSV buffer: {e}")))
}

fn series_rows(series: &[PeriodEffects]) -> Vec<Vec<String>> {
    series
        .iter()
        .flat_map(|p| {
            p.results.iter().map(move |r| {
                let mut row = vec![p.period.clone(), r.tau.to_string()];
                row.extend(r.components().iter().map(f64::to_string));
                row
            })
        })
        .collect()
}

const DECOMP_HEADER: [&str; 6] = ["year", "tau", "selection", "composition", "structural", "total"];

pub fn write_decompositions(series: &BTreeMap<String, Vec<PeriodEffects>>, out: &mut OutputDir) -> Result<()> {
    for (family, s) in series {
        out.write(&format!("decomp_{family}.csv"), &csv_bytes(&DECOMP_HEADER, series_rows(s))?)?;
    }
    Ok(())
}

pub fn write_ratios(study: &Study, fits: &BTreeMap<String, GroupFit>, out: &mut OutputDir) -> Result<()> {
    let spec = study
        .config
        .ratio
        .ok_or_else(|| Error::Config("no `ratio` section in the configuration".into()))?;
    for family in study.config.families() {
        let series = family_series(study, fits, &family, &[spec.tau_lo, spec.tau_hi])?;
        let rows = series_ratio(&series, spec.tau_hi, spec.tau_lo)?.into_iter().map(|(period, r)| {
            let mut row = vec![period];
            row.extend(r.components().iter().map(f64::to_string));
            row
        });
        out.write(
            &format!("ratio_{family}.csv"),
            &csv_bytes(&["year", "selection", "composition", "structural", "total"], rows)?,
        )?;
    }
    Ok(())
}

pub fn write_between(study: &Study, series: &BTreeMap<String, Vec<PeriodEffects>>, out: &mut OutputDir) -> Result<()> {
    let spec = study
        .config
        .between
        .as_ref()
        .ok_or_else(|| Error::Config("no `between` section in the configuration".into()))?;
    let diff = decompose_between(&series[&spec.families[0]], &series[&spec.families[1]])?;
    out.write("between.csv", &csv_bytes(&DECOMP_HEADER, series_rows(&diff))?)
}

pub fn write_ate(study: &Study, fits: &BTreeMap<String, GroupFit>, out: &mut OutputDir) -> Result<()> {
    if study.config.ate.is_empty() {
        return Err(Error::Config("no `ate` contrasts in the configuration".into()));
    }
    let mut rows = Vec::new();
    for g in &study.groups {
        for a in &study.config.ate {
            let ate = ate_education(&fits[&g.entry.group_id], &a.variable, a.e0, a.e)?;
            rows.push(vec![g.entry.group_id.clone(), a.e0.to_string(), a.e.to_string(), ate.to_string()]);
        }
    }
    out.write("ate.csv", &csv_bytes(&["group", "e0", "e", "ate"], rows)?)
}

/// Bootstrap of one family's decomposition series. Replicates reweight
/// every group of the family and rerun all stages; trimming bounds stay
/// fixed.
pub fn bootstrap_family(study: &Study, family: &str, point: &[PeriodEffects], cfg: &BootstrapConfig) -> Result<BootstrapResult> {
    let members = study.family_members(family);
    let base_pos = members
        .iter()
        .position(|g| g.entry.group_id == study.config.base[family])
        .expect("validated base");
    let specs = &study.config.specs;
    let taus = &study.config.taus;
    let stat = |samples: &[MicroSample]| -> Result<Vec<f64>> {
        let fits: Vec<GroupFit> = samples
            .iter()
            .zip(&members)
            .map(|(s, g)| fit_group(Arc::new(s.clone()), specs, &g.trim))
            .collect::<Result<_>>()?;
        let periods: Vec<(String, &GroupFit)> = members.iter().map(|g| g.entry.period.clone()).zip(&fits).collect();
        Ok(flatten_series(&decompose_series(&periods, &fits[base_pos], taus)?))
    };
    let samples: Vec<&MicroSample> = members.iter().map(|g| g.sample.as_ref()).collect();
    bootstrap_statistic(&samples, &flatten_series(point), cfg, stat)
}

fn flatten_series(series: &[PeriodEffects]) -> Vec<f64> {
    series
        .iter()
        .flat_map(|p| p.results.iter().flat_map(DecompResult::components))
        .collect()
}

pub fn write_bootstrap(study: &Study, series: &BTreeMap<String, Vec<PeriodEffects>>, out: &mut OutputDir) -> Result<()> {
    let cfg = study
        .config
        .bootstrap
        .ok_or_else(|| Error::Config("no `bootstrap` section in the configuration".into()))?;
    for (family, point) in series {
        let res = bootstrap_family(study, family, point, &cfg)?;
        let mut rows = Vec::new();
        let mut k = 0;
        for p in point {
            for r in &p.results {
                for name in COMPONENTS {
                    let iv = res.intervals[k];
                    k += 1;
                    rows.push(vec![
                        p.period.clone(),
                        r.tau.to_string(),
                        name.to_string(),
                        iv.estimate.to_string(),
                        iv.lo.to_string(),
                        iv.hi.to_string(),
                        res.n_fail.to_string(),
                    ]);
                }
            }
        }
        out.write(
            &format!("bootstrap_{family}.csv"),
            &csv_bytes(&["year", "tau", "component", "estimate", "lo", "hi", "n_fail"], rows)?,
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub files: Vec<ManifestFile>,
}

fn seeds(cfg: &StudyConfig) -> BTreeMap<String, u64> {
    let mut seeds = BTreeMap::new();
    if let Some(b) = &cfg.bootstrap {
        seeds.insert("bootstrap".into(), b.seed);
    }
    if let Some(s) = cfg.specs.control.smoothing_seed {
        seeds.insert("smoothing".into(), s);
    }
    for g in &cfg.groups {
        if let Source::Simulate { seed, .. } = &g.source {
            seeds.insert(format!("simulate:{}", g.group_id), *seed);
        }
    }
    seeds
}

/// Writes `manifest.json` listing every file written through `out`.
pub fn write_manifest(cfg: &StudyConfig, out: &mut OutputDir) -> Result<Manifest> {
    let manifest = Manifest {
        version: VERSION.to_string(),
        config_sha256: cfg.sha256(),
        seeds: seeds(cfg),
        files: out
            .files()
            .iter()
            .map(|(path, sha256)| ManifestFile {
                path: path.clone(),
                sha256: sha256.clone(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    out.write("manifest.json", text.as_bytes())?;
    Ok(manifest)
}

/// Which tables a run produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tasks {
    pub decompose: bool,
    pub ratio: bool,
    pub between: bool,
    pub ate: bool,
    pub bootstrap: bool,
}

impl Tasks {
    /// Every table the configuration asks for.
    pub fn configured(cfg: &StudyConfig) -> Self {
        Self {
            decompose: true,
            ratio: cfg.ratio.is_some(),
            between: cfg.between.is_some(),
            ate: !cfg.ate.is_empty(),
            bootstrap: cfg.bootstrap.is_some(),
        }
    }

    pub fn fits_only() -> Self {
        Self {
            decompose: false,
            ratio: false,
            between: false,
            ate: false,
            bootstrap: false,
        }
    }
}

/// Runs the study and writes the bundle into `out_dir`.
pub fn run_study(study: &Study, out_dir: &Path, tasks: Tasks) -> Result<Manifest> {
    let mut out = OutputDir::create(out_dir)?;
    let fits = fit_all(study, &mut out)?;
    let needs_series = tasks.decompose || tasks.between || tasks.bootstrap;
    let series = if needs_series {
        decompose_all(study, &fits)?
    } else {
        BTreeMap::new()
    };
    if tasks.decompose {
        write_decompositions(&series, &mut out)?;
    }
    if tasks.ratio {
        write_ratios(study, &fits, &mut out)?;
    }
    if tasks.between {
        write_between(study, &series, &mut out)?;
    }
    if tasks.ate {
        write_ate(study, &fits, &mut out)?;
    }
    if tasks.bootstrap {
        write_bootstrap(study, &series, &mut out)?;
    }
    write_manifest(&study.config, &mut out)
}

/// Loads a configuration file and runs everything it asks for.
pub fn run_study_path(config: &Path, out_dir: &Path) -> Result<Manifest> {
    let cfg = StudyConfig::from_path(config)?;
    let root = config.parent().unwrap_or(Path::new("."));
    let study = Study::load(cfg, root)?;
    let tasks = Tasks::configured(&study.config);
    run_study(&study, out_dir, tasks)
}
