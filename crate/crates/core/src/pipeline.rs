//! Run configuration and the file-based stages behind the CLI.
//!
//! Layout under the output directory:
//! `<env>/corpus.tsv`, `<env>/rep<r>/{split,tuned,ann_toa,ann_fp,ranging,positioning}.json`
//! and `report/` for merged tables and CDFs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cir::PhysConstants;
use crate::dataio::{ingest_public_dataset, load_canonical, save_canonical, AdapterConfig, IngestReport, SplitMode, SplitPlan};
use crate::error::{Error, Result};
use crate::eval::{
    format_cdf, format_table, merge_reports, positioning_eval, positioning_rows, ranging_eval, read_json, ranging_rows, solver_rows,
    train_fp_rep, train_toa_rep, tune_rep, write_json, Artifacts, EnvData, EvalReport, MergedReport, RepSplit, TunedParams,
};
use crate::locate::SolverConfig;
use crate::models::{FpModel, ToaModel};
use crate::net::{TrainConfig, TrainHistory};
use crate::sim::{derive_seed, generate_corpus, Scenario};
use crate::toa::TuneGrid;

const TOA_STREAM: u64 = 0x70A;
const FP_STREAM: u64 = 0xF9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub n_repetitions: usize,
    pub mode: SplitMode,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let p = SplitPlan::default();
        Self {
            train_frac: p.train_frac,
            val_frac: p.val_frac,
            test_frac: p.test_frac,
            n_repetitions: p.n_repetitions,
            mode: p.mode,
        }
    }
}

/// Overrides applied to a scenario before simulation, for smaller corpora.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub repetitions: Option<usize>,
    /// Keep every k-th tag point only.
    pub tag_stride: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub constants: PhysConstants,
    pub split: SplitConfig,
    pub tune: TuneGrid,
    pub train_toa: TrainConfig,
    pub train_fp: TrainConfig,
    pub solver: SolverConfig,
    pub simulate: SimulateConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Config(format!("config file {} not found", path.display())));
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().validate()?;
        self.train_toa.validate()?;
        self.train_fp.validate()?;
        self.solver.validate()?;
        if self.simulate.repetitions == Some(0) || self.simulate.tag_stride == Some(0) {
            return Err(Error::Config("simulate overrides must be >= 1".into()));
        }
        Ok(())
    }

    pub fn plan(&self) -> SplitPlan {
        let base = SplitPlan::with_seed(self.seed);
        let n = self.split.n_repetitions;
        SplitPlan {
            train_frac: self.split.train_frac,
            val_frac: self.split.val_frac,
            test_frac: self.split.test_frac,
            n_repetitions: n,
            seeds: (0..n as u64).map(|r| base.seeds.get(r as usize).copied().unwrap_or(derive_seed(self.seed, &[0x5EED, r]))).collect(),
            mode: self.split.mode,
        }
    }

    pub fn toa_train_config(&self, rep: usize) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, &[TOA_STREAM, rep as u64]),
            ..self.train_toa.clone()
        }
    }

    pub fn fp_train_config(&self, rep: usize) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, &[FP_STREAM, rep as u64]),
            ..self.train_fp.clone()
        }
    }

    /// The requested repetition, or all of them.
    pub fn reps(&self, rep: Option<usize>) -> Result<Vec<usize>> {
        match rep {
            Some(r) if r >= self.split.n_repetitions => {
                Err(Error::Config(format!("repetition {r} outside plan of {}", self.split.n_repetitions)))
            }
            Some(r) => Ok(vec![r]),
            None => Ok((0..self.split.n_repetitions).collect()),
        }
    }
}

pub fn env_dir(out: &Path, env: &str) -> PathBuf {
    out.join(env)
}

pub fn rep_dir(out: &Path, env: &str, rep: usize) -> PathBuf {
    out.join(env).join(format!("rep{rep}"))
}

pub fn corpus_path(out: &Path, env: &str) -> PathBuf {
    env_dir(out, env).join("corpus.tsv")
}

fn check_env_name(env: &str) -> Result<()> {
    if env.is_empty() || env == "report" || env.contains(['/', '\\']) || env.starts_with('.') {
        return Err(Error::Config(format!("invalid environment name '{env}'")));
    }
    Ok(())
}

/// Simulates one environment and writes its canonical corpus. `seed`
/// replaces the scenario's own seed when given.
pub fn simulate(cfg: &RunConfig, mut scenario: Scenario, seed: Option<u64>, out: &Path) -> Result<PathBuf> {
    check_env_name(&scenario.env_id)?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    if let Some(r) = cfg.simulate.repetitions {
        scenario.repetitions = r;
    }
    if let Some(k) = cfg.simulate.tag_stride {
        scenario.tag_points = scenario.tag_points.iter().step_by(k).copied().collect();
    }
    scenario.constants = cfg.constants;
    let corpus = generate_corpus(&scenario)?;
    let path = corpus_path(out, &scenario.env_id);
    save_canonical(&corpus.cir_records(), &path)?;
    Ok(path)
}

/// Converts a public dataset into one canonical corpus per environment.
/// Returns the ingest report with skipped rows.
pub fn ingest(adapter: &AdapterConfig, input: &Path, env: Option<&str>, out: &Path) -> Result<IngestReport> {
    let mut report = ingest_public_dataset(input, adapter)?;
    if let Some(e) = env {
        check_env_name(e)?;
        for r in &mut report.records {
            r.env_id = e.to_string();
        }
    }
    let mut envs: Vec<String> = report.records.iter().map(|r| r.env_id.clone()).collect();
    envs.sort();
    envs.dedup();
    for e in &envs {
        check_env_name(e)?;
        let recs: Vec<_> = report.records.iter().filter(|r| &r.env_id == e).cloned().collect();
        save_canonical(&recs, &corpus_path(out, e))?;
    }
    let summary = IngestSummary {
        environments: envs.clone(),
        records: report.records.len(),
        skipped: report.skipped.len(),
        skipped_rows: report.skipped.clone(),
    };
    write_json(&summary, &out.join("ingest_report.json"))?;
    Ok(report)
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    environments: Vec<String>,
    records: usize,
    skipped: usize,
    skipped_rows: Vec<crate::dataio::SkippedRow>,
}

pub fn load_env(cfg: &RunConfig, out: &Path, env: &str) -> Result<EnvData> {
    check_env_name(env)?;
    let path = corpus_path(out, env);
    if !path.exists() {
        return Err(Error::MissingArtifacts(path));
    }
    let report = load_canonical(&path)?;
    let records: Vec<_> = report.records.into_iter().filter(|r| r.env_id == env).collect();
    EnvData::new(env, records, cfg.constants)
}

/// Writes the split and tuned detector parameters of each repetition.
pub fn tune_stage(cfg: &RunConfig, data: &EnvData, out: &Path, reps: &[usize]) -> Result<Vec<TunedParams>> {
    let plan = cfg.plan();
    reps.iter()
        .map(|&r| {
            let split = data.rep_split(&plan, r)?;
            let tuned = tune_rep(data, &split, &cfg.tune)?;
            let dir = rep_dir(out, &data.env, r);
            write_json(&split, &dir.join("split.json"))?;
            write_json(&tuned, &dir.join("tuned.json"))?;
            Ok(tuned)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    AnnToa,
    AnnFp,
}

impl ModelKind {
    pub fn file_stem(&self) -> &'static str {
        match self {
            ModelKind::AnnToa => "ann_toa",
            ModelKind::AnnFp => "ann_fp",
        }
    }
}

/// Trains one model per repetition and writes its checkpoint and history.
pub fn train_stage(cfg: &RunConfig, data: &EnvData, out: &Path, reps: &[usize], kind: ModelKind) -> Result<Vec<TrainHistory>> {
    let plan = cfg.plan();
    reps.iter()
        .map(|&r| {
            let split = data.rep_split(&plan, r)?;
            let dir = rep_dir(out, &data.env, r);
            std::fs::create_dir_all(&dir)?;
            let stem = kind.file_stem();
            let history = match kind {
                ModelKind::AnnToa => {
                    let (model, h) = train_toa_rep(data, &split, &cfg.toa_train_config(r))?;
                    model.save(&dir.join(format!("{stem}.json")))?;
                    h
                }
                ModelKind::AnnFp => {
                    let (model, h) = train_fp_rep(data, &split, &cfg.fp_train_config(r))?;
                    model.save(&dir.join(format!("{stem}.json")))?;
                    h
                }
            };
            write_json(&history, &dir.join(format!("{stem}_history.json")))?;
            Ok(history)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalKind {
    Ranging,
    Positioning,
}

impl EvalKind {
    pub fn file_name(&self) -> &'static str {
        match self {
            EvalKind::Ranging => "ranging.json",
            EvalKind::Positioning => "positioning.json",
        }
    }
}

/// Evaluates saved artifacts on each repetition's test split. The split is
/// recomputed from the config and must match the one saved at tuning time.
pub fn eval_stage(cfg: &RunConfig, data: &EnvData, out: &Path, reps: &[usize], kind: EvalKind) -> Result<Vec<Vec<EvalReport>>> {
    let plan = cfg.plan();
    reps.iter()
        .map(|&r| {
            let dir = rep_dir(out, &data.env, r);
            let split = data.rep_split(&plan, r)?;
            let saved: RepSplit = read_json(&dir.join("split.json"))?;
            if saved != split {
                return Err(Error::Config(format!(
                    "split of {} rep {r} differs from the one used at tuning; rerun tune with the same config",
                    data.env
                )));
            }
            let tuned: TunedParams = read_json(&dir.join("tuned.json"))?;
            let toa_model = ToaModel::load(&dir.join("ann_toa.json"))?;
            let seed = plan.seeds[r];
            let reports = match kind {
                EvalKind::Ranging => {
                    let art = Artifacts {
                        tuned: &tuned,
                        toa_model: &toa_model,
                        fp_model: None,
                    };
                    ranging_eval(data, &split, &art, r as u32, seed)?
                }
                EvalKind::Positioning => {
                    let fp = FpModel::load(&dir.join("ann_fp.json"))?;
                    let art = Artifacts {
                        tuned: &tuned,
                        toa_model: &toa_model,
                        fp_model: Some(&fp),
                    };
                    positioning_eval(data, &split, &art, &cfg.solver, r as u32, seed)?
                }
            };
            write_json(&reports, &dir.join(kind.file_name()))?;
            Ok(reports)
        })
        .collect()
}

/// Environments with a corpus under `out`: presets first in their usual
/// order, then the rest alphabetically.
pub fn discover_envs(out: &Path) -> Result<Vec<String>> {
    let mut envs = Vec::new();
    if out.is_dir() {
        for entry in std::fs::read_dir(out)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.path().join("corpus.tsv").is_file() {
                envs.push(name);
            }
        }
    }
    let rank = |e: &String| Scenario::PRESETS.iter().position(|p| p == e).unwrap_or(usize::MAX);
    envs.sort_by(|a, b| rank(a).cmp(&rank(b)).then(a.cmp(b)));
    Ok(envs)
}

fn rep_dirs(env_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut reps: Vec<(usize, PathBuf)> = Vec::new();
    if env_dir.is_dir() {
        for entry in std::fs::read_dir(env_dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(r) = name.strip_prefix("rep").and_then(|s| s.parse().ok()) {
                reps.push((r, entry.path()));
            }
        }
    }
    reps.sort();
    Ok(reps.into_iter().map(|(_, p)| p).collect())
}

/// Merges every repetition's reports into `out/report`: the ranging table,
/// the solver table, the positioning comparison, merged JSON and one CDF
/// file per environment and method. Per-repetition files are only read.
pub fn report_stage(out: &Path, envs: &[String]) -> Result<Vec<MergedReport>> {
    let mut ranging = Vec::new();
    let mut positioning = Vec::new();
    for env in envs {
        for dir in rep_dirs(&env_dir(out, env))? {
            for (file, dest) in [("ranging.json", &mut ranging), ("positioning.json", &mut positioning)] {
                let p = dir.join(file);
                if p.exists() {
                    dest.extend(read_json::<Vec<EvalReport>>(&p)?);
                }
            }
        }
    }
    if ranging.is_empty() && positioning.is_empty() {
        return Err(Error::MissingArtifacts(out.join("<env>/rep<r>/ranging.json")));
    }
    let merged_ranging = merge_reports(&ranging)?;
    let merged_positioning = merge_reports(&positioning)?;
    let dir = out.join("report");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(
        dir.join("ranging_table.tsv"),
        format_table("Ranging error per ToA estimator", &ranging_rows(), envs, &merged_ranging),
    )?;
    std::fs::write(
        dir.join("solver_table.tsv"),
        format_table("Positioning error per solver on ANN_ToA estimates", &solver_rows(), envs, &merged_positioning),
    )?;
    std::fs::write(
        dir.join("positioning_table.tsv"),
        format_table("Positioning error: ANN_FP against ToA pipelines with Algo2@Algo1", &positioning_rows(), envs, &merged_positioning),
    )?;
    let mut all = merged_ranging;
    all.extend(merged_positioning);
    for m in &all {
        let kind = if m.method.contains('+') || m.method == "ann_fp" { "positioning" } else { "ranging" };
        let path = dir.join("cdf").join(&m.env).join(format!("{kind}_{}.tsv", m.method.replace('+', "_")));
        std::fs::create_dir_all(path.parent().expect("cdf path has a parent"))?;
        std::fs::write(path, format_cdf(&m.pooled))?;
    }
    write_json(&all, &dir.join("merged.json"))?;
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.plan(), SplitPlan::with_seed(0));
        assert_eq!(cfg.train_toa.max_epochs, 250);
    }

    #[test]
    fn config_overrides_and_validation() {
        let cfg = RunConfig::from_toml_str("seed = 7\n[split]\nn_repetitions = 3\n[train_toa]\nmax_epochs = 5\n").unwrap();
        assert_eq!(cfg.plan().seeds, SplitPlan::with_seed(7).seeds[..3].to_vec());
        assert_eq!(cfg.reps(None).unwrap(), vec![0, 1, 2]);
        assert!(cfg.reps(Some(3)).is_err());
        assert_ne!(cfg.toa_train_config(0).seed, cfg.toa_train_config(1).seed);
        assert_ne!(cfg.toa_train_config(0).seed, cfg.fp_train_config(0).seed);
        assert!(matches!(RunConfig::from_toml_str("[split]\ntrain_frac = 0.9\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("bogus = ["), Err(Error::Config(_))));
    }

    #[test]
    fn bad_env_names() {
        for e in ["", "report", "a/b", ".."] {
            assert!(check_env_name(e).is_err());
        }
        assert!(check_env_name("office").is_ok());
    }
}
