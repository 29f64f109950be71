//! Error metrics, per-repetition ranging and positioning evaluation, and the
//! merged tables and CDF outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cir::{CirRecord, PhysConstants, Position2D};
use crate::dataio::{make_fp_dataset, make_toa_dataset, split_records_by_set, split_sets, FpDataset, Split, SplitPlan, ToaDataset};
use crate::error::{Error, Result};
use crate::locate::{centroid, positioning_error, solve, RangeObservation, Solver, SolverConfig};
use crate::models::{FingerprintSet, FpModel, ToaModel};
use crate::net::{TrainConfig, TrainHistory};
use crate::toa::{tune, Conventional, EstimatorKind, LdeParams, PeakParams, TuneGrid};

pub const PERCENTILE_CONVENTION: &str = "linear interpolation between closest ranks";

/// Percentile `p` in [0, 100] with linear interpolation between the closest
/// ranks: rank `p/100 * (n-1)` in the sorted samples.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidParams(format!("percentile {p} outside [0, 100]")));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(sorted_percentile(&v, p))
}

fn sorted_percentile(v: &[f64], p: f64) -> f64 {
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (rank - lo as f64) * (v[hi] - v[lo])
}

/// Empirical CDF: sorted samples paired with `i / n`, ending at 1.
pub fn cdf_points(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter().enumerate().map(|(i, e)| (e, (i + 1) as f64 / n)).collect()
}

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len().max(1) as f64
}

/// Errors of one method on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub env: String,
    pub rep: u32,
    pub seed: u64,
    pub percentile_convention: String,
    pub n: usize,
    /// Items whose estimate fell back to a default (detector or solver failure).
    pub failures: usize,
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub mae: f64,
    pub errors_cm: Vec<f64>,
    pub cdf: Vec<(f64, f64)>,
}

impl EvalReport {
    pub fn from_errors(method: &str, env: &str, rep: u32, seed: u64, errors_cm: Vec<f64>, failures: usize) -> Result<Self> {
        let mut sorted = errors_cm.clone();
        if sorted.is_empty() {
            return Err(Error::EmptySamples);
        }
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            method: method.to_string(),
            env: env.to_string(),
            rep,
            seed,
            percentile_convention: PERCENTILE_CONVENTION.into(),
            n: errors_cm.len(),
            failures,
            p50: sorted_percentile(&sorted, 50.0),
            p90: sorted_percentile(&sorted, 90.0),
            p95: sorted_percentile(&sorted, 95.0),
            mae: mean(&errors_cm),
            cdf: cdf_points(&errors_cm),
            errors_cm,
        })
    }
}

/// Tuned conventional detectors of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedParams {
    pub peak: PeakParams,
    pub lde: LdeParams,
    /// Training-set MAE in samples.
    pub peak_mae: f64,
    pub lde_mae: f64,
    pub n_train: usize,
}

/// One environment's records with both derived datasets.
#[derive(Debug, Clone)]
pub struct EnvData {
    pub env: String,
    pub records: Vec<CirRecord>,
    pub toa: ToaDataset,
    pub fp: FpDataset,
    /// ToA item index of each record, if it has one.
    pub item_of_record: Vec<Option<usize>>,
    pub constants: PhysConstants,
}

/// Record- and set-level partitions of one repetition. Both come from the
/// same partition of measurement sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepSplit {
    pub records: Split,
    pub sets: Split,
}

impl EnvData {
    pub fn new(env: &str, records: Vec<CirRecord>, constants: PhysConstants) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let toa = make_toa_dataset(&records, &constants)?;
        let fp = make_fp_dataset(&records)?;
        let mut item_of_record = vec![None; records.len()];
        for (i, it) in toa.items.iter().enumerate() {
            item_of_record[it.record] = Some(i);
        }
        Ok(Self {
            env: env.to_string(),
            records,
            toa,
            fp,
            item_of_record,
            constants,
        })
    }

    pub fn rep_split(&self, plan: &SplitPlan, rep: usize) -> Result<RepSplit> {
        Ok(RepSplit {
            records: split_records_by_set(&self.records, plan, rep)?,
            sets: split_sets(&self.fp.sets, plan, rep)?,
        })
    }

    /// ToA items of the given records, skipping records without one.
    pub fn items_of(&self, records: &[usize]) -> Vec<usize> {
        records.iter().filter_map(|&r| self.item_of_record[r]).collect()
    }

    fn toa_pairs(&self, records: &[usize]) -> Vec<(&crate::cir::CirWindow, f64)> {
        self.items_of(records)
            .into_iter()
            .map(|i| (&self.toa.items[i].window, self.toa.items[i].label_rel))
            .collect()
    }

    fn sets_of(&self, idx: &[usize]) -> Vec<&FingerprintSet> {
        idx.iter().map(|&i| &self.fp.sets[i]).collect()
    }
}

/// Grid-tunes Peak and LDE on the training records.
pub fn tune_rep(data: &EnvData, split: &RepSplit, grid: &TuneGrid) -> Result<TunedParams> {
    let items = data.items_of(&split.records.train);
    let windows: Vec<_> = items.iter().map(|&i| data.toa.items[i].window.clone()).collect();
    let labels: Vec<f64> = items.iter().map(|&i| data.toa.items[i].label_rel).collect();
    let peak = tune(EstimatorKind::Peak, grid, &windows, &labels)?;
    let lde = tune(EstimatorKind::Lde, grid, &windows, &labels)?;
    let (Conventional::Peak(p), Conventional::Lde(l)) = (peak.best, lde.best) else {
        unreachable!("tune returns the requested kind")
    };
    Ok(TunedParams {
        peak: p,
        lde: l,
        peak_mae: peak.mae,
        lde_mae: lde.mae,
        n_train: windows.len(),
    })
}

pub fn train_toa_rep(data: &EnvData, split: &RepSplit, cfg: &TrainConfig) -> Result<(ToaModel, TrainHistory)> {
    let train = data.toa_pairs(&split.records.train);
    let val = data.toa_pairs(&split.records.val);
    ToaModel::fit(&train, &val, cfg, cfg.seed)
}

pub fn train_fp_rep(data: &EnvData, split: &RepSplit, cfg: &TrainConfig) -> Result<(FpModel, TrainHistory)> {
    FpModel::fit(&data.sets_of(&split.sets.train), &data.sets_of(&split.sets.val), cfg, cfg.seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToaMethod {
    Peak,
    Lde,
    AnnToa,
}

impl ToaMethod {
    pub const ALL: [ToaMethod; 3] = [ToaMethod::Peak, ToaMethod::Lde, ToaMethod::AnnToa];

    pub fn name(&self) -> &'static str {
        match self {
            ToaMethod::Peak => "peak",
            ToaMethod::Lde => "lde",
            ToaMethod::AnnToa => "ann_toa",
        }
    }
}

/// Trained artifacts of one repetition.
#[derive(Debug, Clone, Copy)]
pub struct Artifacts<'a> {
    pub tuned: &'a TunedParams,
    pub toa_model: &'a ToaModel,
    pub fp_model: Option<&'a FpModel>,
}

/// Window-relative ToA estimates of the given items; the flag marks
/// detector failures that fell back to the device first path.
fn estimate_items(data: &EnvData, items: &[usize], method: ToaMethod, art: &Artifacts) -> Result<Vec<(f64, bool)>> {
    items
        .par_iter()
        .map(|&i| {
            let w = &data.toa.items[i].window;
            Ok(match method {
                ToaMethod::Peak => match Conventional::Peak(art.tuned.peak).estimate(w) {
                    Ok(t) => (t, false),
                    Err(_) => (Conventional::Peak(art.tuned.peak).estimate_or_first_path(w), true),
                },
                ToaMethod::Lde => match Conventional::Lde(art.tuned.lde).estimate(w) {
                    Ok(t) => (t, false),
                    Err(_) => (Conventional::Lde(art.tuned.lde).estimate_or_first_path(w), true),
                },
                ToaMethod::AnnToa => (art.toa_model.estimate_toa(w)?, false),
            })
        })
        .collect()
}

/// Absolute ranging error per test record, for each ToA method.
pub fn ranging_eval(data: &EnvData, split: &RepSplit, art: &Artifacts, rep: u32, seed: u64) -> Result<Vec<EvalReport>> {
    let items = data.items_of(&split.records.test);
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cps = data.constants.cm_per_sample();
    ToaMethod::ALL
        .iter()
        .map(|&m| {
            let est = estimate_items(data, &items, m, art)?;
            let errors = items
                .iter()
                .zip(&est)
                .map(|(&i, (t, _))| (t - data.toa.items[i].label_rel).abs() * cps)
                .collect();
            let failures = est.iter().filter(|(_, f)| *f).count();
            EvalReport::from_errors(m.name(), &data.env, rep, seed, errors, failures)
        })
        .collect()
}

/// Range implied by an absolute ToA estimate: the device range corrected by
/// the ToA difference to the device estimate. Unlabeled records fall back to
/// the plain ToA-to-range conversion.
pub fn corrected_range(record: &CirRecord, toa_abs: f64, k: &PhysConstants) -> f64 {
    let r = match record.range_err_cm {
        Some(err) => record.true_distance() + err + (toa_abs - record.toa_dwm) * k.cm_per_sample(),
        None => crate::cir::toa_to_range(toa_abs, k),
    };
    r.max(0.0)
}

pub fn positioning_method_name(m: ToaMethod, s: Solver) -> String {
    format!("{}+{}", m.name(), s.name())
}

/// 2D positioning error per test measurement set: every ToA method with
/// every solver, plus ANN_FP when its model is given.
pub fn positioning_eval(
    data: &EnvData,
    split: &RepSplit,
    art: &Artifacts,
    solver_cfg: &SolverConfig,
    rep: u32,
    seed: u64,
) -> Result<Vec<EvalReport>> {
    let sets = &split.sets.test;
    if sets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    // ToA estimates for every record of the test sets, once per method.
    let mut reports = Vec::new();
    for m in ToaMethod::ALL {
        let per_set: Vec<Vec<(usize, f64)>> = sets
            .iter()
            .map(|&s| {
                let items: Vec<usize> = data.fp.set_records[s].iter().flatten().filter_map(|&r| data.item_of_record[r]).collect();
                let est = estimate_items(data, &items, m, art)?;
                Ok(items
                    .iter()
                    .zip(est)
                    .map(|(&i, (t, _))| {
                        let it = &data.toa.items[i];
                        (it.record, it.window.to_absolute(t))
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        for solver in Solver::ALL {
            let results: Vec<(f64, bool)> = sets
                .par_iter()
                .zip(&per_set)
                .map(|(&s, toas)| {
                    let obs: Vec<RangeObservation> = toas
                        .iter()
                        .map(|&(r, t)| {
                            let rec = &data.records[r];
                            RangeObservation::new(rec.anchor_pos, corrected_range(rec, t, &data.constants))
                        })
                        .collect();
                    let truth = data.fp.sets[s].position;
                    match solve(&obs, solver, solver_cfg) {
                        Ok(fix) => (positioning_error(&fix.position, &truth), false),
                        Err(_) => {
                            let fallback = if obs.is_empty() { anchor_centroid(&data.fp.anchor_positions) } else { centroid(&obs) };
                            (positioning_error(&fallback, &truth), true)
                        }
                    }
                })
                .collect();
            let failures = results.iter().filter(|r| r.1).count();
            reports.push(EvalReport::from_errors(
                &positioning_method_name(m, solver),
                &data.env,
                rep,
                seed,
                results.into_iter().map(|r| r.0).collect(),
                failures,
            )?);
        }
    }
    if let Some(fp) = art.fp_model {
        let test = data.sets_of(sets);
        let est = fp.estimate_batch(&test)?;
        let errors = test.iter().zip(&est).map(|(s, p)| positioning_error(p, &s.position)).collect();
        reports.push(EvalReport::from_errors("ann_fp", &data.env, rep, seed, errors, 0)?);
    }
    Ok(reports)
}

fn anchor_centroid(anchors: &[Position2D]) -> Position2D {
    let n = anchors.len().max(1) as f64;
    let (x, y) = anchors.iter().fold((0.0, 0.0), |(x, y), a| (x + a.x, y + a.y));
    Position2D::new(x / n, y / n)
}

/// One method in one environment across repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedReport {
    pub method: String,
    pub env: String,
    pub reps: Vec<u32>,
    pub percentile_convention: String,
    /// 90th percentile averaged over repetitions.
    pub p90_mean: f64,
    pub p90_per_rep: Vec<f64>,
    pub mae_mean: f64,
    /// Statistics of all repetitions' errors pooled together.
    pub pooled: EvalReport,
}

/// Merges per-repetition reports by (environment, method). Input order does
/// not matter; repetitions are ordered by index.
pub fn merge_reports(reports: &[EvalReport]) -> Result<Vec<MergedReport>> {
    let mut groups: BTreeMap<(&str, &str), Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        groups.entry((&r.env, &r.method)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((env, method), mut rs)| {
            rs.sort_by_key(|r| r.rep);
            let pooled_errors: Vec<f64> = rs.iter().flat_map(|r| r.errors_cm.iter().copied()).collect();
            let failures = rs.iter().map(|r| r.failures).sum();
            let mut pooled = EvalReport::from_errors(method, env, 0, rs[0].seed, pooled_errors, failures)?;
            pooled.rep = u32::MAX;
            Ok(MergedReport {
                method: method.to_string(),
                env: env.to_string(),
                reps: rs.iter().map(|r| r.rep).collect(),
                percentile_convention: PERCENTILE_CONVENTION.into(),
                p90_mean: mean(&rs.iter().map(|r| r.p90).collect::<Vec<_>>()),
                p90_per_rep: rs.iter().map(|r| r.p90).collect(),
                mae_mean: mean(&rs.iter().map(|r| r.mae).collect::<Vec<_>>()),
                pooled,
            })
        })
        .collect()
}

/// Tab-separated table with methods as rows and environments as columns,
/// holding the rep-averaged 90th percentile in cm. Missing cells are "-".
pub fn format_table(title: &str, rows: &[(&str, String)], envs: &[String], merged: &[MergedReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {title}");
    let _ = writeln!(out, "# 90th percentile error in cm, averaged over repetitions; percentile: {PERCENTILE_CONVENTION}");
    let _ = writeln!(out, "method\t{}", envs.join("\t"));
    for (label, method) in rows {
        let cells: Vec<String> = envs
            .iter()
            .map(|e| {
                merged
                    .iter()
                    .find(|m| &m.env == e && &m.method == method)
                    .map_or("-".to_string(), |m| format!("{:.1}", m.p90_mean))
            })
            .collect();
        let _ = writeln!(out, "{label}\t{}", cells.join("\t"));
    }
    out
}

pub fn ranging_rows() -> Vec<(&'static str, String)> {
    vec![
        ("Peak", ToaMethod::Peak.name().to_string()),
        ("LDE", ToaMethod::Lde.name().to_string()),
        ("ANN_ToA", ToaMethod::AnnToa.name().to_string()),
    ]
}

/// Solver comparison on ANN_ToA estimates.
pub fn solver_rows() -> Vec<(&'static str, String)> {
    vec![
        ("Algo1", positioning_method_name(ToaMethod::AnnToa, Solver::Algo1)),
        ("Algo2@closest_anchor", positioning_method_name(ToaMethod::AnnToa, Solver::Algo2ClosestInit)),
        ("Algo2@Algo1", positioning_method_name(ToaMethod::AnnToa, Solver::Algo2Algo1Init)),
    ]
}

/// The positioning comparison: every ToA method through Algo2 started at
/// Algo1, and ANN_FP.
pub fn positioning_rows() -> Vec<(&'static str, String)> {
    vec![
        ("ANN_FP", "ann_fp".to_string()),
        ("ANN_ToA", positioning_method_name(ToaMethod::AnnToa, Solver::Algo2Algo1Init)),
        ("LDE", positioning_method_name(ToaMethod::Lde, Solver::Algo2Algo1Init)),
        ("Peak", positioning_method_name(ToaMethod::Peak, Solver::Algo2Algo1Init)),
    ]
}

/// Two-column CDF text: error in cm and cumulative fraction.
pub fn format_cdf(report: &EvalReport) -> String {
    let mut out = String::with_capacity(report.cdf.len() * 24);
    let _ = writeln!(out, "error_cm\tfraction");
    for (e, f) in &report.cdf {
        let _ = writeln!(out, "{e}\t{f}");
    }
    out
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifacts(path.to_path_buf()));
    }
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn percentile_examples() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((percentile(&v, 90.0).unwrap() - 9.1).abs() < 1e-12);
        assert_eq!(percentile(&[4.2], 37.0).unwrap(), 4.2);
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 10.0);
        assert!(matches!(percentile(&[], 50.0), Err(Error::EmptySamples)));
        assert!(percentile(&v, 101.0).is_err());
    }

    #[test]
    fn cdf_ends_at_one() {
        let c = cdf_points(&[3.0, 1.0, 2.0]);
        assert_eq!(c, vec![(1.0, 1.0 / 3.0), (2.0, 2.0 / 3.0), (3.0, 1.0)]);
    }

    #[test]
    fn report_fields_are_consistent() {
        let errors: Vec<f64> = (0..57).map(|i| ((i * 37) % 57) as f64 * 1.5).collect();
        let r = EvalReport::from_errors("m", "e", 2, 9, errors.clone(), 1).unwrap();
        assert_eq!(r.p90, percentile(&errors, 90.0).unwrap());
        assert_eq!(r.n, 57);
        assert_eq!(r.cdf.last().unwrap().1, 1.0);
        assert!(r.cdf.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1));
    }

    #[test]
    fn merge_averages_percentiles_and_pools_samples() {
        let a = EvalReport::from_errors("m", "e", 1, 0, vec![1.0, 2.0, 3.0], 0).unwrap();
        let b = EvalReport::from_errors("m", "e", 0, 0, vec![10.0, 20.0], 0).unwrap();
        let merged = merge_reports(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(merged.len(), 1);
        let m = &merged[0];
        assert_eq!(m.reps, vec![0, 1]);
        assert_eq!(m.p90_per_rep, vec![b.p90, a.p90]);
        assert!((m.p90_mean - (a.p90 + b.p90) / 2.0).abs() < 1e-12);
        assert_eq!(m.pooled.n, 5);
        // merging does not alter its inputs
        assert_eq!(a, EvalReport::from_errors("m", "e", 1, 0, vec![1.0, 2.0, 3.0], 0).unwrap());
    }

    #[test]
    fn table_layout() {
        let a = EvalReport::from_errors("peak", "apartment", 0, 0, vec![1.0, 2.0], 0).unwrap();
        let merged = merge_reports(&[a]).unwrap();
        let t = format_table("Ranging", &ranging_rows(), &["apartment".into(), "house".into()], &merged);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[2], "method\tapartment\thouse");
        assert_eq!(lines[3], "Peak\t1.9\t-");
        assert_eq!(lines[4], "LDE\t-\t-");
    }

    #[test]
    fn corrected_range_matches_label_geometry() {
        let k = PhysConstants::default();
        let rec = CirRecord {
            env_id: "e".into(),
            anchor_id: 0,
            tag_id: 0,
            rep_id: 0,
            anchor_pos: Position2D::new(0.0, 0.0),
            tag_pos: Position2D::new(300.0, 400.0),
            samples: vec![1.0; 64],
            first_path_idx: 20,
            toa_dwm: 20.0,
            range_err_cm: Some(12.0),
        };
        let label = crate::cir::toa_label(&rec, &k).unwrap();
        assert!((corrected_range(&rec, label, &k) - 500.0).abs() < 1e-9);
        assert!((corrected_range(&rec, label + 1.0, &k) - 500.0 - k.cm_per_sample()).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn percentile_monotone_and_scale_equivariant(
            v in proptest::collection::vec(0.0..1e3f64, 1..60),
            p in 0.0..100.0f64,
            q in 0.0..100.0f64,
            s in 0.1..10.0f64,
        ) {
            let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
            prop_assert!(percentile(&v, lo).unwrap() <= percentile(&v, hi).unwrap());
            let scaled: Vec<f64> = v.iter().map(|x| x * s).collect();
            let a = percentile(&scaled, p).unwrap();
            let b = s * percentile(&v, p).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }
}
