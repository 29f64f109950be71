//! Acceptance suite: one PASS / FAIL / SKIP line per criterion.
//!
//! Failures are reported, not hidden: the process exits 0 so the workspace
//! test run stays usable, unless `UWB_ACCEPTANCE_STRICT=1` is set, in which
//! case any FAIL exits 1. Criterion 7 needs `UWB_DATASET_DIR` (dataset root)
//! and `UWB_DATASET_ADAPTER` (adapter TOML).

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uwbpos::cir::{preprocess, toa_label, toa_to_range, PhysConstants, Position2D};
use uwbpos::dataio::{load_canonical, save_canonical, AdapterConfig};
use uwbpos::eval::{positioning_eval, ranging_eval, train_toa_rep, tune_rep, Artifacts, EnvData, EvalReport};
use uwbpos::locate::{algo1_lls, algo2_iterative, closest_anchor, positioning_error, RangeObservation, SolverConfig};
use uwbpos::models::{TargetScaler, ToaModel};
use uwbpos::pipeline::RunConfig;
use uwbpos::sim::{generate_corpus, Scenario};
use uwbpos::toa::{lde_index, peak_index, LdeParams, TuneGrid};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

const ENVS: [&str; 4] = Scenario::PRESETS;
/// Epoch cap for the per-environment ANN_ToA runs of criteria 5 and 6.
const TABLE_EPOCHS: usize = 40;
/// Reference 90th percentile ranging errors (cm) measured on the public
/// dataset: Peak, LDE, ANN_ToA per environment.
const REFERENCE_RANGING_P90: [(&str, [f64; 3]); 4] = [
    ("apartment", [75.0, 52.0, 41.0]),
    ("house", [139.0, 71.0, 66.0]),
    ("office", [168.0, 109.0, 108.0]),
    ("industrial", [232.0, 147.0, 121.0]),
];

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = SolverConfig::default();
    let mut scenes = Vec::new();
    while scenes.len() < 1000 {
        let n = rng.gen_range(3..=8);
        let anchors: Vec<Position2D> = (0..n).map(|_| Position2D::new(rng.gen_range(0.0..2000.0), rng.gen_range(0.0..2000.0))).collect();
        // reject near-collinear layouts: every anchor triple spans less than 10 m^2
        let mut best_area: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let (a, b, c) = (anchors[i], anchors[j], anchors[k]);
                    best_area = best_area.max(((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)).abs() / 2.0);
                }
            }
        }
        if best_area < 1e5 {
            continue;
        }
        let tag = Position2D::new(rng.gen_range(0.0..2000.0), rng.gen_range(0.0..2000.0));
        let obs: Vec<RangeObservation> = anchors.iter().map(|a| RangeObservation::new(*a, a.distance(&tag))).collect();
        scenes.push((obs, tag));
    }
    let start = Instant::now();
    let mut worst = [0.0f64; 3];
    // exact ranges can still trap Gauss-Newton started at an anchor in a
    // local minimum; counted and reported, Algo2 proper starts at Algo1
    let mut closest_misses = 0;
    for (obs, tag) in &scenes {
        let p1 = algo1_lls(obs).unwrap();
        let p2 = algo2_iterative(obs, p1, &cfg).unwrap().position;
        let p3 = algo2_iterative(obs, closest_anchor(obs).unwrap(), &cfg).unwrap().position;
        for (w, p) in worst.iter_mut().zip([p1, p2, p3]) {
            *w = w.max(positioning_error(&p, tag));
        }
        closest_misses += usize::from(positioning_error(&p3, tag) >= 1e-4);
    }
    let elapsed = start.elapsed();
    // positions are in cm; 1e-6 m = 1e-4 cm
    let ok = worst[0] < 1e-4 && worst[1] < 1e-4 && elapsed < Duration::from_secs(1);
    verdict(
        ok,
        format!(
            "max error Algo1 {:.2e} m, Algo2@Algo1 {:.2e} m; 1000 scenes in {:.3} s; \
             Algo2@closest-anchor (informative) stuck in a local minimum in {closest_misses}/1000, worst {:.2e} m",
            worst[0] / 100.0,
            worst[1] / 100.0,
            elapsed.as_secs_f64(),
            worst[2] / 100.0
        ),
    )
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = TuneGrid::default();
    let mut windows = Vec::new();
    for env in ENVS {
        let corpus = generate_corpus(&common::small_preset(env, 1, 2)).unwrap();
        windows.extend(corpus.records.iter().take(250).map(|r| preprocess(&r.record).unwrap().values));
    }
    let (mut peak_mismatch, mut lde_mismatch) = (0, 0);
    for w in &windows {
        let beta = if rng.gen_bool(0.5) { grid.beta[rng.gen_range(0..grid.beta.len())] } else { rng.gen_range(0.01..1.0) };
        if peak_index(w, beta).ok() != common::peak_oracle(w, beta) {
            peak_mismatch += 1;
        }
        let w_small = rng.gen_range(1..=8);
        let p = LdeParams {
            beta,
            lede_factor: rng.gen_range(1.0..4.0),
            w_avg: 2 * rng.gen_range(0..4) + 1,
            w_small,
            w_large: rng.gen_range(w_small + 1..=40),
        };
        if lde_index(w, &p).ok() != common::lde_oracle(w, p.beta, p.lede_factor, p.w_avg, p.w_small, p.w_large) {
            lde_mismatch += 1;
        }
    }
    verdict(
        peak_mismatch == 0 && lde_mismatch == 0 && windows.len() == 1000,
        format!("{} windows; Peak mismatches {peak_mismatch}, LDE mismatches {lde_mismatch}", windows.len()),
    )
}

fn criterion_3() -> Verdict {
    let cases = common::gradient_check_cases();
    let ok = cases.iter().all(|(_, e)| *e < 1e-4);
    let detail: Vec<String> = cases.iter().map(|(k, e)| format!("{k} {e:.1e}")).collect();
    verdict(ok, format!("max relative error per layer kind: {}", detail.join(", ")))
}

fn rmse(model: &ToaModel, data: &EnvData, items: &[usize]) -> f64 {
    let se: f64 = items
        .iter()
        .map(|&i| {
            let it = &data.toa.items[i];
            (model.estimate_toa(&it.window).unwrap() - it.label_rel).powi(2)
        })
        .sum();
    (se / items.len() as f64).sqrt()
}

fn criterion_4() -> Verdict {
    let mut sc = Scenario::preset("house").unwrap();
    sc.nlos_prob = 0.3;
    sc.repetitions = 10;
    sc.tag_points = sc.tag_points.iter().step_by(3).take(25).copied().collect();
    let records = generate_corpus(&sc).unwrap().cir_records();
    let n_records = records.len();
    let data = EnvData::new("house", records, sc.constants).unwrap();
    let cfg = RunConfig {
        seed: 4,
        ..RunConfig::default()
    };
    let split = data.rep_split(&cfg.plan(), 0).unwrap();
    let train_labels: Vec<Vec<f64>> = data.items_of(&split.records.train).iter().map(|&i| vec![data.toa.items[i].label_rel]).collect();
    let tcfg = cfg.toa_train_config(0);
    let untrained = ToaModel::untrained(tcfg.seed, TargetScaler::fit(&train_labels).unwrap());
    let val = data.items_of(&split.records.val);
    let before = rmse(&untrained, &data, &val);
    let start = Instant::now();
    let (model, history) = train_toa_rep(&data, &split, &tcfg).unwrap();
    let elapsed = start.elapsed();
    let after = rmse(&model, &data, &val);
    let reduction = 1.0 - after / before;
    verdict(
        n_records == 2000 && reduction >= 0.5 && history.epochs.len() <= 250 && elapsed < Duration::from_secs(600),
        format!(
            "{n_records} records; validation RMSE {before:.3} -> {after:.3} samples ({:.0}% reduction), {} epochs (best {}), {:.0} s",
            100.0 * reduction,
            history.epochs.len(),
            history.best_epoch,
            elapsed.as_secs_f64()
        ),
    )
}

struct EnvResult {
    env: String,
    ranging: Vec<EvalReport>,
    positioning: Vec<EvalReport>,
}

fn p90_of(reports: &[EvalReport], method: &str) -> f64 {
    reports.iter().find(|r| r.method == method).map(|r| r.p90).unwrap_or(f64::NAN)
}

/// Reduced synthetic run per environment: 8 anchors x 80 points x 4
/// repetitions, first split repetition, ANN_ToA capped at TABLE_EPOCHS.
fn run_environments() -> Vec<EnvResult> {
    ENVS.iter()
        .map(|env| {
            let sc = common::small_preset(env, 4, 1);
            let data = EnvData::new(env, generate_corpus(&sc).unwrap().cir_records(), sc.constants).unwrap();
            let mut cfg = RunConfig {
                seed: 1,
                ..RunConfig::default()
            };
            cfg.train_toa.max_epochs = TABLE_EPOCHS;
            let split = data.rep_split(&cfg.plan(), 0).unwrap();
            let tuned = tune_rep(&data, &split, &cfg.tune).unwrap();
            let (model, _) = train_toa_rep(&data, &split, &cfg.toa_train_config(0)).unwrap();
            let art = Artifacts {
                tuned: &tuned,
                toa_model: &model,
                fp_model: None,
            };
            EnvResult {
                env: env.to_string(),
                ranging: ranging_eval(&data, &split, &art, 0, cfg.plan().seeds[0]).unwrap(),
                positioning: positioning_eval(&data, &split, &art, &cfg.solver, 0, cfg.plan().seeds[0]).unwrap(),
            }
        })
        .collect()
}

fn criterion_5(results: &[EnvResult]) -> Verdict {
    let mut ok = true;
    let detail: Vec<String> = results
        .iter()
        .map(|r| {
            let (peak, lde, ann) = (p90_of(&r.ranging, "peak"), p90_of(&r.ranging, "lde"), p90_of(&r.ranging, "ann_toa"));
            ok &= ann <= lde && lde < peak;
            format!("{} ANN_ToA {ann:.1} / LDE {lde:.1} / Peak {peak:.1}", r.env)
        })
        .collect();
    verdict(ok, format!("p90 ranging error (cm): {}", detail.join("; ")))
}

fn criterion_6(results: &[EnvResult]) -> Verdict {
    let (mut first, mut second) = (0, 0);
    let detail: Vec<String> = results
        .iter()
        .map(|r| {
            let a1 = p90_of(&r.positioning, "ann_toa+algo1");
            let a2 = p90_of(&r.positioning, "ann_toa+algo2_algo1_init");
            let a2c = p90_of(&r.positioning, "ann_toa+algo2_closest_init");
            first += usize::from(a2 <= a1);
            second += usize::from(a1 <= a2c);
            format!("{} Algo2@Algo1 {a2:.1} / Algo1 {a1:.1} / Algo2@closest {a2c:.1}", r.env)
        })
        .collect();
    let n = results.len();
    verdict(
        first == n && second == n,
        format!(
            "Algo2@Algo1 <= Algo1 in {first}/{n}, Algo1 <= Algo2@closest in {second}/{n}; p90 positioning error on ANN_ToA ToAs (cm): {}",
            detail.join("; ")
        ),
    )
}

fn criterion_7() -> Verdict {
    let (Ok(dir), Ok(adapter)) = (std::env::var("UWB_DATASET_DIR"), std::env::var("UWB_DATASET_ADAPTER")) else {
        return Verdict::Skip("public dataset not present (set UWB_DATASET_DIR and UWB_DATASET_ADAPTER)".into());
    };
    let adapter = AdapterConfig::from_file(Path::new(&adapter)).unwrap();
    let report = uwbpos::dataio::ingest_public_dataset(Path::new(&dir), &adapter).unwrap();
    let cfg = RunConfig::default();
    let mut ok = true;
    let mut detail = Vec::new();
    for (env, table) in REFERENCE_RANGING_P90 {
        let records: Vec<_> = report.records.iter().filter(|r| r.env_id.eq_ignore_ascii_case(env)).cloned().collect();
        if records.is_empty() {
            ok = false;
            detail.push(format!("{env}: no records"));
            continue;
        }
        let data = EnvData::new(env, records, PhysConstants::default()).unwrap();
        let n_sets = data.fp.sets.len();
        ok &= data.records.len() == 19200 && n_sets == 2400;
        let split = data.rep_split(&cfg.plan(), 0).unwrap();
        let tuned = tune_rep(&data, &split, &cfg.tune).unwrap();
        let (model, _) = train_toa_rep(&data, &split, &cfg.toa_train_config(0)).unwrap();
        let art = Artifacts {
            tuned: &tuned,
            toa_model: &model,
            fp_model: None,
        };
        let reports = ranging_eval(&data, &split, &art, 0, 0).unwrap();
        let got = [p90_of(&reports, "peak"), p90_of(&reports, "lde"), p90_of(&reports, "ann_toa")];
        ok &= got[2] <= got[1] && got[1] < got[0];
        ok &= got.iter().zip(table).all(|(g, t)| (g - t).abs() <= 0.25 * t);
        detail.push(format!(
            "{env}: {} records, {n_sets} sets, Peak {:.0} LDE {:.0} ANN_ToA {:.0} cm",
            data.records.len(),
            got[0],
            got[1],
            got[2]
        ));
    }
    verdict(ok, detail.join("; "))
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn run_cli_pipeline(config: &Path, out: &Path) {
    let bin = env!("CARGO_BIN_EXE_uwbpos");
    let steps: [&[&str]; 7] = [
        &["simulate", "--env", "office"],
        &["tune", "--env", "office"],
        &["train", "ann-toa", "--env", "office"],
        &["train", "ann-fp", "--env", "office"],
        &["eval", "ranging", "--env", "office"],
        &["eval", "positioning", "--env", "office"],
        &["report"],
    ];
    for args in steps {
        let o = Command::new(bin)
            .args(args)
            .arg("--config")
            .arg(config)
            .args(["--seed", "42", "--out-dir"])
            .arg(out)
            .output()
            .unwrap();
        assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    }
}

fn criterion_8() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "[split]\nn_repetitions = 2\n[simulate]\nrepetitions = 2\ntag_stride = 4\n[train_toa]\nmax_epochs = 3\n[train_fp]\nmax_epochs = 3\n",
    )
    .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_cli_pipeline(&config, &a);
    run_cli_pipeline(&config, &b);
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    let differing: Vec<&str> = ta.iter().zip(&tb).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    verdict(
        ta.len() == tb.len() && differing.is_empty() && ta.len() > 10,
        format!("{} files from simulate..report compared byte for byte, {} differ {:?}", ta.len(), differing.len(), differing),
    )
}

fn criterion_9() -> Verdict {
    let k = PhysConstants::default();
    let dir = tempfile::tempdir().unwrap();
    let (mut n, mut worst) = (0usize, 0.0f64);
    for env in ENVS {
        let path = dir.path().join(format!("{env}.tsv"));
        save_canonical(&generate_corpus(&common::small_preset(env, 2, 1)).unwrap().cir_records(), &path).unwrap();
        for r in load_canonical(&path).unwrap().records {
            let label = toa_label(&r, &k).unwrap();
            let err = toa_to_range(r.toa_dwm, &k) - toa_to_range(label, &k);
            worst = worst.max((err - r.range_err_cm.unwrap()).abs());
            n += 1;
        }
    }
    verdict(worst < 1e-9, format!("{n} labeled records, max deviation {worst:.2e} cm"))
}

fn run(n: u32, f: impl FnOnce() -> Verdict) -> Verdict {
    let start = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Verdict::Fail(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match &v {
        Verdict::Pass(d) => println!("[criterion {n}] PASS ({secs:.1} s) {d}"),
        Verdict::Fail(d) => println!("[criterion {n}] FAIL ({secs:.1} s) {d}"),
        Verdict::Skip(d) => println!("[criterion {n}] SKIP {d}"),
    }
    v
}

fn main() {
    // libtest-style arguments (filters, --list) are accepted and ignored
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut verdicts = vec![run(1, criterion_1), run(2, criterion_2), run(3, criterion_3), run(4, criterion_4)];
    let results = catch_unwind(run_environments).map_err(|_| "environment runs panicked");
    match &results {
        Ok(r) => {
            verdicts.push(run(5, || criterion_5(r)));
            verdicts.push(run(6, || criterion_6(r)));
        }
        Err(e) => {
            verdicts.push(run(5, || Verdict::Fail(e.to_string())));
            verdicts.push(run(6, || Verdict::Fail(e.to_string())));
        }
    }
    verdicts.push(run(7, criterion_7));
    verdicts.push(run(8, criterion_8));
    verdicts.push(run(9, criterion_9));
    let count = |f: fn(&Verdict) -> bool| verdicts.iter().filter(|v| f(v)).count();
    let (pass, fail, skip) = (
        count(|v| matches!(v, Verdict::Pass(_))),
        count(|v| matches!(v, Verdict::Fail(_))),
        count(|v| matches!(v, Verdict::Skip(_))),
    );
    println!("acceptance: {pass} passed, {fail} failed, {skip} skipped");
    if fail > 0 && std::env::var("UWB_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
