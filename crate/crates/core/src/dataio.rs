//! Canonical record files, the public-dataset adapter, dataset assembly and
//! train/validation/test splits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cir::{preprocess, toa_label, CirRecord, CirWindow, PhysConstants, Position2D};
use crate::error::{Error, Result};
use crate::models::FingerprintSet;
use crate::sim::derive_seed;

pub const CANONICAL_MAGIC: &str = "uwbpos-canonical";
pub const CANONICAL_VERSION: u32 = 1;

const META_COLUMNS: [&str; 11] = [
    "env_id",
    "anchor_id",
    "tag_id",
    "rep_id",
    "anchor_x",
    "anchor_y",
    "tag_x",
    "tag_y",
    "first_path_idx",
    "toa_dwm",
    "range_err_cm",
];

/// A source row that could not be converted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRow {
    pub file: String,
    /// 1-based line number in the source file.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records: Vec<CirRecord>,
    pub skipped: Vec<SkippedRow>,
    /// Record count per environment.
    pub counts: BTreeMap<String, usize>,
}

impl IngestReport {
    fn finish(mut self) -> Self {
        sort_canonical(&mut self.records);
        self.counts.clear();
        for r in &self.records {
            *self.counts.entry(r.env_id.clone()).or_default() += 1;
        }
        self
    }

    pub fn is_partial(&self) -> bool {
        !self.skipped.is_empty()
    }
}

/// Sorts records by (env, tag, rep, anchor).
pub fn sort_canonical(records: &mut [CirRecord]) {
    records.sort_by(|a, b| {
        (&a.env_id, a.tag_id, a.rep_id, a.anchor_id).cmp(&(&b.env_id, b.tag_id, b.rep_id, b.anchor_id))
    });
}

fn schema_err(file: &str, detail: impl Into<String>) -> Error {
    Error::SchemaMismatch {
        file: file.to_string(),
        detail: detail.into(),
    }
}

/// Writes records as tab-separated text. The first line names the schema
/// version and CIR length, the second is the column header.
pub fn write_canonical<W: Write>(records: &[CirRecord], out: W) -> Result<()> {
    let n_raw = records.first().map_or(0, |r| r.samples.len());
    if let Some(r) = records.iter().find(|r| r.samples.len() != n_raw) {
        return Err(Error::InvalidRecord(format!(
            "mixed CIR lengths ({} and {}) cannot share a canonical file",
            n_raw,
            r.samples.len()
        )));
    }
    let mut out = BufWriter::new(out);
    writeln!(out, "# {CANONICAL_MAGIC} v{CANONICAL_VERSION} n_raw={n_raw}")?;
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
    let mut header: Vec<String> = META_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..n_raw).map(|i| format!("s{i}")));
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for r in records {
        row.clear();
        row.push(r.env_id.clone());
        row.push(r.anchor_id.to_string());
        row.push(r.tag_id.to_string());
        row.push(r.rep_id.to_string());
        row.push(r.anchor_pos.x.to_string());
        row.push(r.anchor_pos.y.to_string());
        row.push(r.tag_pos.x.to_string());
        row.push(r.tag_pos.y.to_string());
        row.push(r.first_path_idx.to_string());
        row.push(r.toa_dwm.to_string());
        row.push(r.range_err_cm.map(|v| v.to_string()).unwrap_or_default());
        row.extend(r.samples.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_canonical(records: &[CirRecord], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    write_canonical(records, File::create(path)?)
}

fn parse_field<T: std::str::FromStr>(row: &csv::StringRecord, idx: usize, name: &str) -> std::result::Result<T, String> {
    let raw = row.get(idx).ok_or_else(|| format!("missing field {name}"))?;
    raw.trim().parse::<T>().map_err(|_| format!("cannot parse {name} from '{raw}'"))
}

/// Reads a canonical file. Malformed rows are skipped and reported; a wrong
/// version line or header is a schema error.
pub fn read_canonical<R: Read>(input: R, file: &str) -> Result<IngestReport> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let mut parts = first.trim().trim_start_matches('#').split_whitespace();
    let (magic, version, n_raw) = (parts.next(), parts.next(), parts.next());
    if magic != Some(CANONICAL_MAGIC) || version != Some(&format!("v{CANONICAL_VERSION}")) {
        return Err(schema_err(file, format!("bad version line '{}'", first.trim())));
    }
    let n_raw: usize = n_raw
        .and_then(|s| s.strip_prefix("n_raw="))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| schema_err(file, "missing n_raw in version line"))?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .flexible(true)
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    for (i, name) in META_COLUMNS.iter().enumerate() {
        if header.get(i) != Some(name) {
            return Err(schema_err(file, format!("column {i} should be {name}, found {:?}", header.get(i))));
        }
    }
    if header.len() != META_COLUMNS.len() + n_raw {
        return Err(schema_err(
            file,
            format!("header has {} sample columns, version line says {n_raw}", header.len() - META_COLUMNS.len()),
        ));
    }
    let mut report = IngestReport::default();
    for (i, row) in rdr.records().enumerate() {
        let line = i as u64 + 3;
        let row = row?;
        let parsed = (|| -> std::result::Result<CirRecord, String> {
            if row.len() != header.len() {
                return Err(format!("expected {} fields, found {}", header.len(), row.len()));
            }
            let range_err = match row.get(10).map(str::trim) {
                Some("") | None => None,
                Some(_) => Some(parse_field::<f64>(&row, 10, "range_err_cm")?),
            };
            let samples = (0..n_raw)
                .map(|k| parse_field::<f64>(&row, META_COLUMNS.len() + k, "sample"))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let rec = CirRecord {
                env_id: row.get(0).unwrap_or_default().to_string(),
                anchor_id: parse_field(&row, 1, "anchor_id")?,
                tag_id: parse_field(&row, 2, "tag_id")?,
                rep_id: parse_field(&row, 3, "rep_id")?,
                anchor_pos: Position2D::new(parse_field(&row, 4, "anchor_x")?, parse_field(&row, 5, "anchor_y")?),
                tag_pos: Position2D::new(parse_field(&row, 6, "tag_x")?, parse_field(&row, 7, "tag_y")?),
                first_path_idx: parse_field(&row, 8, "first_path_idx")?,
                toa_dwm: parse_field(&row, 9, "toa_dwm")?,
                range_err_cm: range_err,
                samples,
            };
            rec.validate().map_err(|e| e.to_string())?;
            Ok(rec)
        })();
        match parsed {
            Ok(r) => report.records.push(r),
            Err(reason) => report.skipped.push(SkippedRow {
                file: file.to_string(),
                line,
                reason,
            }),
        }
    }
    Ok(report.finish())
}

pub fn load_canonical(path: &Path) -> Result<IngestReport> {
    if !path.exists() {
        return Err(Error::MissingArtifacts(path.to_path_buf()));
    }
    read_canonical(File::open(path)?, &path.display().to_string())
}

/// Source column names for the public-dataset adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterColumns {
    /// Environment column; when absent the adapter's `env_id` or the file
    /// stem is used.
    pub env_id: Option<String>,
    pub anchor_id: String,
    pub tag_id: String,
    /// Repetition column; when absent repetitions are numbered in order of
    /// appearance per (environment, anchor, tag).
    pub rep_id: Option<String>,
    pub anchor_x: String,
    pub anchor_y: String,
    pub tag_x: String,
    pub tag_y: String,
    /// Device first path index; may be fractional, it is rounded down.
    pub first_path_idx: Option<String>,
    /// Device ToA in samples; defaults to the first path index.
    pub toa_dwm: Option<String>,
    /// Device ranging error.
    pub range_err: Option<String>,
    /// Device range; used to derive the ranging error when `range_err` is absent.
    pub range: Option<String>,
    /// Prefix of the CIR columns, numbered from 0 (real part or magnitude).
    pub cir_prefix: String,
    /// Prefix of imaginary CIR columns; when set, magnitudes are taken.
    pub cir_imag_prefix: Option<String>,
}

/// Adapter configuration, read from a TOML key-value file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    /// Only files with this extension are read from a directory.
    #[serde(default = "default_extension")]
    pub extension: String,
    pub n_raw: usize,
    pub env_id: Option<String>,
    /// Multiplier taking source positions to cm.
    #[serde(default = "unit")]
    pub position_scale: f64,
    /// Multiplier taking source ranges and range errors to cm.
    #[serde(default = "unit")]
    pub range_scale: f64,
    pub columns: AdapterColumns,
}

fn default_delimiter() -> String {
    ",".into()
}
fn default_extension() -> String {
    "csv".into()
}
fn unit() -> f64 {
    1.0
}

impl AdapterConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.delimiter.len() != 1 {
            return Err(Error::Config(format!("delimiter must be one byte, got '{}'", cfg.delimiter)));
        }
        if cfg.n_raw == 0 {
            return Err(Error::Config("n_raw must be >= 1".into()));
        }
        if cfg.columns.first_path_idx.is_none() && cfg.columns.toa_dwm.is_none() {
            return Err(Error::Config("one of first_path_idx or toa_dwm columns is required".into()));
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

struct ColumnMap {
    env: Option<usize>,
    anchor: usize,
    tag: usize,
    rep: Option<usize>,
    ax: usize,
    ay: usize,
    tx: usize,
    ty: usize,
    fp: Option<usize>,
    toa: Option<usize>,
    err: Option<usize>,
    range: Option<usize>,
    re: Vec<usize>,
    im: Option<Vec<usize>>,
}

impl ColumnMap {
    fn new(header: &csv::StringRecord, cfg: &AdapterConfig, file: &str) -> Result<Self> {
        let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
        let find = |name: &str| index.get(name).copied().ok_or_else(|| schema_err(file, format!("missing column '{name}'")));
        let opt = |name: &Option<String>| name.as_deref().map(find).transpose();
        let c = &cfg.columns;
        let cir = |prefix: &str| (0..cfg.n_raw).map(|k| find(&format!("{prefix}{k}"))).collect::<Result<Vec<_>>>();
        Ok(Self {
            env: opt(&c.env_id)?,
            anchor: find(&c.anchor_id)?,
            tag: find(&c.tag_id)?,
            rep: opt(&c.rep_id)?,
            ax: find(&c.anchor_x)?,
            ay: find(&c.anchor_y)?,
            tx: find(&c.tag_x)?,
            ty: find(&c.tag_y)?,
            fp: opt(&c.first_path_idx)?,
            toa: opt(&c.toa_dwm)?,
            err: opt(&c.range_err)?,
            range: opt(&c.range)?,
            re: cir(&c.cir_prefix)?,
            im: c.cir_imag_prefix.as_deref().map(cir).transpose()?,
        })
    }
}

fn num(row: &csv::StringRecord, idx: usize) -> std::result::Result<f64, String> {
    let raw = row.get(idx).ok_or_else(|| format!("row too short for column {idx}"))?;
    let v: f64 = raw.trim().parse().map_err(|_| format!("column {idx}: cannot parse '{raw}'"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("column {idx}: non-finite value"))
    }
}

fn id(row: &csv::StringRecord, idx: usize) -> std::result::Result<u32, String> {
    let v = num(row, idx)?;
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as u32)
    } else {
        Err(format!("column {idx}: '{v}' is not an id"))
    }
}

fn ingest_file(path: &Path, cfg: &AdapterConfig, report: &mut IngestReport, rep_counter: &mut HashMap<(String, u32, u32), u32>) -> Result<()> {
    let file = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(cfg.delimiter.as_bytes()[0])
        .flexible(true)
        .from_path(path)?;
    let cols = ColumnMap::new(&rdr.headers()?.clone(), cfg, &file)?;
    let default_env = cfg
        .env_id
        .clone()
        .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    for (i, row) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let parsed = row.map_err(|e| e.to_string()).and_then(|row| -> std::result::Result<CirRecord, String> {
            let env_id = match cols.env {
                Some(c) => row.get(c).ok_or("row too short for env column")?.trim().to_string(),
                None => default_env.clone(),
            };
            let (anchor_id, tag_id) = (id(&row, cols.anchor)?, id(&row, cols.tag)?);
            let ps = cfg.position_scale;
            let anchor_pos = Position2D::new(num(&row, cols.ax)? * ps, num(&row, cols.ay)? * ps);
            let tag_pos = Position2D::new(num(&row, cols.tx)? * ps, num(&row, cols.ty)? * ps);
            let fp_raw = cols.fp.map(|c| num(&row, c)).transpose()?;
            let toa_dwm = match (cols.toa, fp_raw) {
                (Some(c), _) => num(&row, c)?,
                (None, Some(fp)) => fp,
                (None, None) => unreachable!("validated adapter config"),
            };
            let first_path_idx = fp_raw.unwrap_or(toa_dwm).floor();
            if first_path_idx < 0.0 {
                return Err(format!("negative first path index {first_path_idx}"));
            }
            let range_err_cm = match (cols.err, cols.range) {
                (Some(c), _) => Some(num(&row, c)? * cfg.range_scale),
                (None, Some(c)) => Some(num(&row, c)? * cfg.range_scale - anchor_pos.distance(&tag_pos)),
                (None, None) => None,
            };
            let samples = match &cols.im {
                None => cols.re.iter().map(|&c| num(&row, c).map(f64::abs)).collect::<std::result::Result<Vec<_>, _>>()?,
                Some(im) => cols
                    .re
                    .iter()
                    .zip(im)
                    .map(|(&r, &m)| Ok(num(&row, r)?.hypot(num(&row, m)?)))
                    .collect::<std::result::Result<Vec<_>, String>>()?,
            };
            let rep_id = match cols.rep {
                Some(c) => id(&row, c)?,
                None => {
                    let n = rep_counter.entry((env_id.clone(), anchor_id, tag_id)).or_default();
                    *n += 1;
                    *n - 1
                }
            };
            let rec = CirRecord {
                env_id,
                anchor_id,
                tag_id,
                rep_id,
                anchor_pos,
                tag_pos,
                samples,
                first_path_idx: first_path_idx as usize,
                toa_dwm,
                range_err_cm,
            };
            rec.validate().map_err(|e| e.to_string())?;
            Ok(rec)
        });
        match parsed {
            Ok(r) => report.records.push(r),
            Err(reason) => report.skipped.push(SkippedRow {
                file: file.clone(),
                line,
                reason,
            }),
        }
    }
    Ok(())
}

/// Files to ingest under `path`: the file itself, or every file with the
/// configured extension below a directory, in sorted order.
fn source_files(path: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(Error::MissingArtifacts(path.to_path_buf()));
    }
    let mut out = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == ext) {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Maps the public dataset (or any table matching the adapter config) to
/// canonical records. Unusable rows are skipped and listed in the report.
pub fn ingest_public_dataset(path: &Path, cfg: &AdapterConfig) -> Result<IngestReport> {
    let mut report = IngestReport::default();
    let mut reps = HashMap::new();
    for f in source_files(path, &cfg.extension)? {
        ingest_file(&f, cfg, &mut report, &mut reps)?;
    }
    Ok(report.finish())
}

/// One ToA training or evaluation item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToaItem {
    /// Index into the source record list.
    pub record: usize,
    pub window: CirWindow,
    /// Label as a window-relative sample offset.
    pub label_rel: f64,
    /// Label as an absolute sample index.
    pub label_abs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToaDataset {
    pub items: Vec<ToaItem>,
    pub missing_label: usize,
    pub all_zero: usize,
}

/// Windows every labeled record and expresses its label relative to the
/// window. Unlabeled and all-zero records are counted and left out.
pub fn make_toa_dataset(records: &[CirRecord], k: &PhysConstants) -> Result<ToaDataset> {
    let mut ds = ToaDataset::default();
    for (i, r) in records.iter().enumerate() {
        let label = match toa_label(r, k) {
            Ok(l) => l,
            Err(Error::MissingLabel) => {
                ds.missing_label += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let window = match preprocess(r) {
            Ok(w) => w,
            Err(Error::AllZeroCir) => {
                ds.all_zero += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        ds.items.push(ToaItem {
            record: i,
            label_rel: window.to_relative(label),
            label_abs: label,
            window,
        });
    }
    Ok(ds)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FpDataset {
    pub sets: Vec<FingerprintSet>,
    /// Source record index per set and anchor, `None` where missing.
    pub set_records: Vec<Vec<Option<usize>>>,
    /// True for sets with at least one zero channel.
    pub incomplete: Vec<bool>,
    /// Canonical anchor order.
    pub anchor_ids: Vec<u32>,
    pub anchor_positions: Vec<Position2D>,
}

impl FpDataset {
    pub fn incomplete_count(&self) -> usize {
        self.incomplete.iter().filter(|b| **b).count()
    }
}

/// Groups records into one fingerprint set per (environment, tag point,
/// repetition) with anchors in ascending id order.
pub fn make_fp_dataset(records: &[CirRecord]) -> Result<FpDataset> {
    let mut anchors: BTreeMap<u32, Position2D> = BTreeMap::new();
    for r in records {
        anchors.entry(r.anchor_id).or_insert(r.anchor_pos);
    }
    let anchor_ids: Vec<u32> = anchors.keys().copied().collect();
    let slot: HashMap<u32, usize> = anchor_ids.iter().enumerate().map(|(i, a)| (*a, i)).collect();
    let mut groups: BTreeMap<(&str, u32, u32), Vec<Option<usize>>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let g = groups
            .entry((r.env_id.as_str(), r.tag_id, r.rep_id))
            .or_insert_with(|| vec![None; anchor_ids.len()]);
        g[slot[&r.anchor_id]] = Some(i);
    }
    let mut ds = FpDataset {
        anchor_ids: anchor_ids.clone(),
        anchor_positions: anchors.values().copied().collect(),
        ..FpDataset::default()
    };
    for ((env, tag, rep), members) in groups {
        let first = members.iter().flatten().next().map(|&i| &records[i]).expect("group has a record");
        let mut windows = Vec::with_capacity(members.len());
        let mut incomplete = false;
        for m in &members {
            let w = match m.map(|i| preprocess(&records[i])) {
                Some(Ok(w)) => Some(w),
                Some(Err(Error::AllZeroCir)) | None => None,
                Some(Err(e)) => return Err(e),
            };
            incomplete |= w.is_none();
            windows.push(w.unwrap_or_else(CirWindow::zeros));
        }
        ds.sets.push(FingerprintSet {
            env_id: env.to_string(),
            tag_id: tag,
            rep_id: rep,
            anchor_ids: anchor_ids.clone(),
            windows,
            position: first.tag_pos,
        });
        ds.set_records.push(members);
        ds.incomplete.push(incomplete);
    }
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Items (or measurement sets) are assigned at random.
    #[default]
    Random,
    /// All measurements of a tag point land in the same partition.
    LocationDisjoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPlan {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub n_repetitions: usize,
    /// One shuffle seed per repetition.
    pub seeds: Vec<u64>,
    pub mode: SplitMode,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self::with_seed(0)
    }
}

impl SplitPlan {
    /// 70/15/15 plan with ten repetitions whose seeds derive from `seed`.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            train_frac: 0.70,
            val_frac: 0.15,
            test_frac: 0.15,
            n_repetitions: 10,
            seeds: (0..10).map(|r| derive_seed(seed, &[0x5EED, r])).collect(),
            mode: SplitMode::Random,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must be in [0, 1] and sum to 1: {fr:?}")));
        }
        if self.n_repetitions == 0 || self.seeds.len() < self.n_repetitions {
            return Err(Error::Config(format!(
                "need n_repetitions >= 1 and one seed per repetition ({} seeds for {})",
                self.seeds.len(),
                self.n_repetitions
            )));
        }
        Ok(())
    }

    fn seed(&self, rep: usize) -> Result<u64> {
        if rep >= self.n_repetitions {
            return Err(Error::Config(format!("repetition {rep} outside plan of {}", self.n_repetitions)));
        }
        Ok(self.seeds[rep])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions `0..n` for repetition `rep`. Sizes are `round(0.7 n)`,
/// `round(0.15 n)` and the remainder; each list is sorted.
pub fn split(n: usize, plan: &SplitPlan, rep: usize) -> Result<Split> {
    plan.validate()?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(plan.seed(rep)?));
    let n_train = ((n as f64) * plan.train_frac).round() as usize;
    let n_val = (((n as f64) * plan.val_frac).round() as usize).min(n - n_train);
    let part = |r: std::ops::Range<usize>| {
        let mut v = idx[r].to_vec();
        v.sort_unstable();
        v
    };
    Ok(Split {
        train: part(0..n_train),
        val: part(n_train..n_train + n_val),
        test: part(n_train + n_val..n),
    })
}

/// Splits items that carry a group key: the distinct keys are partitioned
/// as in [`split`] and every item follows its key.
pub fn split_grouped<K: Ord + Clone>(keys: &[K], plan: &SplitPlan, rep: usize) -> Result<Split> {
    let distinct: Vec<K> = keys.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let s = split(distinct.len(), plan, rep)?;
    let mut part = vec![0u8; distinct.len()];
    s.val.iter().for_each(|&i| part[i] = 1);
    s.test.iter().for_each(|&i| part[i] = 2);
    let mut out = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (i, k) in keys.iter().enumerate() {
        let g = distinct.binary_search(k).expect("key present");
        match part[g] {
            0 => out.train.push(i),
            1 => out.val.push(i),
            _ => out.test.push(i),
        }
    }
    Ok(out)
}

/// Split of fingerprint sets under the plan's mode: per set, or per tag
/// point when location-disjoint.
pub fn split_sets(sets: &[FingerprintSet], plan: &SplitPlan, rep: usize) -> Result<Split> {
    match plan.mode {
        SplitMode::Random => {
            let keys: Vec<(String, u32, u32)> = sets.iter().map(|s| (s.env_id.clone(), s.tag_id, s.rep_id)).collect();
            split_grouped(&keys, plan, rep)
        }
        SplitMode::LocationDisjoint => {
            let keys: Vec<(String, u32)> = sets.iter().map(|s| (s.env_id.clone(), s.tag_id)).collect();
            split_grouped(&keys, plan, rep)
        }
    }
}

/// Record-level split that keeps the records of one measurement set
/// together, following the set split so ToA models never see records of
/// test sets.
pub fn split_records_by_set(records: &[CirRecord], plan: &SplitPlan, rep: usize) -> Result<Split> {
    match plan.mode {
        SplitMode::Random => {
            let keys: Vec<(&str, u32, u32)> = records.iter().map(|r| (r.env_id.as_str(), r.tag_id, r.rep_id)).collect();
            split_grouped(&keys, plan, rep)
        }
        SplitMode::LocationDisjoint => {
            let keys: Vec<(&str, u32)> = records.iter().map(|r| (r.env_id.as_str(), r.tag_id)).collect();
            split_grouped(&keys, plan, rep)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_corpus, Scenario};
    use proptest::prelude::*;

    fn record(fp: usize, label: Option<f64>) -> CirRecord {
        let mut samples = vec![0.0; 1016];
        samples[fp] = 1.0;
        CirRecord {
            env_id: "e".into(),
            anchor_id: 0,
            tag_id: 0,
            rep_id: 0,
            anchor_pos: Position2D::new(0.0, 0.0),
            tag_pos: Position2D::new(100.0, 0.0),
            samples,
            first_path_idx: fp,
            toa_dwm: fp as f64,
            range_err_cm: label.map(|l| (fp as f64 - l) * PhysConstants::default().cm_per_sample()),
        }
    }

    fn small_corpus() -> Vec<CirRecord> {
        let mut sc = Scenario::preset("apartment").unwrap();
        sc.tag_points.truncate(3);
        sc.repetitions = 2;
        generate_corpus(&sc).unwrap().cir_records()
    }

    #[test]
    fn window_relative_label() {
        let ds = make_toa_dataset(&[record(300, Some(298.7))], &PhysConstants::default()).unwrap();
        assert_eq!(ds.items[0].window.window_start, 290);
        assert!((ds.items[0].label_rel - 8.7).abs() < 1e-9);
    }

    #[test]
    fn unlabeled_records_are_counted() {
        let ds = make_toa_dataset(&[record(300, None), record(200, Some(199.0))], &PhysConstants::default()).unwrap();
        assert_eq!(ds.items.len(), 1);
        assert_eq!(ds.missing_label, 1);
        assert_eq!(ds.items[0].record, 1);
    }

    #[test]
    fn canonical_round_trip() {
        let recs = small_corpus();
        let mut buf = Vec::new();
        write_canonical(&recs, &mut buf).unwrap();
        let back = read_canonical(buf.as_slice(), "mem").unwrap();
        assert!(back.skipped.is_empty());
        assert_eq!(back.records, recs);
        assert_eq!(back.counts["apartment"], recs.len());
        let mut again = Vec::new();
        write_canonical(&back.records, &mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn canonical_truncated_row_is_skipped() {
        let recs = small_corpus();
        let mut buf = Vec::new();
        write_canonical(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let cut = &lines[4][..lines[4].len() / 2];
        lines[4] = cut;
        let back = read_canonical(lines.join("\n").as_bytes(), "mem").unwrap();
        assert_eq!(back.records.len(), recs.len() - 1);
        assert_eq!(back.skipped.len(), 1);
        assert_eq!(back.skipped[0].line, 5);
    }

    #[test]
    fn canonical_bad_version() {
        let r = read_canonical("# uwbpos-canonical v9 n_raw=3\n".as_bytes(), "mem");
        assert!(matches!(r, Err(Error::SchemaMismatch { .. })));
    }

    const ADAPTER: &str = r#"
delimiter = ","
n_raw = 4
env_id = "lab"
position_scale = 100.0
range_scale = 100.0
[columns]
anchor_id = "anchor"
tag_id = "tag"
anchor_x = "ax"
anchor_y = "ay"
tag_x = "tx"
tag_y = "ty"
first_path_idx = "fp_index"
range = "range"
cir_prefix = "re"
cir_imag_prefix = "im"
"#;

    #[test]
    fn adapter_ingest_with_complex_cir_and_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let body = "anchor,tag,ax,ay,tx,ty,fp_index,range,re0,re1,re2,re3,im0,im1,im2,im3\n\
                    1,0,0,0,3,4,1.5,5.2,0,3,1,0,0,4,0,0\n\
                    1,0,0,0,3,4,1.25,5.1,0,3,1,0,0,4,0\n\
                    2,0,10,0,3,4,1.0,8.1,0,1,0,0,0,0,0,0\n\
                    1,0,0,0,3,4,1.0,5.0,0,1,0,0,0,0,0,0\n";
        std::fs::write(dir.path().join("a.csv"), body).unwrap();
        std::fs::write(dir.path().join("ignored.txt"), "junk").unwrap();
        let cfg = AdapterConfig::from_toml_str(ADAPTER).unwrap();
        let rep = ingest_public_dataset(dir.path(), &cfg).unwrap();
        assert_eq!(rep.records.len(), 3);
        assert_eq!(rep.skipped.len(), 1);
        assert_eq!(rep.skipped[0].line, 3);
        assert_eq!(rep.counts["lab"], 3);
        let r0 = &rep.records[0];
        assert_eq!((r0.anchor_id, r0.rep_id), (1, 0));
        assert_eq!(r0.samples, vec![0.0, 5.0, 1.0, 0.0]);
        assert_eq!(r0.first_path_idx, 1);
        assert_eq!(r0.toa_dwm, 1.5);
        assert_eq!(r0.tag_pos, Position2D::new(300.0, 400.0));
        assert!((r0.range_err_cm.unwrap() - 20.0).abs() < 1e-9);
        // third source row is the second repetition of anchor 1
        assert_eq!(rep.records[1].anchor_id, 2);
        assert_eq!((rep.records[2].anchor_id, rep.records[2].rep_id), (1, 1));
    }

    #[test]
    fn adapter_missing_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "anchor,tag\n1,2\n").unwrap();
        let cfg = AdapterConfig::from_toml_str(ADAPTER).unwrap();
        match ingest_public_dataset(dir.path(), &cfg) {
            Err(Error::SchemaMismatch { detail, .. }) => assert!(detail.contains("ax"), "{detail}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_directory_gives_no_records() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = AdapterConfig::from_toml_str(ADAPTER).unwrap();
        let rep = ingest_public_dataset(dir.path(), &cfg).unwrap();
        assert!(rep.records.is_empty() && rep.counts.is_empty());
    }

    #[test]
    fn fingerprint_sets_with_missing_anchor() {
        let mut recs = small_corpus();
        let total_sets = 3 * 2;
        let ds = make_fp_dataset(&recs).unwrap();
        assert_eq!(ds.sets.len(), total_sets);
        assert_eq!(ds.incomplete_count(), 0);
        assert_eq!(ds.anchor_ids, (0..8).collect::<Vec<u32>>());
        for (s, members) in ds.sets.iter().zip(&ds.set_records) {
            assert_eq!(s.windows.len(), 8);
            for m in members {
                assert_eq!(recs[m.unwrap()].tag_pos, s.position);
            }
        }
        recs.remove(3);
        let ds = make_fp_dataset(&recs).unwrap();
        assert_eq!(ds.sets.len(), total_sets);
        assert_eq!(ds.incomplete_count(), 1);
        assert!(ds.incomplete[0]);
        assert_eq!(ds.sets[0].windows[3], CirWindow::zeros());
        assert!(ds.set_records[0][3].is_none());
    }

    #[test]
    fn split_sizes_and_reps() {
        let plan = SplitPlan::with_seed(1);
        let s0 = split(100, &plan, 0).unwrap();
        assert_eq!((s0.train.len(), s0.val.len(), s0.test.len()), (70, 15, 15));
        let s1 = split(100, &plan, 1).unwrap();
        assert_ne!(s0, s1);
        assert_eq!(s0, split(100, &plan, 0).unwrap());
        assert!(split(100, &plan, 10).is_err());
    }

    #[test]
    fn grouped_split_keeps_groups_together() {
        let keys: Vec<u32> = (0..200).map(|i| i / 8).collect();
        let s = split_grouped(&keys, &SplitPlan::with_seed(2), 3).unwrap();
        for part in [&s.train, &s.val, &s.test] {
            for &i in part.iter() {
                let same: Vec<usize> = (0..200).filter(|&j| keys[j] == keys[i]).collect();
                assert!(same.iter().all(|j| part.contains(j)));
            }
        }
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 200);
    }

    #[test]
    fn location_disjoint_mode() {
        let ds = make_fp_dataset(&small_corpus()).unwrap();
        let plan = SplitPlan {
            mode: SplitMode::LocationDisjoint,
            ..SplitPlan::with_seed(4)
        };
        let s = split_sets(&ds.sets, &plan, 0).unwrap();
        let tags = |idx: &[usize]| idx.iter().map(|&i| ds.sets[i].tag_id).collect::<BTreeSet<_>>();
        assert!(tags(&s.train).is_disjoint(&tags(&s.test)));
        assert!(tags(&s.train).is_disjoint(&tags(&s.val)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn split_is_a_partition(n in 0usize..400, rep in 0usize..10, seed in any::<u64>()) {
            let s = split(n, &SplitPlan::with_seed(seed), rep).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!((s.train.len() as f64 - 0.7 * n as f64).abs() <= 0.5);
            prop_assert!((s.val.len() as f64 - 0.15 * n as f64).abs() <= 1.0);
        }
    }
}
