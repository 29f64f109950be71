//! Synthetic multipath CIR generator.
//!
//! A CIR is the magnitude of a sum of delayed, scaled pulses plus additive
//! white noise clipped at zero. Links are LOS or NLOS, drawn i.i.d. per
//! anchor-tag link. On an NLOS link the direct path is attenuated and the
//! dominant energy arrives with a positive excess delay, so a threshold
//! detector ranges long. The device ToA is emulated with the Peak detector
//! at `beta = 0.2` on the raw CIR.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cir::{toa_to_range, CirRecord, PhysConstants, Position2D, DEFAULT_N_RAW};
use crate::error::{Error, Result};
use crate::toa::peak_index;

/// Threshold factor of the emulated device first-path detector.
pub const DEVICE_PEAK_BETA: f64 = 0.2;

/// Lag of the pulse peak behind the arrival it marks in the presets; the
/// receiver timestamps the leading edge, not the peak.
pub const PRESET_PULSE_ONSET_NS: f64 = 0.4;

/// Bandwidth of the DW1000 channel used for the default pulse, in GHz.
pub const DEFAULT_BANDWIDTH_GHZ: f64 = 0.4992;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathComponent {
    pub amplitude: f64,
    pub delay_ns: f64,
    /// Carrier phase in radians.
    #[serde(default)]
    pub phase: f64,
}

impl PathComponent {
    pub fn new(amplitude: f64, delay_ns: f64) -> Self {
        Self {
            amplitude,
            delay_ns,
            phase: 0.0,
        }
    }

    pub fn with_phase(amplitude: f64, delay_ns: f64, phase: f64) -> Self {
        Self { amplitude, delay_ns, phase }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseKind {
    /// `exp(-t^2 / (2 w^2))`, `w` is the standard deviation.
    Gaussian,
    /// Raised cosine with roll-off 0.5, `w` is the symbol period.
    RaisedCosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    pub kind: PulseKind,
    pub width_ns: f64,
    /// Lag of the pulse peak behind the arrival time it marks.
    #[serde(default)]
    pub onset_ns: f64,
}

const RC_ROLLOFF: f64 = 0.5;

impl Default for PulseShape {
    fn default() -> Self {
        Self::gaussian_for_bandwidth(DEFAULT_BANDWIDTH_GHZ)
    }
}

impl PulseShape {
    /// Gaussian whose -3 dB (half power) two-sided bandwidth is `bw_ghz`.
    pub fn gaussian_for_bandwidth(bw_ghz: f64) -> Self {
        Self {
            kind: PulseKind::Gaussian,
            width_ns: std::f64::consts::LN_2.sqrt() / (std::f64::consts::PI * bw_ghz),
            onset_ns: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_ns > 0.0 && self.width_ns.is_finite()) {
            return Err(Error::InvalidScenario(format!("pulse width {} must be positive", self.width_ns)));
        }
        if !(self.onset_ns >= 0.0 && self.onset_ns.is_finite()) {
            return Err(Error::InvalidScenario(format!("pulse onset {} must be >= 0", self.onset_ns)));
        }
        Ok(())
    }

    pub fn eval(&self, t_ns: f64) -> f64 {
        let w = self.width_ns;
        match self.kind {
            PulseKind::Gaussian => (-(t_ns * t_ns) / (2.0 * w * w)).exp(),
            PulseKind::RaisedCosine => {
                let x = t_ns / w;
                let sinc = |x: f64| {
                    if x.abs() < 1e-12 {
                        1.0
                    } else {
                        (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
                    }
                };
                let denom = 1.0 - (2.0 * RC_ROLLOFF * x).powi(2);
                if denom.abs() < 1e-9 {
                    std::f64::consts::FRAC_PI_4 * sinc(1.0 / (2.0 * RC_ROLLOFF))
                } else {
                    sinc(x) * (std::f64::consts::PI * RC_ROLLOFF * x).cos() / denom
                }
            }
        }
    }

    /// Half-width beyond which the pulse is treated as zero.
    fn support_ns(&self) -> f64 {
        match self.kind {
            PulseKind::Gaussian => 10.0 * self.width_ns,
            PulseKind::RaisedCosine => 40.0 * self.width_ns,
        }
    }
}

/// Superposes the phased pulses of `paths` in complex baseband, adds
/// circular white noise with total standard deviation
/// `noise_sd` and returns the magnitude.
pub fn render_cir<R: Rng + ?Sized>(
    paths: &[PathComponent],
    pulse: &PulseShape,
    n_samples: usize,
    delta_t_ns: f64,
    noise_sd: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if paths.is_empty() {
        return Err(Error::InvalidScenario("no propagation paths".into()));
    }
    pulse.validate()?;
    let span_ns = n_samples as f64 * delta_t_ns;
    for p in paths {
        if !(p.delay_ns >= 0.0 && p.delay_ns < span_ns) {
            return Err(Error::DelayOutOfRange {
                delay_ns: p.delay_ns,
                span_ns,
            });
        }
        if !(p.amplitude > 0.0 && p.amplitude.is_finite()) {
            return Err(Error::InvalidScenario(format!("path amplitude {} must be positive", p.amplitude)));
        }
    }
    let mut re = vec![0.0; n_samples];
    let mut im = vec![0.0; n_samples];
    let support = pulse.support_ns();
    for p in paths {
        let center = p.delay_ns + pulse.onset_ns;
        let lo = ((center - support) / delta_t_ns).floor().max(0.0) as usize;
        let hi = (((center + support) / delta_t_ns).ceil() as usize + 1).min(n_samples);
        let (s, c) = p.phase.sin_cos();
        for n in lo..hi {
            let v = p.amplitude * pulse.eval(n as f64 * delta_t_ns - center);
            re[n] += v * c;
            im[n] += v * s;
        }
    }
    if noise_sd > 0.0 {
        let sd = noise_sd / std::f64::consts::SQRT_2;
        let noise = Normal::new(0.0, sd).map_err(|e| Error::InvalidScenario(e.to_string()))?;
        for (r, i) in re.iter_mut().zip(im.iter_mut()) {
            *r += noise.sample(rng);
            *i += noise.sample(rng);
        }
    }
    let out = re.iter().zip(&im).map(|(r, i)| r.hypot(*i)).collect();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayDistribution {
    pub mean: f64,
    pub std: f64,
}

/// Shape of the diffuse multipath following the first (LOS) or dominant
/// (NLOS) arrival.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultipathProfile {
    /// Mean of the exponential inter-arrival time between components, ns.
    pub mean_interarrival_ns: f64,
    /// Exponential amplitude decay constant, ns.
    pub decay_ns: f64,
    /// Range of the uniform random amplitude factor of each component.
    pub min_rel_amp: f64,
    pub max_rel_amp: f64,
}

impl Default for MultipathProfile {
    fn default() -> Self {
        Self {
            mean_interarrival_ns: 3.0,
            decay_ns: 20.0,
            min_rel_amp: 0.2,
            max_rel_amp: 0.8,
        }
    }
}

fn default_repetitions() -> usize {
    1
}
fn default_n_samples() -> usize {
    DEFAULT_N_RAW
}
fn default_jitter() -> f64 {
    0.05
}
fn default_quantum() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub env_id: String,
    pub anchors: Vec<Position2D>,
    pub tag_points: Vec<Position2D>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    pub nlos_prob: f64,
    pub nlos_excess_delay_ns: DelayDistribution,
    /// Minimum attenuation of the direct path on NLOS links.
    pub nlos_first_path_atten_db: f64,
    /// Width of the uniform spread added to the NLOS attenuation.
    #[serde(default)]
    pub nlos_first_path_atten_spread_db: f64,
    /// Number of multipath components per link, first arrival included.
    pub n_paths: usize,
    /// Noise standard deviation in amplitude units. A LOS path of 10 m has
    /// amplitude 1 and amplitude falls off as 1/distance.
    pub noise_floor: f64,
    pub seed: u64,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub pulse: PulseShape,
    #[serde(default)]
    pub multipath: MultipathProfile,
    /// Relative standard deviation of per-repetition amplitude fluctuation.
    #[serde(default = "default_jitter")]
    pub amplitude_jitter: f64,
    /// Output resolution of CIR magnitudes; 0 keeps full precision.
    #[serde(default = "default_quantum")]
    pub sample_quantum: f64,
    #[serde(default)]
    pub constants: PhysConstants,
}

fn collinear(points: &[Position2D]) -> bool {
    let Some(first) = points.first() else { return true };
    let scale = points.iter().map(|p| p.distance(first)).fold(0.0, f64::max);
    if scale == 0.0 {
        return true;
    }
    let far = points.iter().max_by(|a, b| a.distance(first).total_cmp(&b.distance(first))).unwrap();
    let d = *far - *first;
    points.iter().all(|p| {
        let e = *p - *first;
        (d.x * e.y - d.y * e.x).abs() <= 1e-9 * scale * scale
    })
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.anchors.len() < 3 {
            return bad(format!("need at least 3 anchors, got {}", self.anchors.len()));
        }
        if collinear(&self.anchors) {
            return bad("anchors are collinear".into());
        }
        if !(0.0..=1.0).contains(&self.nlos_prob) {
            return bad(format!("nlos_prob {} not in [0, 1]", self.nlos_prob));
        }
        if !(self.nlos_first_path_atten_db >= 0.0 && self.nlos_first_path_atten_spread_db >= 0.0) {
            return bad("NLOS attenuation and its spread must be >= 0".into());
        }
        if !(self.nlos_excess_delay_ns.std >= 0.0 && self.nlos_excess_delay_ns.mean.is_finite()) {
            return bad("invalid NLOS excess delay distribution".into());
        }
        if self.n_paths == 0 {
            return bad("n_paths must be >= 1".into());
        }
        if !(self.noise_floor >= 0.0) {
            return bad("noise_floor must be >= 0".into());
        }
        if self.repetitions == 0 || self.n_samples == 0 {
            return bad("repetitions and n_samples must be >= 1".into());
        }
        let m = &self.multipath;
        if !(m.mean_interarrival_ns > 0.0 && m.decay_ns > 0.0 && 0.0 < m.min_rel_amp && m.min_rel_amp <= m.max_rel_amp) {
            return bad("invalid multipath profile".into());
        }
        if !(self.amplitude_jitter >= 0.0) {
            return bad("amplitude_jitter must be >= 0".into());
        }
        if !(self.sample_quantum >= 0.0 && self.sample_quantum.is_finite()) {
            return bad("sample_quantum must be >= 0".into());
        }
        self.pulse.validate()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario is always serializable")
    }

    /// Built-in environments loosely shaped after the four measurement sites
    /// (apartment, house, office, industrial), ordered by increasing NLOS
    /// severity. Each gives 8 anchors x 80 tag points x 30 repetitions.
    pub fn preset(env: &str) -> Result<Self> {
        let (w, h, trajectory, nlos_prob, bias, atten, noise, decay) = match env {
            "apartment" => (800.0, 600.0, false, 0.2, (2.0, 1.0), 14.0, 0.03, 15.0),
            "house" => (1400.0, 1000.0, true, 0.35, (3.0, 1.5), 16.0, 0.03, 20.0),
            "office" => (2000.0, 1200.0, true, 0.45, (4.0, 2.0), 18.0, 0.03, 25.0),
            "industrial" => (3000.0, 2000.0, false, 0.55, (5.0, 2.5), 20.0, 0.03, 35.0),
            other => return Err(Error::InvalidScenario(format!("unknown preset environment '{other}'"))),
        };
        let anchors = vec![
            Position2D::new(0.0, 0.0),
            Position2D::new(w * 0.5, -30.0),
            Position2D::new(w, 0.0),
            Position2D::new(w + 30.0, h * 0.5),
            Position2D::new(w, h),
            Position2D::new(w * 0.45, h + 30.0),
            Position2D::new(0.0, h),
            Position2D::new(-30.0, h * 0.55),
        ];
        let tag_points = if trajectory {
            trajectory_points(w, h, 80)
        } else {
            grid_points(w, h, 10, 8)
        };
        let seed = match env {
            "apartment" => 11,
            "house" => 12,
            "office" => 13,
            _ => 14,
        };
        let sc = Scenario {
            env_id: env.to_string(),
            anchors,
            tag_points,
            repetitions: 30,
            nlos_prob,
            nlos_excess_delay_ns: DelayDistribution { mean: bias.0, std: bias.1 },
            nlos_first_path_atten_db: atten,
            nlos_first_path_atten_spread_db: 10.0,
            n_paths: 12,
            noise_floor: noise,
            seed,
            n_samples: DEFAULT_N_RAW,
            pulse: PulseShape {
                onset_ns: PRESET_PULSE_ONSET_NS,
                ..PulseShape::default()
            },
            multipath: MultipathProfile {
                decay_ns: decay,
                ..MultipathProfile::default()
            },
            amplitude_jitter: default_jitter(),
            sample_quantum: default_quantum(),
            constants: PhysConstants::default(),
        };
        sc.validate()?;
        Ok(sc)
    }

    pub const PRESETS: [&'static str; 4] = ["apartment", "house", "office", "industrial"];
}

/// Regular `nx` x `ny` grid inset from the walls.
pub fn grid_points(w: f64, h: f64, nx: usize, ny: usize) -> Vec<Position2D> {
    let mut pts = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            pts.push(Position2D::new(
                w * (i as f64 + 0.5) / nx as f64,
                h * (j as f64 + 0.5) / ny as f64,
            ));
        }
    }
    pts
}

/// Points along a closed rectangular walking path with a middle corridor.
pub fn trajectory_points(w: f64, h: f64, n: usize) -> Vec<Position2D> {
    let (x0, x1, y0, y1) = (0.15 * w, 0.85 * w, 0.2 * h, 0.8 * h);
    let ym = 0.5 * h;
    let legs = [
        (Position2D::new(x0, y0), Position2D::new(x1, y0)),
        (Position2D::new(x1, y0), Position2D::new(x1, y1)),
        (Position2D::new(x1, y1), Position2D::new(x0, y1)),
        (Position2D::new(x0, y1), Position2D::new(x0, y0)),
        (Position2D::new(x0, ym), Position2D::new(x1, ym)),
    ];
    let total: f64 = legs.iter().map(|(a, b)| a.distance(b)).sum();
    (0..n)
        .map(|i| {
            let mut s = total * i as f64 / n as f64;
            for (a, b) in legs {
                let len = a.distance(&b);
                if s <= len {
                    let f = s / len;
                    return Position2D::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y));
                }
                s -= len;
            }
            legs[4].1
        })
        .collect()
}

/// Simulated record with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub record: CirRecord,
    /// Geometric ToA in samples.
    pub true_toa: f64,
    pub is_nlos: bool,
}

/// Static propagation of one anchor-tag link; repetitions only perturb
/// amplitudes and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkChannel {
    pub is_nlos: bool,
    pub paths: Vec<PathComponent>,
}

fn draw_multipath<R: Rng + ?Sized>(start_ns: f64, count: usize, profile: &MultipathProfile, rng: &mut R) -> Vec<PathComponent> {
    let gaps = Exp::new(1.0 / profile.mean_interarrival_ns).expect("validated rate");
    let mut t = start_ns;
    (0..count)
        .map(|_| {
            t += gaps.sample(rng);
            let excess = t - start_ns;
            let amp = (-excess / profile.decay_ns).exp() * rng.gen_range(profile.min_rel_amp..=profile.max_rel_amp);
            PathComponent::with_phase(amp, t, rng.gen_range(0.0..std::f64::consts::TAU))
        })
        .collect()
}

impl LinkChannel {
    /// Draws LOS/NLOS state and the path structure for a link of the given
    /// length.
    pub fn draw<R: Rng + ?Sized>(distance_cm: f64, scenario: &Scenario, rng: &mut R) -> Self {
        let k = &scenario.constants;
        let tof_ns = distance_cm / k.c;
        let gain = 1000.0 / distance_cm.max(50.0);
        let is_nlos = rng.gen_bool(scenario.nlos_prob);
        let mut paths = Vec::with_capacity(scenario.n_paths + 1);
        if is_nlos {
            let dist = &scenario.nlos_excess_delay_ns;
            let normal = Normal::new(dist.mean, dist.std.max(1e-12)).expect("validated std");
            let mut bias = normal.sample(rng);
            for _ in 0..64 {
                if bias > 0.0 {
                    break;
                }
                bias = normal.sample(rng);
            }
            let bias = bias.abs();
            let atten_db = scenario.nlos_first_path_atten_db + rng.gen_range(0.0..=scenario.nlos_first_path_atten_spread_db);
            let atten = 10f64.powf(-atten_db / 20.0);
            paths.push(PathComponent::new(atten, tof_ns));
            paths.push(PathComponent::with_phase(1.0, tof_ns + bias, rng.gen_range(0.0..std::f64::consts::TAU)));
            let rest = scenario.n_paths.saturating_sub(2);
            paths.extend(draw_multipath(tof_ns + bias, rest, &scenario.multipath, rng));
        } else {
            paths.push(PathComponent::new(1.0, tof_ns));
            paths.extend(draw_multipath(tof_ns, scenario.n_paths - 1, &scenario.multipath, rng));
        }
        for p in &mut paths {
            p.amplitude *= gain;
        }
        Self { is_nlos, paths }
    }

    /// Renders one repetition of the link.
    pub fn realize<R: Rng + ?Sized>(&self, scenario: &Scenario, rng: &mut R) -> Result<Vec<f64>> {
        let jitter = Normal::new(0.0, scenario.amplitude_jitter.max(1e-300)).expect("validated jitter");
        let paths: Vec<PathComponent> = self
            .paths
            .iter()
            .map(|p| {
                let f = if scenario.amplitude_jitter > 0.0 {
                    (1.0 + jitter.sample(rng)).max(0.05)
                } else {
                    1.0
                };
                PathComponent::new(p.amplitude * f, p.delay_ns)
            })
            .collect();
        let mut samples = render_cir(
            &paths,
            &scenario.pulse,
            scenario.n_samples,
            scenario.constants.delta_t,
            scenario.noise_floor,
            rng,
        )?;
        if scenario.sample_quantum > 0.0 {
            // dividing by the integer step count keeps decimal output short
            let steps = (1.0 / scenario.sample_quantum).round();
            samples.iter_mut().for_each(|v| *v = (*v * steps).round() / steps);
        }
        Ok(samples)
    }
}

fn assemble(
    anchor_id: u32,
    anchor: Position2D,
    tag_id: u32,
    tag: Position2D,
    rep_id: u32,
    link: &LinkChannel,
    samples: Vec<f64>,
    scenario: &Scenario,
) -> Result<SynthRecord> {
    let k = &scenario.constants;
    let distance = anchor.distance(&tag);
    let fp = peak_index(&samples, DEVICE_PEAK_BETA)?;
    let toa_dwm = fp as f64;
    let record = CirRecord {
        env_id: scenario.env_id.clone(),
        anchor_id,
        tag_id,
        rep_id,
        anchor_pos: anchor,
        tag_pos: tag,
        samples,
        first_path_idx: fp,
        toa_dwm,
        range_err_cm: Some(toa_to_range(toa_dwm, k) - distance),
    };
    Ok(SynthRecord {
        record,
        true_toa: distance / k.cm_per_sample(),
        is_nlos: link.is_nlos,
    })
}

/// Simulates one measurement between `anchor` and `tag`, drawing both the
/// link state and the repetition noise from `rng`.
pub fn simulate_link<R: Rng + ?Sized>(anchor: Position2D, tag: Position2D, scenario: &Scenario, rng: &mut R) -> Result<SynthRecord> {
    let link = LinkChannel::draw(anchor.distance(&tag), scenario, rng);
    let samples = link.realize(scenario, rng)?;
    assemble(0, anchor, 0, tag, 0, &link, samples, scenario)
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream seed derived from the scenario seed and a list of indices.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

const LINK_STREAM: u64 = u64::MAX;

/// Records of one fingerprint set: one measurement per anchor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintGroup {
    pub tag_id: u32,
    pub rep_id: u32,
    /// Indices into `Corpus::records`, in anchor order.
    pub records: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub records: Vec<SynthRecord>,
    pub groups: Vec<FingerprintGroup>,
}

impl Corpus {
    pub fn cir_records(&self) -> Vec<CirRecord> {
        self.records.iter().map(|r| r.record.clone()).collect()
    }
}

/// One record per (tag point, repetition, anchor), in that order.
pub fn generate_corpus(scenario: &Scenario) -> Result<Corpus> {
    scenario.validate()?;
    let per_tag: Vec<Vec<SynthRecord>> = scenario
        .tag_points
        .par_iter()
        .enumerate()
        .map(|(tag_idx, &tag)| {
            let links: Vec<LinkChannel> = scenario
                .anchors
                .iter()
                .enumerate()
                .map(|(a, &anchor)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, &[a as u64, tag_idx as u64, LINK_STREAM]));
                    LinkChannel::draw(anchor.distance(&tag), scenario, &mut rng)
                })
                .collect();
            let mut out = Vec::with_capacity(scenario.repetitions * scenario.anchors.len());
            for rep in 0..scenario.repetitions {
                for (a, &anchor) in scenario.anchors.iter().enumerate() {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, &[a as u64, tag_idx as u64, rep as u64]));
                    let samples = links[a].realize(scenario, &mut rng)?;
                    out.push(assemble(a as u32, anchor, tag_idx as u32, tag, rep as u32, &links[a], samples, scenario)?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let n_anchors = scenario.anchors.len();
    let records: Vec<SynthRecord> = per_tag.into_iter().flatten().collect();
    let groups = records
        .chunks(n_anchors)
        .enumerate()
        .map(|(g, chunk)| FingerprintGroup {
            tag_id: chunk[0].record.tag_id,
            rep_id: chunk[0].record.rep_id,
            records: (g * n_anchors..(g + 1) * n_anchors).collect(),
        })
        .collect();
    Ok(Corpus { records, groups })
}
