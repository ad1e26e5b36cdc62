use std::collections::BTreeMap;
use std::f64::consts::TAU;

use gaitlab_numerics::{RngStream, Tensor};
use serde::{Deserialize, Serialize};

use super::{channel_index, Quantity, Recording, Segment, Terrain, IMU_CHANNELS, SAMPLE_RATE_HZ};
use crate::phase::MIN_STRIDE_SAMPLES;
use crate::{Error, Result};

const GRAVITY: f64 = 9.81;

/// `offset + Σ amps[k]·sin(2π(k+1)φ + phases[k])`, in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Harmonics {
    pub offset_deg: f64,
    pub amps_deg: [f64; 3],
    pub phases_rad: [f64; 3],
}

impl Harmonics {
    /// Angle and its first three derivatives with respect to phase, in radians.
    pub fn eval(&self, phi: f64, scale: f64, offset_deg: f64) -> [f64; 4] {
        let mut out = [(scale * self.offset_deg + offset_deg).to_radians(), 0.0, 0.0, 0.0];
        for k in 0..3 {
            let w = TAU * (k + 1) as f64;
            let a = scale * self.amps_deg[k].to_radians();
            let arg = w * phi + self.phases_rad[k];
            let (s, c) = arg.sin_cos();
            out[0] += a * s;
            out[1] += a * w * c;
            out[2] -= a * w * w * s;
            out[3] -= a * w * w * w * c;
        }
        out
    }

    /// Nominal angle at phase `phi`, in degrees.
    pub fn angle_deg(&self, phi: f64) -> f64 {
        self.eval(phi, 1.0, 0.0)[0].to_degrees()
    }

    /// Upper bound on |d³θ/dφ³| for a given amplitude scale, in radians.
    pub fn third_derivative_bound(&self, scale: f64) -> f64 {
        (0..3)
            .map(|k| {
                let w = TAU * (k + 1) as f64;
                scale * self.amps_deg[k].abs().to_radians() * w.powi(3)
            })
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerrainTemplate {
    pub thigh: Harmonics,
    pub pelvis: Harmonics,
}

/// White-noise standard deviations per sensor quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub acc: f64,
    pub gyr: f64,
    pub pitch: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub version: u32,
    pub strides_per_recording: usize,
    pub stride_len_min: usize,
    pub stride_len_max: usize,
    pub min_dwell_strides: usize,
    pub max_dwell_strides: usize,
    pub amplitude_scale_range: [f64; 2],
    pub offset_deg_range: [f64; 2],
    pub thigh_radius_m: f64,
    pub pelvis_radius_m: f64,
    pub roll_amp_deg: f64,
    pub yaw_amp_deg: f64,
    pub noise: NoiseConfig,
    pub terrains: BTreeMap<Terrain, TerrainTemplate>,
}

fn h(offset_deg: f64, amps_deg: [f64; 3], phases_rad: [f64; 3]) -> Harmonics {
    Harmonics {
        offset_deg,
        amps_deg,
        phases_rad,
    }
}

impl Default for GeneratorConfig {
    /// Identical to `configs/generator.json`.
    fn default() -> Self {
        let t = |thigh, pelvis| TerrainTemplate { thigh, pelvis };
        let terrains = BTreeMap::from([
            (Terrain::LW, t(h(8.0, [22.0, 5.0, 1.5], [1.7, 0.5, 2.0]), h(10.0, [2.0, 1.5, 0.5], [0.3, 1.2, 2.1]))),
            (Terrain::SA, t(h(25.0, [28.0, 6.0, 2.0], [1.4, 0.9, 2.5]), h(16.0, [3.0, 2.0, 0.5], [0.6, 1.0, 2.4]))),
            (Terrain::SD, t(h(10.0, [20.0, 7.0, 3.0], [1.9, 0.2, 1.0]), h(6.0, [2.5, 2.0, 1.0], [0.1, 1.6, 0.8]))),
            (Terrain::SLA, t(h(15.0, [25.0, 5.0, 2.0], [1.5, 0.6, 2.2]), h(14.0, [2.0, 1.5, 0.5], [0.4, 1.1, 2.2]))),
            (Terrain::SLD, t(h(5.0, [19.0, 6.0, 2.0], [1.9, 0.4, 1.5]), h(7.0, [2.0, 1.5, 0.5], [0.2, 1.4, 1.9]))),
        ]);
        Self {
            version: 1,
            strides_per_recording: 60,
            stride_len_min: 80,
            stride_len_max: 120,
            min_dwell_strides: 3,
            max_dwell_strides: 8,
            amplitude_scale_range: [0.85, 1.15],
            offset_deg_range: [-3.0, 3.0],
            thigh_radius_m: 0.2,
            pelvis_radius_m: 0.1,
            roll_amp_deg: 3.0,
            yaw_amp_deg: 4.0,
            noise: NoiseConfig {
                acc: 0.05,
                gyr: 0.01,
                pitch: 0.002,
            },
            terrains,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid(format!("generator config: {msg}")));
        if self.strides_per_recording == 0 {
            return bad("strides_per_recording must be positive");
        }
        if self.stride_len_min < MIN_STRIDE_SAMPLES || self.stride_len_max < self.stride_len_min {
            return bad("stride length bounds must satisfy 20 <= min <= max");
        }
        if self.min_dwell_strides < 3 || self.max_dwell_strides < self.min_dwell_strides {
            return bad("dwell bounds must satisfy 3 <= min <= max");
        }
        let [lo, hi] = self.amplitude_scale_range;
        if !(lo > 0.0 && hi >= lo) {
            return bad("amplitude_scale_range must be positive and ordered");
        }
        if self.offset_deg_range[1] < self.offset_deg_range[0] {
            return bad("offset_deg_range must be ordered");
        }
        let n = &self.noise;
        if !(n.acc >= 0.0 && n.gyr >= 0.0 && n.pitch >= 0.0) {
            return bad("noise sigma must be >= 0");
        }
        if Terrain::ALL.iter().any(|t| !self.terrains.contains_key(t)) {
            return bad("a template is required for every terrain");
        }
        let finite = [self.thigh_radius_m, self.pelvis_radius_m, self.roll_amp_deg, self.yaw_amp_deg];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("non-finite kinematic constant");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Per-sample kinematics of one IMU: pitch angle θ, its time derivatives,
/// and small roll/yaw oscillations.
struct Imu<'a> {
    template: &'a Harmonics,
    phase_shift: f64,
    radius: f64,
    roll_phase: f64,
}

impl Imu<'_> {
    #[allow(clippy::too_many_arguments)]
    fn write(&self, cfg: &GeneratorConfig, seg: Segment, phi: f64, rate: f64, scale: f64, offset: f64, out: &mut [f64; IMU_CHANNELS]) {
        let p = (phi + self.phase_shift).rem_euclid(1.0);
        let [theta, d1, d2, _] = self.template.eval(p, scale, offset);
        // dφ/dt in cycles per second.
        let v = rate * SAMPLE_RATE_HZ;
        let omega = d1 * v;
        let alpha = d2 * v * v;
        let roll_arg = TAU * p + self.roll_phase;
        let roll = cfg.roll_amp_deg.to_radians() * roll_arg.sin();
        let roll_rate = cfg.roll_amp_deg.to_radians() * TAU * v * roll_arg.cos();
        let yaw_rate = cfg.yaw_amp_deg.to_radians() * TAU * v * (roll_arg + 0.8).cos();
        let r = self.radius;
        out[channel_index(seg, Quantity::AccX)] = GRAVITY * theta.sin() + r * alpha;
        out[channel_index(seg, Quantity::AccY)] = GRAVITY * roll.sin() * theta.cos();
        out[channel_index(seg, Quantity::AccZ)] = GRAVITY * theta.cos() - r * omega * omega;
        out[channel_index(seg, Quantity::GyrX)] = roll_rate;
        out[channel_index(seg, Quantity::GyrY)] = omega;
        out[channel_index(seg, Quantity::GyrZ)] = yaw_rate;
        out[channel_index(seg, Quantity::Pitch)] = theta;
    }
}

/// Terrain per stride: a random walk with dwell in `[min, max]` strides,
/// every move going to a different terrain.
fn terrain_walk(cfg: &GeneratorConfig, rng: &mut RngStream) -> Vec<Terrain> {
    let mut out = Vec::with_capacity(cfg.strides_per_recording);
    let mut current = Terrain::ALL[rng.below(Terrain::ALL.len())];
    while out.len() < cfg.strides_per_recording {
        let dwell = rng.int_inclusive(cfg.min_dwell_strides, cfg.max_dwell_strides);
        out.extend(std::iter::repeat_n(current, dwell));
        let others: Vec<Terrain> = Terrain::ALL.into_iter().filter(|&t| t != current).collect();
        current = others[rng.below(others.len())];
    }
    // Truncating the final run would break the dwell rule, so the tail run is
    // merged into the previous one when it is too short.
    out.truncate(cfg.strides_per_recording);
    let last = *out.last().unwrap();
    let tail = out.iter().rev().take_while(|&&t| t == last).count();
    if tail < cfg.min_dwell_strides && tail < out.len() {
        let prev = out[out.len() - tail - 1];
        let n = out.len();
        out[n - tail..].fill(prev);
    }
    out
}

/// Deterministic synthetic recording for `(cfg, subject_id, seed)`.
pub fn synthesize_recording(cfg: &GeneratorConfig, subject_id: u32, seed: u64) -> Result<Recording> {
    cfg.validate()?;
    let base = RngStream::new(seed, subject_id as u64);
    let mut subject_rng = base.fork(1);
    let mut walk_rng = base.fork(2);
    let mut stride_rng = base.fork(3);
    let mut noise_rng = base.fork(4);

    let [slo, shi] = cfg.amplitude_scale_range;
    let scale = subject_rng.uniform_range(slo, shi);
    let [olo, ohi] = cfg.offset_deg_range;
    let offset = subject_rng.uniform_range(olo, ohi);

    let stride_terrain = terrain_walk(cfg, &mut walk_rng);
    let stride_lens: Vec<usize> = (0..cfg.strides_per_recording)
        .map(|_| stride_rng.int_inclusive(cfg.stride_len_min, cfg.stride_len_max))
        .collect();
    let total: usize = stride_lens.iter().sum();

    let mut channels = vec![0f32; IMU_CHANNELS * total];
    let mut terrain = Vec::with_capacity(total);
    let mut stride_starts = Vec::with_capacity(stride_lens.len());
    let sigma: Vec<f64> = Quantity::ALL
        .iter()
        .map(|q| match q {
            Quantity::AccX | Quantity::AccY | Quantity::AccZ => cfg.noise.acc,
            Quantity::GyrX | Quantity::GyrY | Quantity::GyrZ => cfg.noise.gyr,
            Quantity::Pitch => cfg.noise.pitch,
        })
        .collect();

    let mut n = 0;
    let mut sample = [0f64; IMU_CHANNELS];
    for (&len, &ter) in stride_lens.iter().zip(&stride_terrain) {
        stride_starts.push(n);
        let tpl = &cfg.terrains[&ter];
        let imus = [
            (Segment::LeftThigh, Imu { template: &tpl.thigh, phase_shift: 0.0, radius: cfg.thigh_radius_m, roll_phase: 0.3 }),
            (Segment::RightThigh, Imu { template: &tpl.thigh, phase_shift: 0.5, radius: cfg.thigh_radius_m, roll_phase: 0.3 }),
            (Segment::Pelvis, Imu { template: &tpl.pelvis, phase_shift: 0.0, radius: cfg.pelvis_radius_m, roll_phase: 1.1 }),
        ];
        let rate = 1.0 / len as f64;
        for i in 0..len {
            let phi = i as f64 * rate;
            for (seg, imu) in &imus {
                imu.write(cfg, *seg, phi, rate, scale, offset, &mut sample);
            }
            for (c, v) in sample.iter().enumerate() {
                let s = sigma[c % Quantity::ALL.len()];
                let noisy = if s > 0.0 { v + s * noise_rng.normal() } else { *v };
                channels[c * total + n + i] = noisy as f32;
            }
            terrain.push(ter);
        }
        n += len;
    }
    let channels = Tensor::from_vec(&[IMU_CHANNELS, total], channels)?;
    Recording::new(subject_id, channels, terrain, stride_starts)
}
