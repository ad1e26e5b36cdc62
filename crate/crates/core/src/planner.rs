//! Real-time planning loop: gait events, template selection, one-step phase
//! propagation and target angles, plus tracking metrics and latency
//! measurement.

use std::collections::{BTreeMap, VecDeque};
use std::io::BufRead;
use std::path::Path;
use std::time::{Duration, Instant};

use gaitlab_numerics::Tensor;
use serde::{Deserialize, Serialize};

use crate::data::{channel_names, GeneratorConfig, NormStats, PhaseRows, Terrain, IMU_CHANNELS};
use crate::model::{AnyModel, PhaseModel};
use crate::phase::{decode_polar, wrap_phase, PhaseState, PhaseVector, MAX_RATE, MIN_RATE};
use crate::{Error, Result};

pub const TEMPLATE_KNOTS: usize = 101;
pub const REFRACTORY_SAMPLES: usize = 20;
pub const DEADLINE_MS: f64 = 10.0;
pub const MAX_TEMPLATE_DEG: f64 = 90.0;
const HISTORY_LEN: usize = 200;

/// Raw event rule: the phase is exactly zero, or it wrapped from above 97%
/// to below 3%.
pub fn detect_gait_event(prev: f64, curr: f64) -> bool {
    curr == 0.0 || (prev > 0.97 && curr < 0.03)
}

/// One-sample look-ahead `(φ + φ′) mod 1`, with the rate clamped to the
/// decoder's range.
pub fn propagate_phase(s: PhaseState) -> f64 {
    wrap_phase(s.phase + s.rate.clamp(MIN_RATE, MAX_RATE))
}

/// Joint angle against gait phase on a uniform 101-knot grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTemplate {
    pub terrain: Terrain,
    pub knots: Vec<f64>,
}

impl TrajectoryTemplate {
    pub fn new(terrain: Terrain, knots: Vec<f64>) -> Result<Self> {
        let t = Self { terrain, knots };
        t.validate()?;
        Ok(t)
    }

    /// Samples `f` on the knot grid; the last knot is forced equal to the first.
    pub fn from_fn(terrain: Terrain, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut knots: Vec<f64> = (0..TEMPLATE_KNOTS).map(|i| f(i as f64 / (TEMPLATE_KNOTS - 1) as f64)).collect();
        knots[TEMPLATE_KNOTS - 1] = knots[0];
        Self::new(terrain, knots)
    }

    pub fn validate(&self) -> Result<()> {
        let name = self.terrain;
        if self.knots.len() != TEMPLATE_KNOTS {
            return Err(Error::invalid(format!("template {name}: {} knots, expected {TEMPLATE_KNOTS}", self.knots.len())));
        }
        if let Some(v) = self.knots.iter().find(|v| !v.is_finite() || v.abs() > MAX_TEMPLATE_DEG) {
            return Err(Error::invalid(format!("template {name}: knot value {v} outside ±{MAX_TEMPLATE_DEG}°")));
        }
        if self.knots[0] != self.knots[TEMPLATE_KNOTS - 1] {
            return Err(Error::invalid(format!("template {name}: first and last knots differ")));
        }
        Ok(())
    }

    pub fn angle(&self, phi: f64) -> f64 {
        target_angle(self, phi)
    }
}

/// Linear interpolation between the knots around `phi` (taken mod 1).
pub fn target_angle(tmpl: &TrajectoryTemplate, phi: f64) -> f64 {
    let segments = (TEMPLATE_KNOTS - 1) as f64;
    let x = wrap_phase(phi) * segments;
    let i = (x.floor() as usize).min(TEMPLATE_KNOTS - 2);
    let frac = x - i as f64;
    if frac == 0.0 {
        return tmpl.knots[i];
    }
    tmpl.knots[i] + frac * (tmpl.knots[i + 1] - tmpl.knots[i])
}

/// Supplies the trajectory to follow after a gait event on a given terrain.
pub trait TemplateProvider {
    fn template_for(&mut self, terrain: Terrain) -> Result<TrajectoryTemplate>;
}

/// Fixed terrain → template table. Serialised as `{terrain: [101 floats]}`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TemplateSet {
    pub templates: BTreeMap<Terrain, TrajectoryTemplate>,
}

impl TemplateSet {
    /// Thigh templates taken from the generator's nominal curves.
    pub fn from_generator(cfg: &GeneratorConfig) -> Result<Self> {
        let mut templates = BTreeMap::new();
        for (t, tpl) in &cfg.terrains {
            templates.insert(*t, TrajectoryTemplate::from_fn(*t, |phi| tpl.thigh.angle_deg(phi))?);
        }
        Ok(Self { templates })
    }

    pub fn to_json(&self) -> Result<String> {
        let map: BTreeMap<String, &Vec<f64>> = self.templates.iter().map(|(t, v)| (t.to_string(), &v.knots)).collect();
        Ok(serde_json::to_string_pretty(&map)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, Vec<f64>> = serde_json::from_str(text)?;
        let mut templates = BTreeMap::new();
        for (k, knots) in map {
            let t: Terrain = k.parse()?;
            templates.insert(t, TrajectoryTemplate::new(t, knots)?);
        }
        Ok(Self { templates })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

impl TemplateProvider for TemplateSet {
    fn template_for(&mut self, terrain: Terrain) -> Result<TrajectoryTemplate> {
        self.templates
            .get(&terrain)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no template for terrain {terrain}")))
    }
}

/// Result of one planner step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanOutput {
    pub sample: usize,
    pub state: PhaseState,
    pub event: bool,
    /// Phase the target refers to (the next sample).
    pub next_phase: f64,
    /// `None` until two gait events have been seen.
    pub target_deg: Option<f64>,
}

impl PlanOutput {
    pub fn require_target(&self) -> Result<f64> {
        self.target_deg
            .ok_or_else(|| Error::invalid(format!("planner not initialised at sample {}: fewer than two gait events", self.sample)))
    }
}

/// Per-stream planner state.
pub struct PlannerState<P: TemplateProvider> {
    provider: P,
    state: Option<PhaseState>,
    template: Option<TrajectoryTemplate>,
    history: VecDeque<f64>,
    events: Vec<usize>,
    swaps: usize,
    sample: usize,
    pub deadline_ms: f64,
}

impl<P: TemplateProvider> PlannerState<P> {
    pub fn new(provider: P) -> Self {
        Self {
            provider,
            state: None,
            template: None,
            history: VecDeque::with_capacity(HISTORY_LEN),
            events: Vec::new(),
            swaps: 0,
            sample: 0,
            deadline_ms: DEADLINE_MS,
        }
    }

    pub fn events(&self) -> &[usize] {
        &self.events
    }

    pub fn template(&self) -> Option<&TrajectoryTemplate> {
        self.template.as_ref()
    }

    /// Number of times the active template changed.
    pub fn template_swaps(&self) -> usize {
        self.swaps
    }

    pub fn is_active(&self) -> bool {
        self.events.len() >= 2
    }

    pub fn history(&self) -> impl Iterator<Item = f64> + '_ {
        self.history.iter().copied()
    }

    /// Decode, event check, template update on events, propagation and target.
    pub fn step(&mut self, g: PhaseVector, terrain: Terrain) -> Result<PlanOutput> {
        let state = decode_polar(g)?;
        self.step_state(state, terrain)
    }

    pub fn step_state(&mut self, state: PhaseState, terrain: Terrain) -> Result<PlanOutput> {
        let n = self.sample;
        let raw = match self.state {
            Some(prev) => detect_gait_event(prev.phase, state.phase),
            None => state.phase == 0.0,
        };
        let event = raw && self.events.last().is_none_or(|&last| n - last >= REFRACTORY_SAMPLES);
        if event {
            self.events.push(n);
            if self.template.as_ref().is_none_or(|t| t.terrain != terrain) {
                let next = self.provider.template_for(terrain)?;
                if self.template.is_some() {
                    self.swaps += 1;
                }
                self.template = Some(next);
            }
        }
        self.state = Some(state);
        if self.history.len() == HISTORY_LEN {
            self.history.pop_front();
        }
        self.history.push_back(state.phase);
        self.sample += 1;

        let next_phase = propagate_phase(state);
        let target_deg = match &self.template {
            Some(t) if self.is_active() => Some(target_angle(t, next_phase)),
            _ => None,
        };
        Ok(PlanOutput {
            sample: n,
            state,
            event,
            next_phase,
            target_deg,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackMetrics {
    pub rmse_deg: f64,
    pub pcc: f64,
}

/// RMSE and Pearson correlation between planned and measured angles.
pub fn track_metrics(planned: &[f64], measured: &[f64]) -> Result<TrackMetrics> {
    if planned.len() != measured.len() {
        return Err(Error::invalid(format!("{} planned vs {} measured angles", planned.len(), measured.len())));
    }
    let n = planned.len();
    if n < 2 {
        return Err(Error::invalid("tracking metrics need at least 2 samples"));
    }
    let nf = n as f64;
    let rmse_deg = (planned.iter().zip(measured).map(|(p, m)| (p - m).powi(2)).sum::<f64>() / nf).sqrt();
    let (mp, mm) = (planned.iter().sum::<f64>() / nf, measured.iter().sum::<f64>() / nf);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, m) in planned.iter().zip(measured) {
        let (dp, dm) = (p - mp, m - mm);
        sxy += dp * dm;
        sxx += dp * dp;
        syy += dm * dm;
    }
    if syy == 0.0 {
        return Err(Error::invalid("measured angles are constant; correlation is undefined"));
    }
    if sxx == 0.0 {
        return Err(Error::invalid("planned angles are constant; correlation is undefined"));
    }
    Ok(TrackMetrics {
        rmse_deg,
        pcc: sxy / (sxx * syy).sqrt(),
    })
}

/// Per-sample output of a [`StreamEstimator`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreamOutput {
    pub plan: PlanOutput,
    pub latency_ms: f64,
}

/// Sample-by-sample inference: normalise, keep the look-back window, run the
/// model, then the planner.
pub struct StreamEstimator<P: TemplateProvider> {
    model: AnyModel<f32>,
    norm: NormStats,
    rows: PhaseRows,
    lookback: usize,
    buffer: VecDeque<[f32; IMU_CHANNELS]>,
    input: Tensor<f32>,
    pub planner: PlannerState<P>,
}

impl<P: TemplateProvider> StreamEstimator<P> {
    pub fn new(model: AnyModel<f32>, norm: NormStats, rows: PhaseRows, provider: P) -> Result<Self> {
        let cfg = model.config();
        if cfg.channels != rows.channels() {
            return Err(Error::invalid(format!(
                "model expects {} channels but the stream supplies {}",
                cfg.channels,
                rows.channels()
            )));
        }
        norm.validate()?;
        let lookback = cfg.lookback;
        let input = Tensor::zeros(&[1, cfg.channels, lookback]);
        Ok(Self {
            model,
            norm,
            rows,
            lookback,
            buffer: VecDeque::with_capacity(lookback),
            input,
            planner: PlannerState::new(provider),
        })
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    /// Feeds one raw IMU sample. Returns `None` until the window is full.
    pub fn push(&mut self, raw: &[f32], terrain: Terrain) -> Result<Option<StreamOutput>> {
        let start = Instant::now();
        if raw.len() != IMU_CHANNELS {
            return Err(Error::invalid(format!("sample has {} channels, expected {IMU_CHANNELS}", raw.len())));
        }
        let mut s = [0f32; IMU_CHANNELS];
        s.copy_from_slice(raw);
        self.norm.apply_sample(&mut s);
        if self.buffer.len() == self.lookback {
            self.buffer.pop_front();
        }
        self.buffer.push_back(s);
        if self.buffer.len() < self.lookback {
            return Ok(None);
        }
        let l = self.lookback;
        let data = self.input.data_mut();
        for (k, sample) in self.buffer.iter().enumerate() {
            for (c, v) in sample.iter().enumerate() {
                data[c * l + k] = *v;
            }
        }
        // Phase rows, when present, stay zero.
        debug_assert!(self.rows != PhaseRows::Truth);
        let y = self.model.predict(&self.input)?;
        let g = y.data();
        let plan = self
            .planner
            .step(PhaseVector([g[0] as f64, g[1] as f64, g[2] as f64]), terrain)?;
        Ok(Some(StreamOutput {
            plan,
            latency_ms: start.elapsed().as_secs_f64() * 1e3,
        }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub samples: usize,
    pub warmup: usize,
    pub paced: bool,
    pub median_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    pub deadline_ms: f64,
    pub deadline_misses: usize,
}

/// Nearest-rank quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub fn latency_report(latencies_ms: &[f64], warmup: usize, paced: bool) -> LatencyReport {
    let mut sorted = latencies_ms.to_vec();
    sorted.sort_by(f64::total_cmp);
    LatencyReport {
        samples: sorted.len(),
        warmup,
        paced,
        median_ms: quantile(&sorted, 0.5),
        p99_ms: quantile(&sorted, 0.99),
        max_ms: *sorted.last().unwrap_or(&0.0),
        deadline_ms: DEADLINE_MS,
        deadline_misses: sorted.iter().filter(|&&v| v > DEADLINE_MS).count(),
    }
}

/// Times `warmup + samples` end-to-end steps over `stream` (cycled as
/// needed). With `paced`, samples are released on a 100 Hz clock.
pub fn latency_bench<P: TemplateProvider>(
    est: &mut StreamEstimator<P>,
    stream: &[([f32; IMU_CHANNELS], Terrain)],
    warmup: usize,
    samples: usize,
    paced: bool,
) -> Result<LatencyReport> {
    if stream.is_empty() {
        return Err(Error::invalid("empty benchmark stream"));
    }
    let period = Duration::from_millis(10);
    let mut lat = Vec::with_capacity(samples);
    let mut timed = 0usize;
    let mut i = 0usize;
    let mut next_tick = Instant::now();
    while timed < warmup + samples {
        if paced {
            let now = Instant::now();
            if next_tick > now {
                std::thread::sleep(next_tick - now);
            }
            next_tick += period;
        }
        let (raw, terrain) = &stream[i % stream.len()];
        i += 1;
        if let Some(out) = est.push(raw, *terrain)? {
            if timed >= warmup {
                lat.push(out.latency_ms);
            }
            timed += 1;
        }
    }
    Ok(latency_report(&lat, warmup, paced))
}

/// Incremental reader for recording-style CSV rows (`terrain` plus the 21
/// channel columns; `t` optional).
pub struct CsvStream<R: BufRead> {
    reader: csv::Reader<R>,
    terrain_col: usize,
    t_col: Option<usize>,
    chan_cols: Vec<usize>,
    record: csv::StringRecord,
    line: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreamRow {
    pub t: Option<f64>,
    pub terrain: Terrain,
    pub channels: [f32; IMU_CHANNELS],
}

impl<R: BufRead> CsvStream<R> {
    pub fn new(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader
            .headers()
            .map_err(|e| Error::invalid(format!("stream header: {e}")))?
            .clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let terrain_col = col("terrain").ok_or_else(|| Error::invalid("stream is missing column \"terrain\""))?;
        let chan_cols = channel_names()
            .iter()
            .map(|c| col(c).ok_or_else(|| Error::invalid(format!("stream is missing column {c:?}"))))
            .collect::<Result<_>>()?;
        Ok(Self {
            reader,
            terrain_col,
            t_col: col("t"),
            chan_cols,
            record: csv::StringRecord::new(),
            line: 1,
        })
    }

    pub fn next_row(&mut self) -> Result<Option<StreamRow>> {
        self.line += 1;
        let line = self.line;
        let more = self
            .reader
            .read_record(&mut self.record)
            .map_err(|e| Error::invalid(format!("stream line {line}: {e}")))?;
        if !more {
            return Ok(None);
        }
        let field = |c: usize| self.record.get(c).map(str::trim).unwrap_or("");
        let terrain = field(self.terrain_col)
            .parse::<Terrain>()
            .map_err(|e| Error::invalid(format!("stream line {line}: {e}")))?;
        let mut channels = [0f32; IMU_CHANNELS];
        for (v, &c) in channels.iter_mut().zip(&self.chan_cols) {
            *v = field(c)
                .parse()
                .map_err(|_| Error::invalid(format!("stream line {line}: bad number {:?}", field(c))))?;
        }
        let t = match self.t_col {
            Some(c) => Some(
                field(c)
                    .parse()
                    .map_err(|_| Error::invalid(format!("stream line {line}: bad time {:?}", field(c))))?,
            ),
            None => None,
        };
        Ok(Some(StreamRow { t, terrain, channels }))
    }
}
