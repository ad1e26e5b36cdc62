//! Causal per-sample evaluation, grouped metrics and paired t-tests.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::{segment_stable_vs_transition, PhaseRows, Recording, TerrainTag, WindowSet};
use crate::model::{AnyModel, PhaseModel};
use crate::phase::{circular_error, decode_polar, PhaseState, PhaseVector};
use crate::{Error, Result};

/// Predicted states for every sample `n ≥ L_B − 1` of `rec` (already
/// normalised), each from the window ending at `n`.
pub fn predict_recording(model: &AnyModel<f32>, rec: &Recording, rows: PhaseRows, batch: usize) -> Result<Vec<PhaseState>> {
    let lookback = model.config().lookback;
    if rec.len() < lookback {
        return Err(Error::invalid(format!("recording of {} samples is shorter than the look-back {lookback}", rec.len())));
    }
    let set = WindowSet::new(vec![rec.clone()], lookback, 1, rows)?;
    let ids: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for chunk in ids.chunks(batch.max(1)) {
        let (x, _) = set.batch::<f32>(chunk)?;
        let y = model.predict(&x)?;
        for g in y.data().chunks_exact(3) {
            out.push(decode_polar(PhaseVector([g[0] as f64, g[1] as f64, g[2] as f64]))?);
        }
    }
    Ok(out)
}

/// Running sums for one group of samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accum {
    pub n: usize,
    pub sq_circular: f64,
    pub sq_naive: f64,
    pub abs_rate: f64,
}

impl Accum {
    pub fn push(&mut self, pred: PhaseState, truth: PhaseState) {
        let e = circular_error(pred.phase, truth.phase);
        self.n += 1;
        self.sq_circular += e * e;
        self.sq_naive += (pred.phase - truth.phase).powi(2);
        self.abs_rate += (pred.rate - truth.rate).abs();
    }

    pub fn merge(&mut self, o: &Accum) {
        self.n += o.n;
        self.sq_circular += o.sq_circular;
        self.sq_naive += o.sq_naive;
        self.abs_rate += o.abs_rate;
    }

    pub fn metrics(&self) -> Metrics {
        let n = self.n.max(1) as f64;
        Metrics {
            n: self.n,
            phase_rmse: (self.sq_circular / n).sqrt() * 100.0,
            phase_rmse_naive: (self.sq_naive / n).sqrt() * 100.0,
            rate_mae: self.abs_rate / n * 100.0,
        }
    }
}

/// Phase RMSE (wrapped and naive) and rate MAE, in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub phase_rmse: f64,
    pub phase_rmse_naive: f64,
    pub rate_mae: f64,
}

/// Which samples an aggregate covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    All,
    Stable,
    Transition,
}

impl Scope {
    fn admits(self, tag: TerrainTag) -> bool {
        match self {
            Scope::All => true,
            Scope::Stable => !tag.is_transition(),
            Scope::Transition => tag.is_transition(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub subject: u32,
    pub tag: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Metrics grouped by subject and terrain tag.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunResult {
    pub groups: BTreeMap<(u32, TerrainTag), Accum>,
}

impl RunResult {
    /// Adds one recording's predictions; `preds[i]` belongs to sample
    /// `lookback − 1 + i`.
    pub fn add(&mut self, rec: &Recording, lookback: usize, preds: &[PhaseState]) -> Result<()> {
        let tags = segment_stable_vs_transition(rec, lookback);
        if preds.len() != tags.len() {
            return Err(Error::invalid(format!("{} predictions for {} evaluable samples", preds.len(), tags.len())));
        }
        for (i, (p, tag)) in preds.iter().zip(tags).enumerate() {
            let truth = rec.phase_truth[lookback - 1 + i];
            self.groups.entry((rec.subject_id, tag)).or_default().push(*p, truth);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &RunResult) {
        for (k, a) in &other.groups {
            self.groups.entry(*k).or_default().merge(a);
        }
    }

    pub fn subjects(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.groups.keys().map(|k| k.0).collect();
        s.dedup();
        s
    }

    pub fn total_samples(&self) -> usize {
        self.groups.values().map(|a| a.n).sum()
    }

    fn accum(&self, subject: Option<u32>, scope: Scope) -> Accum {
        let mut a = Accum::default();
        for ((s, tag), g) in &self.groups {
            if subject.is_none_or(|x| x == *s) && scope.admits(*tag) {
                a.merge(g);
            }
        }
        a
    }

    /// Per-subject metrics (subjects without samples in `scope` omitted).
    pub fn per_subject(&self, scope: Scope) -> Vec<(u32, Metrics)> {
        self.subjects()
            .into_iter()
            .map(|s| (s, self.accum(Some(s), scope)))
            .filter(|(_, a)| a.n > 0)
            .map(|(s, a)| (s, a.metrics()))
            .collect()
    }

    /// All samples pooled.
    pub fn pooled(&self, scope: Scope) -> Metrics {
        self.accum(None, scope).metrics()
    }

    /// Mean and sample standard deviation over subjects of
    /// `(phase_rmse, rate_mae)`.
    pub fn subject_mean(&self, scope: Scope) -> SubjectSummary {
        let per = self.per_subject(scope);
        let stat = |f: &dyn Fn(&Metrics) -> f64| {
            let v: Vec<f64> = per.iter().map(|(_, m)| f(m)).collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let sd = if v.len() > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            (mean, sd)
        };
        let (phase_rmse, phase_rmse_sd) = stat(&|m| m.phase_rmse);
        let (rate_mae, rate_mae_sd) = stat(&|m| m.rate_mae);
        SubjectSummary {
            subjects: per.len(),
            phase_rmse,
            phase_rmse_sd,
            rate_mae,
            rate_mae_sd,
        }
    }

    pub fn rows(&self) -> Vec<GroupRow> {
        self.groups
            .iter()
            .map(|((s, t), a)| GroupRow {
                subject: *s,
                tag: t.to_string(),
                metrics: a.metrics(),
            })
            .collect()
    }

    /// JSON summary with both aggregations for every scope.
    pub fn summary_json(&self) -> serde_json::Value {
        let scope = |s: Scope| {
            serde_json::json!({
                "per_subject_mean": self.subject_mean(s),
                "pooled": self.pooled(s),
                "per_subject": self.per_subject(s).into_iter().map(|(id, m)| serde_json::json!({"subject": id, "metrics": m})).collect::<Vec<_>>(),
            })
        };
        serde_json::json!({
            "all": scope(Scope::All),
            "stable": scope(Scope::Stable),
            "transition": scope(Scope::Transition),
            "groups": self.rows(),
        })
    }

    /// CSV of every (subject, tag) group.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("subject,tag,n,phase_rmse_pct,phase_rmse_naive_pct,rate_mae_pct\n");
        for r in self.rows() {
            let m = r.metrics;
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.subject, r.tag, m.n, m.phase_rmse, m.phase_rmse_naive, m.rate_mae
            ));
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub subjects: usize,
    pub phase_rmse: f64,
    pub phase_rmse_sd: f64,
    pub rate_mae: f64,
    pub rate_mae_sd: f64,
}

/// Evaluates `model` causally on normalised test recordings.
pub fn evaluate(model: &AnyModel<f32>, test: &[Recording], rows: PhaseRows) -> Result<RunResult> {
    let lookback = model.config().lookback;
    let mut result = RunResult::default();
    for rec in test {
        let preds = predict_recording(model, rec, rows, 256)?;
        result.add(rec, lookback, &preds)?;
    }
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestReport {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub stars: String,
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        "ns"
    }
}

/// Student t density with `df` degrees of freedom.
pub fn t_density(x: f64, df: f64) -> f64 {
    let ln_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * PI).ln();
    (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Two-sided p-value of a t statistic: `1 − 2∫₀^|t| f`.
pub fn t_two_sided_p(t: f64, df: usize) -> f64 {
    let nu = df as f64;
    let x = t.abs();
    // Split the range so that each panel sees a smooth, well-resolved piece.
    let mut area = 0.0;
    let mut a = 0.0;
    while a < x {
        let b = (a + 1.0).min(x);
        area += integrate(&|s| t_density(s, nu), a, b, 1e-10);
        a = b;
    }
    (1.0 - 2.0 * area).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Paired t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestReport> {
    if a.len() != b.len() {
        return Err(Error::invalid("paired samples must have equal length"));
    }
    let n = a.len();
    if n < 3 {
        return Err(Error::invalid("paired t-test needs at least 3 pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::invalid("differences have zero variance"));
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let p = t_two_sided_p(t, n - 1);
    Ok(TTestReport {
        n,
        mean_diff: mean,
        t,
        df: n - 1,
        p,
        stars: stars(p).to_string(),
    })
}
