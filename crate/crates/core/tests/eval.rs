use gaitlab::data::*;
use gaitlab::eval::*;
use gaitlab::model::*;
use gaitlab::phase::{circular_error, PhaseState};
use gaitlab_numerics::RngStream;
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

fn recording(subject: u32, strides: usize, seed: u64) -> Recording {
    let cfg = GeneratorConfig { strides_per_recording: strides, ..GeneratorConfig::default() };
    synthesize_recording(&cfg, subject, seed).unwrap()
}

fn noisy(truth: &[PhaseState], rng: &mut RngStream) -> Vec<PhaseState> {
    truth
        .iter()
        .map(|t| PhaseState {
            phase: (t.phase + 0.05 * rng.normal()).rem_euclid(1.0),
            rate: t.rate + 0.001 * rng.normal(),
        })
        .collect()
}

#[test]
fn perfect_predictor_scores_zero() {
    let rec = recording(0, 20, 1);
    let lb = 50;
    let mut r = RunResult::default();
    r.add(&rec, lb, &rec.phase_truth[lb - 1..]).unwrap();
    let m = r.pooled(Scope::All);
    assert_eq!((m.phase_rmse, m.phase_rmse_naive, m.rate_mae), (0.0, 0.0, 0.0));
    assert_eq!(m.n, rec.len() - lb + 1);
}

#[test]
fn constant_predictor_matches_uniform_closed_form() {
    // Dense-grid brute force of the circular RMS between a uniform phase and
    // a constant guess.
    let n = 200_000;
    let sq: f64 = (0..n)
        .map(|i| {
            let phi = (i as f64 + 0.5) / n as f64;
            let mut d = (phi - 0.3).abs();
            if d > 0.5 {
                d = 1.0 - d;
            }
            d * d
        })
        .sum();
    let brute = (sq / n as f64).sqrt() * 100.0;
    assert!((brute - 100.0 / 12f64.sqrt()).abs() < 1e-6, "{brute}");

    let rec = recording(1, 60, 2);
    let lb = 1;
    let guess: Vec<_> = rec.phase_truth.iter().map(|t| PhaseState { phase: 0.3, rate: t.rate }).collect();
    let mut r = RunResult::default();
    r.add(&rec, lb, &guess).unwrap();
    let m = r.pooled(Scope::All);
    assert!((m.phase_rmse - brute).abs() < 0.5, "{} vs {brute}", m.phase_rmse);
    assert_eq!(m.rate_mae, 0.0);
}

#[test]
fn aggregation_matches_scalar_loop() {
    let lb = 40;
    let recs: Vec<_> = (0..3).map(|s| recording(s, 25, 7)).collect();
    let mut rng = RngStream::new(5, 0);
    let mut r = RunResult::default();
    let mut all = Vec::new();
    for rec in &recs {
        let p = noisy(&rec.phase_truth[lb - 1..], &mut rng);
        r.add(rec, lb, &p).unwrap();
        let tags = segment_stable_vs_transition(rec, lb);
        for (i, pi) in p.iter().enumerate() {
            all.push((rec.subject_id, tags[i], *pi, rec.phase_truth[lb - 1 + i]));
        }
    }
    assert_eq!(r.total_samples(), all.len());
    let group_total: usize = r.rows().iter().map(|g| g.metrics.n).sum();
    assert_eq!(group_total, all.len());

    for scope in [Scope::All, Scope::Stable, Scope::Transition] {
        let keep = |t: TerrainTag| match scope {
            Scope::All => true,
            Scope::Stable => !t.is_transition(),
            Scope::Transition => t.is_transition(),
        };
        let mut per_subject = Vec::new();
        for s in 0..3u32 {
            let (mut n, mut sq, mut sqn, mut ab) = (0usize, 0.0f64, 0.0f64, 0.0f64);
            for (id, tag, p, t) in &all {
                if *id != s || !keep(*tag) {
                    continue;
                }
                let mut d = (p.phase - t.phase).abs();
                if d > 0.5 {
                    d = 1.0 - d;
                }
                n += 1;
                sq += d * d;
                sqn += (p.phase - t.phase) * (p.phase - t.phase);
                ab += (p.rate - t.rate).abs();
            }
            if n > 0 {
                per_subject.push((s, (sq / n as f64).sqrt() * 100.0, (sqn / n as f64).sqrt() * 100.0, ab / n as f64 * 100.0));
            }
        }
        let got = r.per_subject(scope);
        assert_eq!(got.len(), per_subject.len());
        for ((s, m), (es, rm, rn, ma)) in got.iter().zip(&per_subject) {
            assert_eq!(s, es);
            assert!((m.phase_rmse - rm).abs() < 1e-12);
            assert!((m.phase_rmse_naive - rn).abs() < 1e-12);
            assert!((m.rate_mae - ma).abs() < 1e-12);
        }
        let mean = per_subject.iter().map(|p| p.1).sum::<f64>() / per_subject.len() as f64;
        assert!((r.subject_mean(scope).phase_rmse - mean).abs() < 1e-12);
    }
    // Transitions exist in these recordings, so both scopes are populated.
    assert!(r.pooled(Scope::Transition).n > 0);
    assert_eq!(r.pooled(Scope::Stable).n + r.pooled(Scope::Transition).n, all.len());
}

#[test]
fn merge_is_order_independent() {
    let lb = 30;
    let mut rng = RngStream::new(9, 0);
    let parts: Vec<RunResult> = (0..3)
        .map(|s| {
            let rec = recording(s, 15, 3);
            let mut r = RunResult::default();
            r.add(&rec, lb, &noisy(&rec.phase_truth[lb - 1..], &mut rng)).unwrap();
            r
        })
        .collect();
    let mut a = RunResult::default();
    let mut b = RunResult::default();
    for p in &parts {
        a.merge(p);
    }
    for p in parts.iter().rev() {
        b.merge(p);
    }
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.subjects(), vec![0, 1, 2]);
}

#[test]
fn wrong_prediction_count_is_rejected() {
    let rec = recording(0, 10, 1);
    let mut r = RunResult::default();
    assert!(r.add(&rec, 20, &rec.phase_truth[..5]).is_err());
}

fn small_model(lookback: usize) -> AnyModel<f32> {
    let cfg = TctstConfig {
        channels: 24,
        lookback,
        emb_dim: 8,
        n_head: 2,
        n_layers: 1,
        mlp_ratio: 2.0,
        latent_dim: 8,
        dropout: 0.1,
        qkv_bias: true,
        embedding: EmbeddingKind::Tcn,
        pos_enc: PosEncoding::Scalar,
    };
    AnyModel::new(Arch::Tctst, cfg, 3).unwrap()
}

#[test]
fn evaluation_is_causal_and_covers_every_sample() {
    let lb = 20;
    let model = small_model(lb);
    let rec = recording(0, 4, 1);
    let preds = predict_recording(&model, &rec, PhaseRows::Zeros, 64).unwrap();
    assert_eq!(preds.len(), rec.len() - lb + 1);

    // Corrupt everything after sample `cut`; predictions up to it must hold.
    let cut = 150;
    let mut late = rec.clone();
    let len = late.len();
    for c in 0..IMU_CHANNELS {
        for n in cut + 1..len {
            late.channels.data_mut()[c * len + n] += 10.0;
        }
    }
    let p2 = predict_recording(&model, &late, PhaseRows::Zeros, 7).unwrap();
    for n in lb - 1..=cut {
        assert_eq!(preds[n + 1 - lb], p2[n + 1 - lb], "sample {n}");
    }
    assert_ne!(preds[cut + 1 - lb + 1], p2[cut + 1 - lb + 1]);

    let r = evaluate(&model, std::slice::from_ref(&rec), PhaseRows::Zeros).unwrap();
    assert_eq!(r.total_samples(), preds.len());

    let short = recording(0, 1, 1);
    assert!(evaluate(&small_model(short.len() + 1), &[short], PhaseRows::Zeros).is_err());
}

#[test]
fn t_test_hand_example() {
    let r = paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
    assert!((r.t - 3.4641).abs() < 1e-4);
    assert_eq!(r.df, 2);
    assert!((r.mean_diff - 2.0).abs() < 1e-15);
    assert!((r.p - 0.0742).abs() < 1e-4, "{}", r.p);
    assert_eq!(r.stars, "ns");
    assert!(paired_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).is_err());
    assert!(paired_t_test(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    assert!(paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 1.0]).is_err());
}

#[test]
fn p_value_df2_closed_form() {
    // For two degrees of freedom the two-sided tail is 1 − |t|/√(t² + 2).
    for t in [0.1, 0.5, 1.0, 3.4641, 7.0, 20.0] {
        let exact = 1.0 - t / (t * t + 2.0f64).sqrt();
        assert!((t_two_sided_p(t, 2) - exact).abs() < 1e-8, "t={t}");
    }
}

/// Composite 10-point Gauss–Legendre over unit panels.
fn gauss_legendre_p(t: f64, df: usize) -> f64 {
    const X: [f64; 5] = [0.1488743389816312, 0.4333953941292472, 0.6794095682990244, 0.8650633666889845, 0.9739065285171717];
    const W: [f64; 5] = [0.2955242247147529, 0.2692667193099963, 0.2190863625159820, 0.1494513491505806, 0.0666713443086881];
    let nu = df as f64;
    let ln_c = statrs::function::gamma::ln_gamma((nu + 1.0) / 2.0) - statrs::function::gamma::ln_gamma(nu / 2.0) - 0.5 * (nu * std::f64::consts::PI).ln();
    let dens = |x: f64| (ln_c - (nu + 1.0) / 2.0 * (1.0 + x * x / nu).ln()).exp();
    let panels = (t.abs() * 8.0).ceil().max(1.0) as usize;
    let h = t.abs() / panels as f64;
    let mut area = 0.0;
    for k in 0..panels {
        let (a, b) = (k as f64 * h, (k + 1) as f64 * h);
        let (m, r) = ((a + b) / 2.0, (b - a) / 2.0);
        for (x, w) in X.iter().zip(W) {
            area += w * r * (dens(m + r * x) + dens(m - r * x));
        }
    }
    1.0 - 2.0 * area
}

#[test]
fn p_values_match_independent_quadrature() {
    for df in [2usize, 3, 4, 9, 29] {
        for t in [0.05, 0.7, 1.5, 2.2, 3.4641, 5.0, 12.0] {
            let p = t_two_sided_p(t, df);
            let gl = gauss_legendre_p(t, df);
            assert!((p - gl).abs() < 1e-6, "df={df} t={t}: {p} vs {gl}");
            let cdf = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, df as f64).unwrap().cdf(t));
            assert!((p - cdf).abs() < 1e-6, "df={df} t={t}: {p} vs {cdf}");
            assert!(p > 0.0 && p <= 1.0);
        }
    }
}

#[test]
fn star_thresholds() {
    assert_eq!(stars(0.0009), "***");
    assert_eq!(stars(0.001), "**");
    assert_eq!(stars(0.0099), "**");
    assert_eq!(stars(0.01), "*");
    assert_eq!(stars(0.0499), "*");
    assert_eq!(stars(0.05), "ns");
    assert_eq!(stars(0.9), "ns");
}

proptest! {
    #[test]
    fn t_is_shift_invariant_and_antisymmetric(
        a in prop::collection::vec(-10.0f64..10.0, 3..12),
        noise in prop::collection::vec(-3.0f64..3.0, 12),
        shift in -50.0f64..50.0,
    ) {
        let b: Vec<f64> = a.iter().zip(&noise).map(|(x, e)| x + e).collect();
        let Ok(r) = paired_t_test(&a, &b) else { return Ok(()); };
        let a2: Vec<f64> = a.iter().map(|x| x + shift).collect();
        let b2: Vec<f64> = b.iter().map(|x| x + shift).collect();
        let r2 = paired_t_test(&a2, &b2).unwrap();
        prop_assert!((r.t - r2.t).abs() < 1e-6 * r.t.abs().max(1.0));
        let swapped = paired_t_test(&b, &a).unwrap();
        prop_assert!((r.t + swapped.t).abs() < 1e-12 * r.t.abs().max(1.0));
        prop_assert!((r.p - swapped.p).abs() < 1e-12);
    }

    #[test]
    fn circular_group_error_bounded(p in 0.0f64..1.0, q in 0.0f64..1.0) {
        let mut a = Accum::default();
        a.push(PhaseState { phase: p, rate: 0.01 }, PhaseState { phase: q, rate: 0.01 });
        prop_assert!(a.metrics().phase_rmse <= 50.0 + 1e-12);
        prop_assert!((a.metrics().phase_rmse - circular_error(p, q).abs() * 100.0).abs() < 1e-12);
    }
}
