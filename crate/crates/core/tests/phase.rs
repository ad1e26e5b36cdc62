use std::f64::consts::PI;

use gaitlab::phase::*;
use proptest::prelude::*;

fn state() -> impl Strategy<Value = PhaseState> {
    (0.0f64..1.0, MIN_RATE..=MAX_RATE).prop_map(|(phase, rate)| PhaseState { phase, rate })
}

#[test]
fn roundtrip_thousand_states() {
    let mut rng = gaitlab_numerics::RngStream::new(7, 0);
    for _ in 0..1000 {
        let s = PhaseState {
            phase: rng.uniform(),
            rate: rng.uniform_range(MIN_RATE, MAX_RATE),
        };
        let d = decode_polar(encode_polar(s)).unwrap();
        assert!(circular_error(d.phase, s.phase) < 1e-9, "{s:?} -> {d:?}");
        assert!((d.rate - s.rate).abs() < 1e-12);
    }
}

#[test]
fn rmse_matches_scalar_loop() {
    let mut rng = gaitlab_numerics::RngStream::new(11, 0);
    let draw = |rng: &mut gaitlab_numerics::RngStream| PhaseState {
        phase: rng.uniform(),
        rate: rng.uniform_range(0.005, 0.02),
    };
    let pred: Vec<_> = (0..1000).map(|_| draw(&mut rng)).collect();
    let truth: Vec<_> = (0..1000).map(|_| draw(&mut rng)).collect();

    // Angle-based wrapped distance, computed independently of circular_error.
    let mut ss = 0.0;
    let mut abs = 0.0;
    for (p, t) in pred.iter().zip(&truth) {
        let dtheta = (2.0 * PI * (p.phase - t.phase)).sin().atan2((2.0 * PI * (p.phase - t.phase)).cos());
        let e = dtheta.abs() / (2.0 * PI);
        ss += e * e;
        abs += (p.rate - t.rate).abs();
    }
    let rmse = (ss / 1000.0).sqrt() * 100.0;
    let mae = abs / 1000.0 * 100.0;
    assert!((phase_rmse(&pred, &truth).unwrap() - rmse).abs() < 1e-12);
    assert!((rate_mae(&pred, &truth).unwrap() - mae).abs() < 1e-12);
}

#[test]
fn metric_errors() {
    assert!(phase_rmse(&[], &[]).is_err());
    assert!(rate_mae(&[], &[]).is_err());
    let s = PhaseState { phase: 0.1, rate: 0.01 };
    assert!(phase_rmse(&[s], &[s, s]).is_err());
    assert!(decode_polar(PhaseVector([0.0, 0.0, 0.01])).is_err());
}

proptest! {
    #[test]
    fn encoded_vectors_are_unit(s in state()) {
        let g = encode_polar(s).0;
        prop_assert!((g[0] * g[0] + g[1] * g[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decode_inverts_encode(s in state(), scale in 0.01f64..100.0) {
        let mut g = encode_polar(s);
        g.0[0] *= scale;
        g.0[1] *= scale;
        let d = decode_polar(g).unwrap();
        prop_assert!(circular_error(d.phase, s.phase) < 1e-9);
        prop_assert!((0.0..1.0).contains(&d.phase));
    }

    #[test]
    fn circular_error_is_a_metric(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
        let ab = circular_error(a, b);
        prop_assert!((0.0..=0.5).contains(&ab));
        prop_assert_eq!(ab, circular_error(b, a));
        prop_assert!(ab <= circular_error(a, c) + circular_error(c, b) + 1e-12);
    }

    #[test]
    fn rmse_rotation_invariant(
        pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..50),
        shift in 0.0f64..1.0,
    ) {
        let mk = |p: f64| PhaseState { phase: p, rate: 0.01 };
        let pred: Vec<_> = pairs.iter().map(|p| mk(p.0)).collect();
        let truth: Vec<_> = pairs.iter().map(|p| mk(p.1)).collect();
        let rp: Vec<_> = pairs.iter().map(|p| mk(wrap_phase(p.0 + shift))).collect();
        let rt: Vec<_> = pairs.iter().map(|p| mk(wrap_phase(p.1 + shift))).collect();
        let a = phase_rmse(&pred, &truth).unwrap();
        let b = phase_rmse(&rp, &rt).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }
}

fn st(phase: f64, rate: f64) -> PhaseState {
    PhaseState { phase, rate }
}

#[test]
fn labels_for_short_stride() {
    let l = stride_phase_labels(20).unwrap();
    assert_eq!(l[0], st(0.0, 0.05));
    assert_eq!(l[5].phase, 0.25);
    assert!(l[19].phase < 1.0);
    assert!(stride_phase_labels(19).is_err());
    assert!(stride_phase_labels(4).is_err());
}

#[test]
fn hundred_sample_stride_rate() {
    let l = stride_phase_labels(100).unwrap();
    assert!(l.iter().all(|s| s.rate == 0.01));
    assert_eq!(l[99].phase, 0.99);
}

#[test]
fn encode_examples() {
    let close = |a: [f64; 3], b: [f64; 3]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
    assert!(close(encode_polar(st(0.0, 0.01)).0, [1.0, 0.0, 0.01]));
    assert!(close(encode_polar(st(0.25, 0.01)).0, [0.0, 1.0, 0.01]));
    assert!(close(encode_polar(st(0.5, 0.02)).0, [-1.0, 0.0, 0.02]));
}

#[test]
fn decode_examples() {
    assert_eq!(decode_polar(PhaseVector([1.0, 0.0, 0.01])).unwrap(), st(0.0, 0.01));
    let d = decode_polar(PhaseVector([0.0, -1.0, 0.01])).unwrap();
    assert!((d.phase - 0.75).abs() < 1e-15);
    let n = decode_polar(PhaseVector([0.5, 0.5, 0.01])).unwrap();
    assert!((n.phase - 0.125).abs() < 1e-15);
    assert!(decode_polar(PhaseVector([0.0, 0.0, 0.01])).is_err());
    assert_eq!(decode_polar(PhaseVector([1.0, 0.0, 1.0])).unwrap().rate, MAX_RATE);
    assert_eq!(decode_polar(PhaseVector([1.0, 0.0, -1.0])).unwrap().rate, MIN_RATE);
}

#[test]
fn decode_never_returns_one() {
    let d = decode_polar(PhaseVector([1.0, -1e-300, 0.01])).unwrap();
    assert!(d.phase < 1.0);
}

#[test]
fn circular_error_examples() {
    assert!((circular_error(0.99, 0.01) - 0.02).abs() < 1e-12);
    assert!((circular_error(0.2, 0.7) - 0.5).abs() < 1e-15);
    assert_eq!(circular_error(0.3, 0.3), 0.0);
}

#[test]
fn metric_examples() {
    let a = [st(0.99, 0.010)];
    let b = [st(0.01, 0.011)];
    assert!((phase_rmse(&a, &b).unwrap() - 2.0).abs() < 1e-9);
    assert!((rate_mae(&a, &b).unwrap() - 0.1).abs() < 1e-12);
    assert_eq!(phase_rmse(&a, &a).unwrap(), 0.0);
    assert_eq!(rate_mae(&a, &a).unwrap(), 0.0);
    assert!(phase_rmse(&[], &[]).is_err());
    assert!(rate_mae(&a, &[]).is_err());
    assert!((phase_rmse_naive(&a, &b).unwrap() - 98.0).abs() < 1e-9);
}
