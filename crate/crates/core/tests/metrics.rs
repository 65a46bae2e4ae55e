use std::f64::consts::PI;

use courtcast::eval::{aae, ade, fae, fde, ForecastRecord, MetricReport};
use courtcast::DT;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random records; about one step in ten repeats the previous point so the
/// angle metrics meet degenerate velocities.
fn batch(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Vec<ForecastRecord> {
    (0..n)
        .map(|_| {
            let last = [rng.gen_range(-20.0..20.0), rng.gen_range(-10.0..10.0)];
            let walk = |rng: &mut ChaCha8Rng| {
                let mut cur = last;
                (0..p)
                    .map(|_| {
                        if !rng.gen_bool(0.1) {
                            cur = [cur[0] + rng.gen_range(-0.3..0.3), cur[1] + rng.gen_range(-0.3..0.3)];
                        }
                        cur
                    })
                    .collect::<Vec<_>>()
            };
            let predicted = walk(rng);
            let truth = walk(rng);
            ForecastRecord::new(predicted, truth, last).unwrap()
        })
        .collect()
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Heading difference from the two headings, wrapped to (−180, 180].
fn oracle_angle(vt: [f64; 2], vp: [f64; 2]) -> Option<f64> {
    if dist(vt, [0.0; 2]) < 1e-9 || dist(vp, [0.0; 2]) < 1e-9 {
        return None;
    }
    let mut d = vp[1].atan2(vp[0]) - vt[1].atan2(vt[0]);
    while d > PI {
        d -= 2.0 * PI;
    }
    while d <= -PI {
        d += 2.0 * PI;
    }
    Some(d.to_degrees())
}

struct Oracle {
    ade: f64,
    fde: f64,
    aae: f64,
    fae: f64,
}

fn oracle(records: &[ForecastRecord]) -> Oracle {
    let p = records[0].truth.len();
    let (mut ade, mut fde) = (0.0, 0.0);
    let (mut aae, mut na, mut fae, mut nf) = (0.0, 0, 0.0, 0);
    for r in records {
        for t in 0..p {
            ade += dist(r.predicted[t], r.truth[t]);
            let prev = |seq: &[[f64; 2]]| if t == 0 { r.last } else { seq[t - 1] };
            let vel = |seq: &[[f64; 2]]| {
                let a = prev(seq);
                [(seq[t][0] - a[0]) / DT, (seq[t][1] - a[1]) / DT]
            };
            if let Some(a) = oracle_angle(vel(&r.truth), vel(&r.predicted)) {
                aae += a.abs();
                na += 1;
                if t == p - 1 {
                    fae += a.abs();
                    nf += 1;
                }
            }
        }
        fde += dist(r.predicted[p - 1], r.truth[p - 1]);
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Oracle {
        ade: ade / (records.len() * p) as f64,
        fde: fde / records.len() as f64,
        aae: mean(aae, na),
        fae: mean(fae, nf),
    }
}

#[test]
fn metrics_match_double_loop_oracle_on_1000_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let (n, p) = (rng.gen_range(1..12), rng.gen_range(1..30));
        let rs = batch(&mut rng, n, p);
        let o = oracle(&rs);
        assert!((ade(&rs).unwrap() - o.ade).abs() < 1e-9);
        assert!((fde(&rs).unwrap() - o.fde).abs() < 1e-9);
        assert!((aae(&rs).unwrap() - o.aae).abs() < 1e-9);
        assert!((fae(&rs).unwrap() - o.fae).abs() < 1e-9);
        let report = MetricReport::from_records("m", &rs).unwrap();
        for k in 1..=p {
            let cut: Vec<ForecastRecord> = rs
                .iter()
                .map(|r| ForecastRecord::new(r.predicted[..k].to_vec(), r.truth[..k].to_vec(), r.last).unwrap())
                .collect();
            let o = oracle(&cut);
            assert!((report.ade[k - 1] - o.ade).abs() < 1e-9);
            assert!((report.fde[k - 1] - o.fde).abs() < 1e-9);
            assert!((report.aae[k - 1] - o.aae).abs() < 1e-9);
            assert!((report.fae[k - 1] - o.fae).abs() < 1e-9);
        }
        assert_eq!(report.ade[p - 1], ade(&rs).unwrap());
    }
}

#[test]
fn perfect_forecast_scores_zero_and_empty_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rs: Vec<ForecastRecord> = batch(&mut rng, 4, 10)
        .into_iter()
        .map(|r| ForecastRecord::new(r.truth.clone(), r.truth, r.last).unwrap())
        .collect();
    for f in [ade, fde, aae, fae] {
        assert_eq!(f(&rs).unwrap(), 0.0);
        assert!(f(&[]).is_err());
    }
}

fn transform(rs: &[ForecastRecord], f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<ForecastRecord> {
    rs.iter()
        .map(|r| {
            ForecastRecord::new(
                r.predicted.iter().map(|&p| f(p)).collect(),
                r.truth.iter().map(|&p| f(p)).collect(),
                f(r.last),
            )
            .unwrap()
        })
        .collect()
}

fn all(rs: &[ForecastRecord]) -> [f64; 4] {
    [ade(rs).unwrap(), fde(rs).unwrap(), aae(rs).unwrap(), fae(rs).unwrap()]
}

proptest! {
    #[test]
    fn metrics_are_translation_invariant(seed in 0u64..100_000, dx in -100.0f64..100.0, dy in -100.0f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rs = batch(&mut rng, 5, 12);
        let moved = transform(&rs, |p| [p[0] + dx, p[1] + dy]);
        for (a, b) in all(&rs).iter().zip(all(&moved)) {
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn metrics_are_rotation_invariant(seed in 0u64..100_000, phi in -PI..PI) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rs = batch(&mut rng, 5, 12);
        let (s, c) = phi.sin_cos();
        let turned = transform(&rs, |p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]);
        for (a, b) in all(&rs).iter().zip(all(&turned)) {
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
