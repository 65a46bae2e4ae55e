//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on failure.
//!
//! `ACCEPTANCE_CRITERIA=1,4,7` runs a subset. Criterion 8 looks for the NBA
//! files named by `configs/nba.toml` and is skipped when they are missing.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use courtcast::autodiff::{kernels, Tape};
use courtcast::data::{derive_velocities, make_windows, window_count, FrameSeries, NormStats};
use courtcast::eval::{aae, ade, fae, fde, integrate_velocities, step_velocities, ForecastRecord, MetricReport};
use courtcast::models::baseline::Tcnn;
use courtcast::models::check::{check_model_gradients, model_check_options};
use courtcast::models::graph::{gat_attention, gat_multihead, Edges, GatLayer};
use courtcast::models::lmu::{discretize, lmu_matrices, LmuLayer};
use courtcast::models::transformer::{Attention, TemporalEmbedding};
use courtcast::models::{Dims, Forecaster, LmuMethod, ModelConfig, ModelKind};
use courtcast::params::ParamStore;
use courtcast::{Tensor, DT};
use courtcast_harness::config::{DatasetManifest, ExperimentConfig};
use courtcast_harness::experiments::{run_experiment1, run_experiment2, run_experiment3, Prepared, RunSummary};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

// 1 -------------------------------------------------------------------------

fn gradients() -> Outcome {
    let started = Instant::now();
    let config = ModelConfig::miniature();
    let dims = Dims {
        history: 6,
        forecast: 3,
        objects: 3,
    };
    let (mut worst, mut kinks, mut checks) = (0.0f64, 0usize, 0usize);
    for kind in ModelKind::ALL.into_iter().filter(|k| k.trainable()) {
        for seed in 0..20 {
            let r = check_model_gradients(kind, &config, dims, seed, &model_check_options(seed))
                .map_err(|e| format!("{kind} seed {seed}: {e}"))?;
            ensure(r.passed(), || format!("{kind} seed {seed}: {:?}", r.worst()))?;
            worst = worst.max(r.max_rel_error());
            kinks += r.kinks.len();
            checks += 1;
        }
    }
    let took = started.elapsed();
    ensure(took < Duration::from_secs(300), || format!("took {took:.0?}, budget 5 min"))?;
    Ok(format!(
        "7 models x 20 seeds ({checks} checks), max rel err {worst:.2e}, {kinks} kink retries, {took:.1?}"
    ))
}

// 2 -------------------------------------------------------------------------

fn random_records(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Vec<ForecastRecord> {
    (0..n)
        .map(|_| {
            let last = [rng.gen_range(-20.0..20.0), rng.gen_range(-10.0..10.0)];
            let walk = |rng: &mut ChaCha8Rng| {
                let mut cur = last;
                (0..p)
                    .map(|_| {
                        // some repeated points give degenerate velocities
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

fn norm2(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn heading_gap(vt: [f64; 2], vp: [f64; 2]) -> Option<f64> {
    if norm2(vt, [0.0; 2]) < 1e-9 || norm2(vp, [0.0; 2]) < 1e-9 {
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

fn metric_oracle(rs: &[ForecastRecord]) -> [f64; 4] {
    let p = rs[0].truth.len();
    let (mut ade, mut fde, mut aae, mut na, mut fae, mut nf) = (0.0, 0.0, 0.0, 0, 0.0, 0);
    for r in rs {
        for t in 0..p {
            ade += norm2(r.predicted[t], r.truth[t]);
            let vel = |seq: &[[f64; 2]]| {
                let prev = if t == 0 { r.last } else { seq[t - 1] };
                [(seq[t][0] - prev[0]) / DT, (seq[t][1] - prev[1]) / DT]
            };
            if let Some(a) = heading_gap(vel(&r.truth), vel(&r.predicted)) {
                aae += a.abs();
                na += 1;
                if t + 1 == p {
                    fae += a.abs();
                    nf += 1;
                }
            }
        }
        fde += norm2(r.predicted[p - 1], r.truth[p - 1]);
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    [ade / (rs.len() * p) as f64, fde / rs.len() as f64, mean(aae, na), mean(fae, nf)]
}

fn metrics_of(rs: &[ForecastRecord]) -> [f64; 4] {
    [ade(rs).unwrap(), fde(rs).unwrap(), aae(rs).unwrap(), fae(rs).unwrap()]
}

fn mapped(rs: &[ForecastRecord], f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<ForecastRecord> {
    rs.iter()
        .map(|r| {
            let pts = |v: &[[f64; 2]]| v.iter().map(|&p| f(p)).collect();
            ForecastRecord::new(pts(&r.predicted), pts(&r.truth), f(r.last)).unwrap()
        })
        .collect()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for b in 0..1000 {
        let (n, p) = (rng.gen_range(1..12), rng.gen_range(1..40));
        let rs = random_records(&mut rng, n, p);
        let want = metric_oracle(&rs);
        for (i, (g, w)) in metrics_of(&rs).iter().zip(want).enumerate() {
            worst = worst.max((g - w).abs());
            ensure((g - w).abs() < 1e-9, || format!("batch {b} metric {i}: {g} vs oracle {w}"))?;
        }
        let report = MetricReport::from_records("m", &rs).map_err(|e| e.to_string())?;
        let last = [report.ade[p - 1], report.fde[p - 1], report.aae[p - 1], report.fae[p - 1]];
        ensure(last == metrics_of(&rs), || format!("batch {b}: per-horizon curve disagrees at the final step"))?;
    }
    let mut inv = 0.0f64;
    for _ in 0..300 {
        let rs = random_records(&mut rng, 6, 15);
        let base = metrics_of(&rs);
        let (dx, dy, phi) = (rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0), rng.gen_range(-PI..PI));
        let (s, c) = phi.sin_cos();
        for moved in [
            mapped(&rs, |p| [p[0] + dx, p[1] + dy]),
            mapped(&rs, |p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]),
        ] {
            for (a, b) in base.iter().zip(metrics_of(&moved)) {
                inv = inv.max((a - b).abs());
            }
        }
    }
    ensure(inv < 1e-9, || format!("invariance gap {inv:e}"))?;
    Ok(format!("1000 batches, max oracle gap {worst:.1e}; translation/rotation gap {inv:.1e}"))
}

// 3 -------------------------------------------------------------------------

fn sq(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            c[i * n + j] = (0..n).map(|k| a[i * n + k] * b[k * n + j]).sum();
        }
    }
    c
}

/// Taylor series on the matrix scaled below 1/8 in the ∞-norm, then squared back.
fn expm_oracle(m: &[f64], n: usize) -> Vec<f64> {
    let norm = (0..n).map(|i| (0..n).map(|j| m[i * n + j].abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut s = 0;
    while norm / 2f64.powi(s) >= 0.125 {
        s += 1;
    }
    let a: Vec<f64> = m.iter().map(|v| v / 2f64.powi(s)).collect();
    let (mut sum, mut term) = (vec![0.0; n * n], vec![0.0; n * n]);
    for i in 0..n {
        sum[i * n + i] = 1.0;
        term[i * n + i] = 1.0;
    }
    for k in 1..30 {
        term = sq(&term, &a, n).into_iter().map(|v| v / k as f64).collect();
        sum.iter_mut().zip(&term).for_each(|(s, t)| *s += t);
    }
    for _ in 0..s {
        sum = sq(&sum, &sum, n);
    }
    sum
}

fn gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn lmu_structure() -> Outcome {
    let sign = |p: i64| if p.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    for d in 1..=8usize {
        let (a, b) = lmu_matrices(d, false);
        for i in 0..d {
            ensure(b.get(&[i]) == (2 * i + 1) as f64 * sign(i as i64), || format!("b[{i}] at d={d}"))?;
            for j in 0..d {
                let want = if i < j { -1.0 } else { sign(i as i64 - j as i64 + 1) };
                ensure(a.get(&[i, j]) == want, || format!("a[{i},{j}] at d={d}"))?;
            }
        }
    }
    let mut zoh = 0.0f64;
    let mut semigroup = 0.0f64;
    for d in [1, 2, 4, 8, 24] {
        let (a, b) = lmu_matrices(d, false);
        let (ab, bb) = discretize(&a, &b, 25.0, 1.0, LmuMethod::Zoh).map_err(|e| e.to_string())?;
        let n = d + 1;
        let mut m = vec![0.0; n * n];
        for i in 0..d {
            for j in 0..d {
                m[i * n + j] = a.get(&[i, j]) / 25.0;
            }
            m[i * n + d] = b.get(&[i]) / 25.0;
        }
        let e = expm_oracle(&m, n);
        let want_a: Vec<f64> = (0..d * d).map(|k| e[(k / d) * n + k % d]).collect();
        let want_b: Vec<f64> = (0..d).map(|i| e[i * n + d]).collect();
        zoh = zoh.max(gap(ab.data(), &want_a)).max(gap(bb.data(), &want_b));
        let (a2, _) = discretize(&a, &b, 25.0, 2.0, LmuMethod::Zoh).map_err(|e| e.to_string())?;
        semigroup = semigroup.max(gap(a2.data(), &sq(ab.data(), ab.data(), d)));
    }
    ensure(zoh < 1e-10, || format!("ZOH vs oracle {zoh:e}"))?;
    ensure(semigroup < 1e-9, || format!("Ā(2Δ) vs Ā(Δ)² {semigroup:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (d, input, hidden) = (8, 4, 3);
    let (a, b) = lmu_matrices(d, false);
    let (ab, bb) = discretize(&a, &b, 25.0, 1.0, LmuMethod::Zoh).map_err(|e| e.to_string())?;
    let mut store = ParamStore::new();
    let layer = LmuLayer::new(&mut store, "l", input, hidden, &ab, &bb, &mut rng).map_err(|e| e.to_string())?;
    for t in store.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
    }
    let memory = |x: &Tensor, h: &Tensor, m: &Tensor| {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let k = layer.constants(&mut tape);
        let (x, h, m) = (tape.constant(x.clone()), tape.constant(h.clone()), tape.constant(m.clone()));
        let (_, m2) = layer.step(&mut tape, &p, k, x, h, m).unwrap();
        tape.value(m2).clone()
    };
    let mut linear = 0.0f64;
    for _ in 0..200 {
        let (al, be) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let draw = |s: &[usize], rng: &mut ChaCha8Rng| Tensor::uniform(s, 2.0, rng);
        let one = [draw(&[2, input], &mut rng), draw(&[2, hidden], &mut rng), draw(&[2, d], &mut rng)];
        let two = [draw(&[2, input], &mut rng), draw(&[2, hidden], &mut rng), draw(&[2, d], &mut rng)];
        let mix = |p: &Tensor, q: &Tensor| {
            Tensor::from_vec(p.shape(), p.data().iter().zip(q.data()).map(|(u, v)| al * u + be * v).collect())
        };
        let joint = memory(&mix(&one[0], &two[0]), &mix(&one[1], &two[1]), &mix(&one[2], &two[2]));
        let parts = mix(&memory(&one[0], &one[1], &one[2]), &memory(&two[0], &two[1], &two[2]));
        linear = linear.max(joint.max_abs_diff(&parts));
    }
    ensure(linear < 1e-9, || format!("memory update superposition gap {linear:e}"))?;
    Ok(format!("symbolic d<=8 exact; ZOH gap {zoh:.1e}; semigroup gap {semigroup:.1e}; linearity gap {linear:.1e}"))
}

// 4 -------------------------------------------------------------------------

fn random_edges(n: usize, rng: &mut ChaCha8Rng) -> Edges {
    let mut pairs = Vec::new();
    for i in 0..n {
        pairs.push((i, i));
        for j in (0..n).filter(|&j| j != i) {
            if rng.gen_bool(0.5) {
                pairs.push((i, j));
            }
        }
    }
    let dist = pairs.iter().map(|_| rng.gen_range(0.0..10.0)).collect();
    Edges::new(pairs, dist, n).unwrap()
}

fn attention() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut gat_sum, mut mha_sum) = (0.0f64, 0.0f64);
    let mut permutations = 0;
    for trial in 0..200 {
        let n = 1 + trial % 11;
        let mut store = ParamStore::new();
        let layer = GatLayer::new(&mut store, "g", 4, 3, 2, 0.2, trial % 2 == 0, &mut rng).map_err(|e| e.to_string())?;
        let edges = random_edges(n, &mut rng);
        let h = Tensor::uniform(&[n, 4], 2.0, &mut rng);
        let run = |h: &Tensor, e: &Edges| {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape, false);
            let x = tape.constant(h.clone());
            let alphas: Vec<Vec<f64>> = layer
                .heads
                .iter()
                .map(|hd| {
                    let (a, _) = gat_attention(&mut tape, &p, hd, layer.slope, x, e).unwrap();
                    tape.value(a).data().to_vec()
                })
                .collect();
            let y = gat_multihead(&mut tape, &p, &layer, x, e).unwrap();
            (alphas, tape.value(y).clone())
        };
        let (alphas, y) = run(&h, &edges);
        for a in &alphas {
            let mut sums = vec![0.0; n];
            for (&(i, _), v) in edges.pairs.iter().zip(a) {
                sums[i] += v;
            }
            gat_sum = sums.iter().fold(gat_sum, |m, s| m.max((s - 1.0).abs()));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut hp = Tensor::zeros(&[n, 4]);
        for i in 0..n {
            for f in 0..4 {
                hp.set(&[perm[i], f], h.get(&[i, f]));
            }
        }
        let pairs = edges.pairs.iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        let (alphas_p, yp) = run(&hp, &Edges::new(pairs, edges.distance.clone(), n).unwrap());
        ensure(alphas == alphas_p, || format!("trial {trial}: edge weights moved under relabelling"))?;
        for i in 0..n {
            for f in 0..y.shape()[1] {
                ensure(y.get(&[i, f]) == yp.get(&[perm[i], f]), || format!("trial {trial}: node {i} not equivariant"))?;
            }
        }
        permutations += 1;

        let uniform = Tensor::from_vec(&[n, 4], (0..n).flat_map(|_| [0.4, -1.0, 2.0, 0.1]).collect());
        let full: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
        let full = Edges::new(full.clone(), vec![1.0; full.len()], n).unwrap();
        for a in run(&uniform, &full).0 {
            ensure(a.iter().all(|&v| v == 1.0 / n as f64), || format!("GAT weights not uniform at n={n}"))?;
        }

        let mut store = ParamStore::new();
        let heads = 1 + trial % 4;
        let att = Attention::new(&mut store, "a", 8, heads, 4, &mut rng);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::uniform(&[2, n, 8], 3.0, &mut rng));
        for (w, _) in att.weights(&mut tape, &p, x).map_err(|e| e.to_string())? {
            for row in tape.value(w).data().chunks(n) {
                mha_sum = mha_sum.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
        let same = tape.constant(Tensor::from_vec(&[1, n, 8], (0..n).flat_map(|_| [0.3, 1.0, -0.2, 0.0, 2.0, 0.5, -1.0, 0.7]).collect()));
        for (w, _) in att.weights(&mut tape, &p, same).map_err(|e| e.to_string())? {
            ensure(tape.value(w).data().iter().all(|&v| v == 1.0 / n as f64), || format!("MHA weights not uniform at n={n}"))?;
        }
    }
    ensure(gat_sum <= 1e-12, || format!("GAT row sums off by {gat_sum:e}"))?;
    ensure(mha_sum <= 1e-12, || format!("MHA row sums off by {mha_sum:e}"))?;
    let s = Tensor::uniform(&[4, 6], 5.0, &mut rng);
    let shifted = kernels::softmax(&s.map(|v| v + 37.0)).map_err(|e| e.to_string())?;
    ensure(kernels::softmax(&s).unwrap().max_abs_diff(&shifted) < 1e-12, || "softmax not shift invariant".into())?;
    Ok(format!(
        "row sums within {:.1e} (GAT) / {:.1e} (MHA); uniform exact; {permutations} relabellings exact for N<=11",
        gat_sum, mha_sum
    ))
}

// 5 -------------------------------------------------------------------------

fn causal(run: &dyn Fn(&Tensor) -> Tensor, x: &Tensor, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let (b, h, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let base = run(x);
    let width = base.shape()[2];
    for t in 0..h {
        let mut xp = x.clone();
        for bi in 0..b {
            for ci in 0..c {
                xp.set(&[bi, t, ci], xp.get(&[bi, t, ci]) + rng.gen_range(0.5..5.0));
            }
        }
        let y = run(&xp);
        for bi in 0..b {
            for s in 0..t {
                for f in 0..width {
                    ensure(y.get(&[bi, s, f]) == base.get(&[bi, s, f]), || format!("step {s} moved when input {t} changed"))?;
                }
            }
        }
    }
    Ok(())
}

fn pipeline() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cases = 0;
    for t in [1usize, 5, 30, 99, 100, 101, 250] {
        let s = FrameSeries {
            game_id: "g".into(),
            focal_team: "A".into(),
            times: (0..t).map(|i| i as f64 * DT).collect(),
            object_ids: vec![1, 2],
            team_ids: vec![1, 2],
            features: vec!["pos_x".into(), "pos_y".into()],
            values: Tensor::uniform(&[t, 2, 2], 10.0, &mut rng),
        };
        for h in [1usize, 4, 25, 50] {
            for p in [1usize, 12, 50] {
                for stride in [1usize, 3, 4, 7] {
                    let want = if t < h + p { 0 } else { (t - h - p) / stride + 1 };
                    let got = make_windows(&s, h, p, stride).map_err(|e| e.to_string())?.len();
                    ensure(got == want && window_count(t, h, p, stride) == want, || {
                        format!("T={t} H={h} P={p} s={stride}: {got} windows, formula {want}")
                    })?;
                    cases += 1;
                }
            }
        }
    }
    let mut roundtrip = 0.0f64;
    let names: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
    for _ in 0..100 {
        let scale = 10f64.powf(rng.gen_range(-2.0..3.0));
        let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..4).map(|_| rng.gen_range(-scale..scale)).collect()).collect();
        let stats = NormStats::fit_rows(&names, rows.iter().map(|r| r.as_slice())).map_err(|e| e.to_string())?;
        let x = Tensor::uniform(&[6, 4], scale, &mut rng);
        roundtrip = roundtrip.max(stats.invert(&stats.apply(&x).unwrap()).unwrap().max_abs_diff(&x));
    }
    ensure(roundtrip < 1e-9, || format!("normalize roundtrip {roundtrip:e}"))?;
    let mut identity = 0.0f64;
    for _ in 0..200 {
        let p0 = [rng.gen_range(-30.0..30.0), rng.gen_range(-15.0..15.0)];
        let path: Vec<[f64; 2]> = (0..50).map(|_| [rng.gen_range(-30.0..30.0), rng.gen_range(-15.0..15.0)]).collect();
        let back = integrate_velocities(p0, &step_velocities(p0, &path, DT), DT);
        for (a, b) in back.iter().zip(&path) {
            identity = identity.max(norm2(*a, *b));
        }
    }
    let s = FrameSeries {
        game_id: "g".into(),
        focal_team: "A".into(),
        times: (0..60).map(|i| i as f64 * DT).collect(),
        object_ids: vec![1, 2, 3],
        team_ids: vec![1, 2, -1],
        features: vec!["pos_x".into(), "pos_y".into()],
        values: Tensor::uniform(&[60, 3, 2], 20.0, &mut rng),
    };
    let derived = derive_velocities(&s).map_err(|e| e.to_string())?;
    for o in 0..3 {
        let vel: Vec<[f64; 2]> = (1..60).map(|t| [derived.get(t, o, 2), derived.get(t, o, 3)]).collect();
        for (t, p) in integrate_velocities(derived.position(0, o), &vel, DT).iter().enumerate() {
            identity = identity.max(norm2(*p, derived.position(t + 1, o)));
        }
    }
    ensure(identity < 1e-9, || format!("derive/integrate gap {identity:e}"))?;

    let config = ModelConfig {
        tcnn_filters: 6,
        ..ModelConfig::paper()
    };
    let dims = Dims {
        history: 50,
        forecast: 3,
        objects: 3,
    };
    let tcnn = Tcnn::new(&config, dims, &mut rng).map_err(|e| e.to_string())?;
    let mut params = tcnn.params().clone();
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += 0.2);
    }
    let x = Tensor::uniform(&[2, 50, 6], 1.0, &mut rng);
    let per_layer = |x: &Tensor| {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let layers = tcnn.features(&mut tape, &p, xv).unwrap();
        let outs: Vec<Var> = layers;
        let joined = tape.concat(&outs).unwrap();
        tape.value(joined).clone()
    };
    causal(&per_layer, &x, &mut rng).map_err(|e| format!("tcnn: {e}"))?;
    let mut store = ParamStore::new();
    let embed = TemporalEmbedding::new(&mut store, 6, 16, 3, &mut rng);
    let embedded = |x: &Tensor| {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = embed.forward(&mut tape, &p, xv).unwrap();
        tape.value(y).clone()
    };
    causal(&embedded, &x, &mut rng).map_err(|e| format!("temporal embedding: {e}"))?;
    Ok(format!(
        "{cases} window counts exact; roundtrip {roundtrip:.1e}; derive/integrate {identity:.1e}; TCNN (5 layers) and embedding causal"
    ))
}

use courtcast::autodiff::Var;

// 6 -------------------------------------------------------------------------

fn load(name: &str, out: &Path) -> Result<ExperimentConfig, String> {
    let mut c = ExperimentConfig::load(&repo().join("configs").join(name)).map_err(|e| e.to_string())?;
    c.output = out.to_path_buf();
    Ok(c)
}

fn report<'a>(s: &'a RunSummary, kind: ModelKind) -> Result<&'a MetricReport, String> {
    s.results
        .iter()
        .find(|r| r.model == kind)
        .map(|r| &r.report)
        .ok_or_else(|| format!("{kind} missing from {} ({:?})", s.experiment, s.warnings))
}

fn trends() -> Outcome {
    let started = Instant::now();
    let out = scratch("desk");
    let step = |s: f64| (s / DT).round() as usize - 1;
    let (h2, h012) = (step(2.0), step(0.12));

    let exp2 = run_experiment2(&Prepared::new(load("exp2.toml", &out)?).map_err(|e| e.to_string())?)
        .map_err(|e| format!("exp2: {e}"))?;
    let windows = &exp2.datasets[0];
    let cv = report(&exp2, ModelKind::ConstantVelocity)?;
    let mut lines = vec![format!(
        "{} train / {} validation / {} test windows",
        windows.train_windows, windows.validation_windows, windows.test_windows
    )];
    let mut best_short = f64::INFINITY;
    for kind in ModelKind::ALL.into_iter().filter(|k| k.trainable()) {
        let r = report(&exp2, kind)?;
        ensure(r.fde[h2] < cv.fde[h2], || {
            format!("(a) {kind} FDE@2s {:.3} not below constant velocity {:.3}", r.fde[h2], cv.fde[h2])
        })?;
        best_short = best_short.min(r.fde[h012]);
    }
    let best_long = ModelKind::ALL
        .into_iter()
        .filter(|k| k.trainable())
        .map(|k| report(&exp2, k).map(|r| r.fde[h2]))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    lines.push(format!("(a) FDE@2s cv {:.3} > every trained model (best {:.3})", cv.fde[h2], best_long));
    ensure(cv.fde[h012] <= 1.05 * best_short, || {
        format!("(b) CV FDE@0.12s {:.4} exceeds best model {:.4} by more than 5%", cv.fde[h012], best_short)
    })?;
    lines.push(format!("(b) FDE@0.12s cv {:.4} vs best model {:.4}", cv.fde[h012], best_short));

    let mut sweep = load("exp1.toml", &out)?;
    sweep.models = vec![ModelKind::Lmu];
    sweep.history_s = vec![0.15, 2.0];
    let exp1 = run_experiment1(&Prepared::new(sweep).map_err(|e| e.to_string())?).map_err(|e| format!("exp1: {e}"))?;
    let at = |steps: usize| {
        exp1.results
            .iter()
            .find(|r| r.history_steps == steps)
            .map(|r| r.report.fde[h2])
            .ok_or_else(|| format!("exp1 has no lmu run at {steps} steps"))
    };
    let (short, long) = (at(4)?, at(50)?);
    ensure(short >= 1.10 * long, || format!("(c) lmu FDE@2s {short:.3} with 0.16 s input vs {long:.3} with 2 s input"))?;
    lines.push(format!("(c) lmu FDE@2s {short:.3} (0.16 s input) vs {long:.3} (2 s), +{:.1}%", 100.0 * (short / long - 1.0)));

    let mut cross = load("exp3.toml", &out)?;
    cross.baseline = None;
    let exp3 = run_experiment3(&Prepared::new(cross).map_err(|e| e.to_string())?, Some(&exp2.reports()))
        .map_err(|e| format!("exp3: {e}"))?;
    let deltas = exp3.deltas.clone().unwrap_or_default();
    ensure(deltas.len() == 4, || format!("{} delta rows", deltas.len()))?;
    for d in &deltas {
        ensure(d.fde_m.abs() < 0.5, || format!("cross-team {} ΔFDE {:.3}", d.model, d.fde_m))?;
    }
    lines.push(format!(
        "cross-team ΔFDE {}",
        deltas.iter().map(|d| format!("{} {:+.3}", d.model, d.fde_m)).collect::<Vec<_>>().join(", ")
    ));
    let took = started.elapsed();
    ensure(took < Duration::from_secs(1800), || format!("took {took:.0?}, budget 30 min"))?;
    lines.push(format!("{took:.0?}, outputs in {}", out.display()));
    Ok(lines.join("; "))
}

// 7 -------------------------------------------------------------------------

fn determinism() -> Outcome {
    let base = scratch("determinism");
    std::fs::create_dir_all(&base).map_err(|e| e.to_string())?;
    let manifest = base.join("data.toml");
    std::fs::write(
        &manifest,
        "format = \"synthetic\"\n[synthetic]\ngames = 10\nseconds = 5.0\nteams = [\"A\", \"B\"]\nseed = 4\n[split]\npolicy = \"by_game\"\n",
    )
    .map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<Vec<(String, Vec<u8>)>, String> {
        let config = ExperimentConfig {
            models: ModelKind::ALL.to_vec(),
            history_s: vec![0.4],
            forecast_s: 0.4,
            stride_s: 0.2,
            seed: 11,
            dataset: manifest.clone(),
            output: base.join(name),
            table_horizons_s: vec![0.2, 0.4],
            size: "miniature".into(),
            train: courtcast_harness::config::TrainConfig {
                epochs: 2,
                batch_size: 8,
                ..Default::default()
            },
            ..Default::default()
        };
        let m = DatasetManifest::load(&manifest).map_err(|e| e.to_string())?;
        run_experiment2(&Prepared::with_manifest(config, m).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let dir = base.join(name).join("within_team");
        let mut files = vec!["report.csv".to_string(), "curves.csv".to_string()];
        let mut ckpts: Vec<String> = std::fs::read_dir(dir.join("checkpoints"))
            .map_err(|e| e.to_string())?
            .map(|e| format!("checkpoints/{}", e.unwrap().file_name().to_string_lossy()))
            .collect();
        ckpts.sort();
        files.extend(ckpts);
        files
            .into_iter()
            .map(|f| std::fs::read(dir.join(&f)).map(|b| (f, b)).map_err(|e| e.to_string()))
            .collect()
    };
    let (first, second) = (run("a")?, run("b")?);
    ensure(first.len() == second.len(), || "different file sets".into())?;
    for ((name, a), (_, b)) in first.iter().zip(&second) {
        ensure(a == b, || format!("{name} differs between runs"))?;
    }
    let rows = String::from_utf8_lossy(&first[0].1).lines().count() - 1;
    Ok(format!("8 models, {rows} report rows, CSVs and {} checkpoints byte-identical", first.len() - 2))
}

// 8 -------------------------------------------------------------------------

fn nba() -> Option<Outcome> {
    let configs = repo().join("configs");
    let manifest = DatasetManifest::load(&configs.join("nba.toml")).ok()?;
    if manifest.files.is_empty() || !manifest.files.iter().all(|f| f.exists()) {
        return None;
    }
    Some((|| {
        let config = load("nba_exp2.toml", &scratch("nba"))?;
        let s = run_experiment2(&Prepared::new(config).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure(s.results.len() == 8, || format!("{} of 8 models reported: {:?}", s.results.len(), s.warnings))?;
        let h = [(0.48 / DT).round() as usize - 1, (2.0 / DT).round() as usize - 1];
        let mut table = Vec::new();
        for r in &s.results {
            let vals: Vec<f64> = h.iter().flat_map(|&k| [r.report.ade[k], r.report.fde[k], r.report.aae[k], r.report.fae[k]]).collect();
            ensure(vals.iter().all(|v| v.is_finite()), || format!("{} has non-finite metrics", r.model))?;
            table.push(format!("{} FDE@2s {:.2}", r.model, r.report.fde[h[1]]));
        }
        Ok(format!("8x4 table at 0.48 s and 2.0 s: {}", table.join(", ")))
    })())
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let selected: Option<Vec<u32>> = std::env::var("ACCEPTANCE_CRITERIA")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: u32| selected.as_ref().map_or(true, |s| s.contains(&n));
    let criteria: [(u32, &str, fn() -> Outcome); 7] = [
        (1, "gradient suite", gradients),
        (2, "metric oracles", metric_oracles),
        (3, "LMU structure", lmu_structure),
        (4, "attention", attention),
        (5, "pipeline", pipeline),
        (7, "determinism", determinism),
        (6, "desk-scale trends", trends),
    ];
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !wanted(n) {
            println!("SKIP criterion {n} ({name}): not selected");
            continue;
        }
        let started = Instant::now();
        match check() {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail} [{:.1?}]", started.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {why} [{:.1?}]", started.elapsed());
            }
        }
    }
    if wanted(8) {
        match nba() {
            None => println!("SKIP criterion 8 (NBA end-to-end): tracking files listed in configs/nba.toml are absent"),
            Some(Ok(detail)) => println!("PASS criterion 8 (NBA end-to-end): {detail}"),
            Some(Err(why)) => {
                failed += 1;
                println!("FAIL criterion 8 (NBA end-to-end): {why}");
            }
        }
    } else {
        println!("SKIP criterion 8 (NBA end-to-end): not selected");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
