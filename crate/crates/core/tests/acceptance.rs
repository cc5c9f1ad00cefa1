//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always printed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uhdn::ablation::{variant_parameter_names, CSV_HEADER, DEFAULT_RATE_GROUPS};
use uhdn::metrics::{f1_of, grid_threshold, ods, ois, tolerant_confusion, Confusion, GRID_STEPS};
use uhdn::net::{build, forward, parameter_shapes, predict, NetworkConfig, NetworkParams};
use uhdn::ops::{conv2d, effective_kernel_size, ConvKernel};
use uhdn::synthetic::crack_image;
use uhdn::training::{adam_step, plateau_step, AdamState, PlateauConfig, PlateauState, TrainConfig, Trainer, TrainingPair};
use uhdn::{dataio, gradcheck, Mask, ProbMap, Tensor4};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, budget_s: u64, what: &str) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < budget_s as f64, || {
        format!("{what} took {:.1}s, budget {budget_s}s", elapsed.as_secs_f64())
    })
}

fn gradient_oracle() -> Outcome {
    let t = Instant::now();
    let reports = gradcheck::check_ops(&["all".into()], 5, 2024).map_err(|e| e.to_string())?;
    for r in &reports {
        ensure(r.passed(), || {
            format!(
                "{}: operand {} element {} analytic {:e} numeric {:e} (rel {:.2e})",
                r.op, r.worst_operand, r.worst_index, r.analytic, r.numeric, r.worst_error
            )
        })?;
    }
    within(t.elapsed(), 60, "gradient oracle")?;
    let worst = reports.iter().map(|r| r.worst_error).fold(0.0, f64::max);
    Ok(format!(
        "{} ops x 5 trials, worst relative error {worst:.2e}, {:.2}s",
        reports.len(),
        t.elapsed().as_secs_f64()
    ))
}

fn expected_plan(b: usize) -> Vec<(String, [usize; 4])> {
    let mut w: Vec<(&str, [usize; 4])> = vec![
        ("enc1.conv1", [b, 3, 3, 3]),
        ("enc1.conv2", [b, b, 3, 3]),
        ("enc2.conv1", [2 * b, b, 3, 3]),
        ("enc2.conv2", [2 * b, 2 * b, 3, 3]),
        ("enc3.conv1", [4 * b, 2 * b, 3, 3]),
        ("enc3.conv2", [4 * b, 4 * b, 3, 3]),
        ("enc4.conv1", [8 * b, 4 * b, 3, 3]),
        ("enc4.conv2", [8 * b, 8 * b, 3, 3]),
        ("mdm.branch_r2", [8 * b, 8 * b, 3, 3]),
        ("mdm.branch_r4", [8 * b, 8 * b, 3, 3]),
        ("mdm.branch_r8", [8 * b, 8 * b, 3, 3]),
        ("mdm.branch_r16", [8 * b, 8 * b, 3, 3]),
        ("mdm.project", [16 * b, 40 * b, 1, 1]),
        ("dec1.up", [4 * b, 16 * b, 2, 2]),
        ("dec1.conv1", [4 * b, 8 * b, 3, 3]),
        ("dec1.conv2", [4 * b, 4 * b, 3, 3]),
        ("dec2.up", [2 * b, 4 * b, 2, 2]),
        ("dec2.conv1", [2 * b, 4 * b, 3, 3]),
        ("dec2.conv2", [2 * b, 2 * b, 3, 3]),
        ("dec3.up", [b, 2 * b, 2, 2]),
        ("dec3.conv1", [b, 2 * b, 3, 3]),
        ("dec3.conv2", [b, b, 3, 3]),
        ("side1", [1, 8 * b, 1, 1]),
        ("side2", [1, 16 * b, 1, 1]),
        ("side3", [1, 4 * b, 1, 1]),
        ("side4", [1, 2 * b, 1, 1]),
        ("side5", [1, b, 1, 1]),
        ("fuse", [1, 5, 1, 1]),
    ];
    let mut out = Vec::new();
    for (name, shape) in w.drain(..) {
        out.push((format!("{name}.weight"), shape));
        out.push((format!("{name}.bias"), [shape[0], 1, 1, 1]));
    }
    out.sort();
    out
}

fn shape_suite() -> Outcome {
    let t = Instant::now();
    let cfg = NetworkConfig::default();
    let plan = parameter_shapes(&cfg);
    ensure(plan == expected_plan(64), || "parameter plan differs from the documented channel plan".into())?;
    ensure(plan.iter().any(|(n, s)| n == "mdm.project.weight" && *s == [1024, 2560, 1, 1]), || {
        "MDM projection is not 2560 -> 1024".into()
    })?;
    let params: NetworkParams<f32> = build(&cfg).map_err(|e| e.to_string())?;
    for (h, w) in [(64, 96), (320, 480), (312, 464)] {
        let x = Tensor4::from_fn([1, 3, h, w], |_, c, y, xx| ((c * 7 + y * 3 + xx) % 11) as f32 / 11.0);
        let b = forward(&params, &cfg, &x).map_err(|e| e.to_string())?;
        ensure(b.sides.len() == 5, || format!("{} sides", b.sides.len()))?;
        for s in b.sides.iter().chain([&b.fused]) {
            ensure(s.shape() == [1, 1, h, w], || format!("output {:?} for input {h}x{w}", s.shape()))?;
            ensure(s.all_finite(), || "non-finite logits".into())?;
        }
    }
    within(t.elapsed(), 30, "shape suite")?;
    Ok(format!(
        "64x96, 320x480, 312x464 -> 5 sides + fused at input size; {} tensors audited; {:.1}s",
        plan.len(),
        t.elapsed().as_secs_f64()
    ))
}

fn dilation_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut rand_t = |shape: [usize; 4]| Tensor4::<f64>::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0));
    let x = rand_t([1, 2, 40, 40]);
    for r in [1, 2, 3, 4, 8, 16] {
        let w = rand_t([3, 2, 3, 3]);
        let k = ConvKernel::same(w.clone(), vec![0.0; 3], r);
        let y = conv2d(&x, &k).map_err(|e| e.to_string())?;
        ensure(y.shape() == [1, 3, 40, 40], || format!("r={r}: output {:?}", y.shape()))?;
        ensure(k.weight.shape() == [3, 2, 3, 3], || format!("r={r}: weight reshaped"))?;
    }
    for k in [1, 3, 5] {
        for r in 1..=16 {
            ensure(effective_kernel_size(k, r) == k + (k - 1) * (r - 1), || {
                format!("effective size wrong for k={k}, r={r}")
            })?;
        }
    }
    let mut worst = 0f64;
    let mut cases = 0;
    for r in 1..=4 {
        for k in [1usize, 3, 5] {
            let x8 = rand_t([2, 2, 8, 8]);
            let w = rand_t([2, 2, k, k]);
            let e = effective_kernel_size(k, r);
            let stuffed = Tensor4::from_fn([2, 2, e, e], |o, i, y, xx| {
                if y % r == 0 && xx % r == 0 {
                    w.at(o, i, y / r, xx / r)
                } else {
                    0.0
                }
            });
            let a = conv2d(&x8, &ConvKernel::same(w, vec![0.3, -0.1], r)).map_err(|e| e.to_string())?;
            let b = conv2d(&x8, &ConvKernel::same(stuffed, vec![0.3, -0.1], 1)).map_err(|e| e.to_string())?;
            for (u, v) in a.data().iter().zip(b.data()) {
                worst = worst.max((u - v).abs());
            }
            cases += 1;
        }
    }
    ensure(worst < 1e-6, || format!("dilated vs zero-stuffed differ by {worst:e}"))?;
    Ok(format!(
        "size kept for r in {{1,2,3,4,8,16}}; effective size for 48 (k,r); {cases} zero-stuffed cases, max diff {worst:.1e}"
    ))
}

fn overfit_smoke() -> Outcome {
    let t = Instant::now();
    let data: Vec<(Tensor4<f32>, Mask)> = (0..2).map(|i| crack_image(64, 96, 3, 100 + i)).collect();
    let pairs: Vec<TrainingPair<f32>> = data
        .iter()
        .map(|(x, m)| TrainingPair {
            image: x.clone(),
            mask: m.to_tensor(),
        })
        .collect();
    let net = NetworkConfig::default();
    let config = TrainConfig::default();
    let mut trainer = Trainer::<f32>::new(net.clone(), config).map_err(|e| e.to_string())?;
    let mut last = 0.0;
    for epoch in 1..=500 {
        trainer.run_epoch(&pairs).map_err(|e| e.to_string())?;
        if epoch % 10 == 0 {
            let mut c = Confusion::default();
            for (x, m) in &data {
                let p = predict(&trainer.params, &net, x, 0.5).map_err(|e| e.to_string())?.remove(0);
                c += tolerant_confusion(&p, m, 2).map_err(|e| e.to_string())?;
            }
            last = f1_of(c);
            if last > 0.95 {
                within(t.elapsed(), 15 * 60, "overfit smoke")?;
                return Ok(format!(
                    "training-set F1 {last:.4} after {epoch} epochs (base 64, batch 4, lr 1e-3), {:.0}s",
                    t.elapsed().as_secs_f64()
                ));
            }
        }
    }
    Err(format!("F1 only {last:.4} after 500 epochs"))
}

/// Naive tolerant counts: explicit search of every pixel pair.
fn naive_confusion(pred: &Mask, gt: &Mask, margin: u32) -> Confusion {
    let (h, w) = (gt.height(), gt.width());
    let m2 = (margin * margin) as i64;
    let near = |a: &Mask, y: usize, x: usize| {
        (0..h).any(|yy| {
            (0..w).any(|xx| {
                let (dy, dx) = (yy as i64 - y as i64, xx as i64 - x as i64);
                a.get(yy, xx) && dy * dy + dx * dx <= m2
            })
        })
    };
    let mut c = Confusion::default();
    for y in 0..h {
        for x in 0..w {
            if pred.get(y, x) {
                if near(gt, y, x) {
                    c.tp += 1;
                } else {
                    c.fp += 1;
                }
            }
            if gt.get(y, x) && !near(pred, y, x) {
                c.fn_ += 1;
            }
        }
    }
    c
}

fn naive_threshold(p: &ProbMap, k: usize) -> Mask {
    Mask::from_fn(p.height(), p.width(), |y, x| p.get(y, x) as f64 >= grid_threshold(k))
}

fn metrics_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (n, size, margin) = (20, 16, 2);
    let mut probs = Vec::new();
    let mut gts = Vec::new();
    for _ in 0..n {
        let gt = Mask::from_fn(size, size, |_, _| rng.gen_bool(0.12));
        let data: Vec<f32> = (0..size * size)
            .map(|i| {
                let base = if gt.data()[i] == 1 { 0.6 } else { 0.3 };
                // some values land exactly on grid thresholds
                if rng.gen_bool(0.1) {
                    (rng.gen_range(1..=GRID_STEPS) as f64 / 1000.0) as f32
                } else {
                    (base + rng.gen_range(-0.35..0.35f32)).clamp(0.0, 1.0)
                }
            })
            .collect();
        probs.push(ProbMap::new(size, size, data).unwrap());
        gts.push(gt);
    }
    // brute force over every threshold
    let mut totals = vec![Confusion::default(); GRID_STEPS + 1];
    let mut per_image_best = vec![(1usize, f64::NEG_INFINITY); n];
    for (k, total) in totals.iter_mut().enumerate().skip(1) {
        for (i, (p, g)) in probs.iter().zip(&gts).enumerate() {
            let c = naive_confusion(&naive_threshold(p, k), g, margin);
            *total += c;
            let f = f1_of(c);
            if f > per_image_best[i].1 {
                per_image_best[i] = (k, f);
            }
        }
    }
    let mut best = (1usize, f64::NEG_INFINITY);
    for (k, c) in totals.iter().enumerate().skip(1) {
        let f = f1_of(*c);
        if f > best.1 {
            best = (k, f);
        }
    }
    let naive_ois = per_image_best.iter().map(|b| b.1).sum::<f64>() / n as f64;
    let (t_ods, f_ods) = ods(&probs, &gts, margin).map_err(|e| e.to_string())?;
    let f_ois = ois(&probs, &gts, margin).map_err(|e| e.to_string())?;
    ensure(t_ods == grid_threshold(best.0) && f_ods == best.1, || {
        format!("ODS ({t_ods}, {f_ods}) vs brute force ({}, {})", grid_threshold(best.0), best.1)
    })?;
    ensure(f_ois == naive_ois, || format!("OIS {f_ois} vs brute force {naive_ois}"))?;

    let mut pairs = 0;
    for trial in 0..40 {
        let density = [0.02, 0.05, 0.1, 0.3][trial % 4];
        let (h, w) = (rng.gen_range(4..24), rng.gen_range(4..24));
        let pred = Mask::from_fn(h, w, |_, _| rng.gen_bool(density));
        let gt = Mask::from_fn(h, w, |_, _| rng.gen_bool(density));
        for m in [0, 1, 2, 3, 5] {
            let fast = tolerant_confusion(&pred, &gt, m).map_err(|e| e.to_string())?;
            let slow = naive_confusion(&pred, &gt, m);
            ensure(fast == slow, || format!("trial {trial} margin {m}: {fast:?} vs {slow:?}"))?;
            pairs += 1;
        }
    }
    within(t.elapsed(), 120, "metrics oracle")?;
    Ok(format!(
        "ODS t={t_ods} F1={f_ods:.6} and OIS {f_ois:.6} equal brute force exactly; {pairs} tolerant_confusion cases match; {:.1}s",
        t.elapsed().as_secs_f64()
    ))
}

fn scheduler_and_adam() -> Outcome {
    let cfg = PlateauConfig {
        factor: 0.95,
        patience: 10,
        min_lr: 1e-6,
    };
    let mut s = PlateauState::new(1e-3);
    plateau_step(&mut s, 1.0, &cfg);
    let mut trace = Vec::new();
    for _ in 0..11 {
        plateau_step(&mut s, 1.0, &cfg);
        trace.push(s.lr);
    }
    ensure(trace[..10].iter().all(|&lr| lr == 1e-3), || format!("decayed too early: {trace:?}"))?;
    ensure((trace[10] - 0.00095).abs() < 1e-12, || format!("after 11 stagnant epochs lr = {}", trace[10]))?;
    let mut floor = PlateauState::new(1e-3);
    for _ in 0..5000 {
        plateau_step(&mut floor, 1.0, &cfg);
    }
    ensure(floor.lr == 1e-6, || format!("floor {}", floor.lr))?;

    let mut p = NetworkParams::<f64>::new();
    p.insert("w", Tensor4::scalar(0.5));
    let mut g = NetworkParams::<f64>::new();
    g.insert("w", Tensor4::scalar(1.0));
    let mut state = AdamState::new();
    adam_step(&mut p, &g, &mut state, 1e-3).map_err(|e| e.to_string())?;
    let step = p.get("w").unwrap().data()[0] - 0.5;
    let expected = -1e-3 / (1.0 + 1e-8);
    ensure((step - expected).abs() < 1e-12, || format!("first Adam step {step:e}, expected {expected:e}"))?;
    Ok(format!("lr 0.001 -> {} after 11 stagnant epochs, floor 1e-6; first Adam step {step:.12e}", trace[10]))
}

fn ablation_harness() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let items: Vec<_> = (0..5)
        .map(|i| {
            let (x, m) = crack_image(32, 48, 3, 300 + i);
            (format!("a{i}"), x, m)
        })
        .collect();
    dataio::write_dataset(dir.path(), &items).map_err(|e| e.to_string())?;
    let rates = DEFAULT_RATE_GROUPS
        .iter()
        .map(|g| g.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("|");
    let csv_path = dir.path().join("ablation.csv");
    let out = Command::new(env!("CARGO_BIN_EXE_uhdn"))
        .args(["ablate", "--dataset"])
        .arg(dir.path())
        .args(["--rates", &rates, "--epochs", "2", "--set", "base_channels=4", "--out"])
        .arg(&csv_path)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    let csv = std::fs::read_to_string(&csv_path).map_err(|e| e.to_string())?;
    check_ablation_csv(&csv)?;

    let names = variant_parameter_names(&NetworkConfig::default()).map_err(|e| e.to_string())?;
    let has = |v: &[String], prefix: &str| v.iter().any(|n| n.starts_with(prefix));
    let expected = [
        ("U-net", false, false),
        ("U-net + HF", false, true),
        ("U-net + MDM", true, false),
        ("U-HDN", true, true),
    ];
    for ((label, params), (want, mdm, hf)) in names.iter().zip(expected) {
        ensure(*label == want, || format!("variant order: {label} vs {want}"))?;
        ensure(has(params, "mdm.") == mdm && has(params, "bottleneck.") == !mdm, || {
            format!("{label}: middle block names wrong")
        })?;
        ensure(has(params, "side1.") == hf && has(params, "fuse.") == hf && has(params, "side5."), || {
            format!("{label}: side head names wrong")
        })?;
    }
    let distinct: std::collections::BTreeSet<&Vec<String>> = names.iter().map(|(_, p)| p).collect();
    ensure(distinct.len() == 4, || "variant parameter sets are not distinct".into())?;
    Ok(format!(
        "3 rate groups x 2 epochs -> well-formed CSV; 4 variant parameter sets audited; {:.1}s",
        t.elapsed().as_secs_f64()
    ))
}

fn check_ablation_csv(csv: &str) -> Result<(), String> {
    let mut lines = csv.lines();
    ensure(lines.next() == Some(CSV_HEADER), || format!("bad header in\n{csv}"))?;
    let rows: Vec<&str> = lines.collect();
    ensure(rows.len() == 3, || format!("expected 3 rows, got {}", rows.len()))?;
    for (row, group) in rows.iter().zip(DEFAULT_RATE_GROUPS) {
        let quoted = format!("\"{}\",", group.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(","));
        ensure(row.starts_with(&quoted), || format!("row {row} does not start with {quoted}"))?;
        let values: Vec<f64> = row[quoted.len()..]
            .split(',')
            .map(|v| v.parse::<f64>().map_err(|e| format!("{row}: {e}")))
            .collect::<Result<_, _>>()?;
        ensure(values.len() == 3 && values.iter().all(|v| (0.0..=1.0).contains(v)), || {
            format!("metrics out of range in {row}")
        })?;
    }
    Ok(())
}

fn full_scale() -> Option<String> {
    let root = std::env::var("UHDN_CFD_ROOT").ok()?;
    Some(format!("dataset found at {root}, but the full run is not executed by this suite"))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("gradient oracle", gradient_oracle),
        ("shape/coverage suite", shape_suite),
        ("dilation invariants", dilation_invariants),
        ("overfit smoke", overfit_smoke),
        ("metrics oracle", metrics_oracle),
        ("scheduler/optimizer contracts", scheduler_and_adam),
        ("ablation harness", ablation_harness),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    match full_scale() {
        Some(note) => println!("SKIP  full-scale CFD run (advisory): {note}"),
        None => println!("SKIP  full-scale CFD run (advisory): needs the CFD images and GPU-scale training time"),
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
