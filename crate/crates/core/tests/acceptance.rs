//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{brute_split, central_diff, close, continuous_dataset, grid_dataset, normal, rel_err, OracleCost};
use gbfs::baseline::{lambda_grid, smooth_gradient, smooth_loss, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use gbfs::data::{make_synthetic_bags, make_synthetic_box, make_synthetic_xor, BaggedDataConfig};
use gbfs::{
    best_split, capped_l1, feature_weights, l1lr_train, lambda_max, load_bags, load_csv,
    load_libsvm, negative_gradient, split, train, train_unpenalized, BoostingRun, CostPolicy,
    Dataset, FeatureState, GbfsConfig, LabelColumn,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn gbfs_config(mu: f64, iterations: usize, depth: usize) -> GbfsConfig {
    GbfsConfig {
        mu,
        iterations,
        depth,
        learning_rate: 0.1,
        ..Default::default()
    }
}

/// L1-LR with λ picked on an 80/20 split of `train` over a 10-point grid,
/// then refit on all of `train`. Returns (λ, test error).
fn tuned_l1lr(train_set: &Dataset, test: &Dataset, seed: u64) -> (f64, f64) {
    let (fit, val) = split(train_set, 0.8, seed).unwrap();
    let grid = lambda_grid(&fit, 10, 1e-3).unwrap();
    let mut best = (f64::INFINITY, grid[0]);
    for &lambda in &grid {
        let m = l1lr_train(&fit, lambda, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        let err = m.error_rate(&val).unwrap();
        if err < best.0 {
            best = (err, lambda);
        }
    }
    let model = l1lr_train(train_set, best.1, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
    (best.1, model.error_rate(test).unwrap())
}

/// GBFS and tuned L1-LR on a three-feature set with a 90/10 split.
fn three_feature_run(ds: &Dataset) -> (Vec<usize>, f64, f64) {
    let (tr, te) = split(ds, 0.9, 13).unwrap();
    let model = train(&tr, &gbfs_config(1.0, 200, 2), FeatureState::uniform(3)).unwrap();
    let (_, lr_err) = tuned_l1lr(&tr, &te, 13);
    (model.selected_features().to_vec(), model.error_rate(&te).unwrap(), lr_err)
}

fn names(selected: &[usize]) -> String {
    let all = ["x", "y", "z"];
    let v: Vec<&str> = selected.iter().map(|&f| all[f]).collect();
    format!("{{{}}}", v.join(", "))
}

fn criterion_1() -> Outcome {
    let ds = make_synthetic_xor(1000, 13).unwrap();
    let (selected, gbfs_err, lr_err) = three_feature_run(&ds);
    let pass = selected == [0, 1] && gbfs_err <= 0.02 && lr_err >= 0.40;
    outcome(
        pass,
        format!(
            "xor n=1000 seed 13: GBFS selects {} with test error {gbfs_err:.3}; tuned L1-LR test error {lr_err:.3}",
            names(&selected)
        ),
    )
}

fn supplement_1() -> String {
    let ds = make_synthetic_box(1000, 13).unwrap();
    let (selected, gbfs_err, lr_err) = three_feature_run(&ds);
    format!(
        "box n=1000 seed 13: GBFS selects {} with test error {gbfs_err:.3}; tuned L1-LR test error {lr_err:.3}",
        names(&selected)
    )
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn criterion_2() -> Outcome {
    let sets = [
        ("box n=1000", make_synthetic_box(1000, 13).unwrap()),
        ("continuous n=2000 d=8", continuous_dataset(13, 2000, 8)),
    ];
    let mut details = Vec::new();
    let mut pass = true;
    for (name, ds) in &sets {
        let cfg = gbfs_config(0.0, 100, 4);
        let a = train(ds, &cfg, FeatureState::uniform(ds.n_features())).unwrap();
        let b = train_unpenalized(ds, &cfg).unwrap();
        let trees = a.trees() == b.trees();
        let margins = same_bits(&a.margins(ds).unwrap(), &b.margins(ds).unwrap());
        pass &= trees && margins && a.len() == b.len();
        details.push(format!("{name}: {} trees, trees equal {trees}, margins bit-equal {margins}", a.len()));
    }
    outcome(pass, details.join("; "))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mus = [0.0, 0.1, 10.0];
    let mut mismatches = 0;
    let mut splits = 0;
    let mut worst = 0.0f64;
    for k in 0..200 {
        let n = rng.gen_range(8..=64);
        let d = rng.gen_range(1..=6);
        let mu = mus[k % 3];
        let ds = grid_dataset(&mut rng, n, d);
        let g: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let omega: BTreeSet<usize> = (0..d).filter(|_| rng.gen_bool(0.3)).collect();
        let tree_used: BTreeSet<usize> = (0..d).filter(|_| rng.gen_bool(0.2)).collect();
        let state = FeatureState::uniform(d).mark_used(omega.iter().copied()).unwrap();
        let rows: Vec<usize> = (0..n).collect();
        let got = best_split(&rows, &g, &ds, &state, &tree_used, mu).unwrap();
        let cost = OracleCost::Uniform;
        let want = brute_split(&rows, &g, &ds, &|f| cost.cost(&omega, f), &tree_used, mu, 1);
        match (got, want) {
            (None, None) => {}
            (Some(s), Some(o)) => {
                splits += 1;
                let diff = (s.gain - o.net).abs() / o.net.abs().max(1.0);
                worst = worst.max(diff);
                if s.feature != o.feature || s.threshold != o.threshold || !close(s.gain, o.net, 1e-12) {
                    mismatches += 1;
                }
            }
            _ => mismatches += 1,
        }
    }
    outcome(
        mismatches == 0,
        format!("200 instances, {splits} with a split, {mismatches} mismatches, max gain deviation {worst:.1e}"),
    )
}

fn criterion_4() -> Outcome {
    let n = 32;
    let ds = continuous_dataset(13, n, 5);
    let mu = n as f64 / 2.0 + 0.5;
    // Bound check on the first gradient.
    let g = negative_gradient(ds.labels(), &vec![0.0; n]).unwrap();
    let half_sq: f64 = 0.5 * g.iter().map(|v| v * v).sum::<f64>();
    let rows: Vec<usize> = (0..n).collect();
    let raw = brute_split(&rows, &g, &ds, &|_| 0.0, &BTreeSet::new(), 0.0, 1).map_or(0.0, |s| s.raw);
    let bound = raw <= half_sq && half_sq <= n as f64 / 2.0;
    let model = train(&ds, &gbfs_config(mu, 200, 4), FeatureState::uniform(5)).unwrap();
    let leaves = model.trees().iter().all(|t| t.is_leaf());
    let none = model.selected_features().is_empty();
    outcome(
        bound && leaves && none,
        format!(
            "mu {mu}: best raw gain {raw:.4} <= half sum g^2 {half_sq:.4} <= n/2; {} trees all leaves {leaves}, selected {:?}",
            model.len(),
            model.selected_features()
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let h = 1e-5;
    let mut worst_g = 0.0f64;
    for _ in 0..100 {
        let y = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let m: f64 = rng.gen_range(-6.0..6.0);
        let g = negative_gradient(&[y], &[m]).unwrap()[0];
        let fd = -central_diff(|t| (1.0 + (-y * t).exp()).ln(), m, h);
        worst_g = worst_g.max(rel_err(g, fd));
    }
    let ds = continuous_dataset(14, 60, 5);
    let mut worst_lr = 0.0f64;
    for _ in 0..100 {
        let w: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: f64 = rng.gen_range(-1.0..1.0);
        let (gw, gb) = smooth_gradient(&ds, &w, b).unwrap();
        let mut analytic = gw.clone();
        analytic.push(gb);
        let mut numeric = Vec::with_capacity(6);
        for f in 0..5 {
            numeric.push(central_diff(
                |t| {
                    let mut v = w.clone();
                    v[f] = t;
                    smooth_loss(&ds, &v, b).unwrap()
                },
                w[f],
                h,
            ));
        }
        numeric.push(central_diff(|t| smooth_loss(&ds, &w, t).unwrap(), b, h));
        let err: f64 = analytic.iter().zip(&numeric).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst_lr = worst_lr.max(err / norm);
    }
    outcome(
        worst_g <= 1e-6 && worst_lr <= 1e-6,
        format!("max relative error: boosting gradient {worst_g:.1e}, L1-LR gradient {worst_lr:.1e}"),
    )
}

fn criterion_6() -> Outcome {
    let ds = continuous_dataset(15, 400, 12);
    let alpha = 0.1;
    let model = train(&ds, &gbfs_config(0.3, 100, 3), FeatureState::uniform(12)).unwrap();
    let mut prev = 0.0;
    let mut worst = 0.0f64;
    for t in 1..=model.len() {
        let q = capped_l1(&feature_weights(&model.truncated(t)), alpha).unwrap();
        let newly = model.history()[t - 1].newly_selected.len() as f64;
        worst = worst.max(((q - prev) - alpha * newly).abs());
        prev = q;
    }
    outcome(
        model.len() == 100 && worst <= 1e-12,
        format!(
            "{} iterations, {} features selected, max deviation {worst:.1e}",
            model.len(),
            model.selected_features().len()
        ),
    )
}

/// Bagged data used for the bag criterion: the default layout with 250
/// samples and 30% label noise.
fn bag_config() -> BaggedDataConfig {
    BaggedDataConfig {
        n: 250,
        label_noise: 0.3,
        ..Default::default()
    }
}

fn criterion_7() -> Outcome {
    let data_cfg = bag_config();
    let cfg = gbfs_config(1.0, 200, 2);
    let mut pass = true;
    let mut per_seed = Vec::new();
    for seed in 1000..1005 {
        let (ds, bags) = make_synthetic_bags(&data_cfg, seed).unwrap();
        let d = ds.n_features();
        let bag_state = FeatureState::new(d, CostPolicy::Bags(bags.clone())).unwrap();
        let with_bags = train(&ds, &cfg, bag_state).unwrap();
        let uniform = train(&ds, &cfg, FeatureState::uniform(d)).unwrap();
        let nb = bags.bags_touched(with_bags.selected_features()).len();
        let nu = bags.bags_touched(uniform.selected_features()).len();
        pass &= nb <= 2 && nu >= 3;
        per_seed.push(format!("seed {seed}: bags {nb}, uniform {nu}"));
    }
    outcome(pass, format!("bags touched (Bags <= 2, Uniform >= 3): {}", per_seed.join("; ")))
}

fn colon_check() -> Option<Outcome> {
    let data = std::env::var("GBFS_COLON_DATA").ok()?;
    let bags = std::env::var("GBFS_COLON_BAGS").ok()?;
    let path = Path::new(&data);
    let ds = match path.extension().and_then(|e| e.to_str()) {
        Some("libsvm" | "svm") => load_libsvm(path, None),
        _ => load_csv(path, &LabelColumn::Last),
    };
    let ds = match ds {
        Ok(ds) => ds,
        Err(e) => return Some(outcome(false, format!("cannot load colon data: {e}"))),
    };
    let bags = match load_bags(&bags, ds.n_features()) {
        Ok(b) => b,
        Err(e) => return Some(outcome(false, format!("cannot load colon bags: {e}"))),
    };
    // Mean over ten 49/13 splits; one split alone moves in 7.7% steps.
    let mut errors = Vec::new();
    for seed in 0..10 {
        let (tr, te) = split(&ds, 0.8, seed).unwrap();
        let state = FeatureState::new(ds.n_features(), CostPolicy::Bags(bags.clone())).unwrap();
        let model = train(&tr, &gbfs_config(1.0, 200, 4), state).unwrap();
        errors.push(model.error_rate(&te).unwrap());
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    Some(outcome(
        (mean - 0.1538).abs() <= 0.08,
        format!("colon mean test error {mean:.4} over 10 splits (target 0.1538 +/- 0.08)"),
    ))
}

/// Partial derivatives of the smooth loss at `w = 0` with the optimal
/// intercept, on standardized features, computed from scratch.
fn zero_point_gradient(ds: &Dataset) -> Vec<f64> {
    let n = ds.n_samples() as f64;
    let pos = ds.labels().iter().filter(|&&y| y > 0.0).count() as f64;
    let b = (pos / (n - pos)).ln();
    (0..ds.n_features())
        .map(|f| {
            let col = ds.column(f);
            let mean = col.iter().sum::<f64>() / n;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            col.iter()
                .zip(ds.labels())
                .map(|(v, y)| {
                    let z = if sd > 0.0 { (v - mean) / sd } else { 0.0 };
                    -y * z / (1.0 + (y * b).exp())
                })
                .sum()
        })
        .collect()
}

fn criterion_8() -> Outcome {
    let mut pass = true;
    let mut checked = 0;
    let mut worst_ratio = 0.0f64;
    for seed in 0..10 {
        let ds = continuous_dataset(100 + seed, 120, 6);
        let top = lambda_max(&ds).unwrap();
        let grad = zero_point_gradient(&ds);
        for scale in [1.0, 1.5, 4.0] {
            let lambda = top * scale;
            let model = l1lr_train(&ds, lambda, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
            let zero = model.weights.iter().all(|&w| w == 0.0);
            let ratio = grad.iter().map(|g| g.abs()).fold(0.0, f64::max) / lambda;
            worst_ratio = worst_ratio.max(ratio);
            pass &= zero && ratio <= 1.0 + 1e-9;
            checked += 1;
        }
        // Just below the threshold the solution must leave zero.
        let below = l1lr_train(&ds, 0.9 * top, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        pass &= below.weights.iter().any(|&w| w != 0.0);
    }
    outcome(
        pass,
        format!("{checked} fits at lambda >= lambda_max all zero; max |grad| / lambda = {worst_ratio:.6}"),
    )
}

fn criterion_9() -> Outcome {
    let ds = make_synthetic_box(1000, 13).unwrap();
    let full = train(&ds, &gbfs_config(1.0, 100, 4), FeatureState::uniform(3)).unwrap();
    let first = train(&ds, &gbfs_config(1.0, 50, 4), FeatureState::uniform(3)).unwrap();
    let mut run = BoostingRun::resume(&ds, gbfs_config(1.0, 100, 4), FeatureState::uniform(3), first).unwrap();
    run.advance(50).unwrap();
    let resumed_margins = run.margins().to_vec();
    let resumed = run.into_ensemble();
    let equal = resumed == full;
    let margins = same_bits(&resumed_margins, &full.margins(&ds).unwrap());
    outcome(
        equal && margins,
        format!("{} trees; ensembles equal {equal}, margins bit-equal {margins}", resumed.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("synthetic nonlinearity", criterion_1, Duration::from_secs(10)),
        ("zero-mu equivalence", criterion_2, Duration::from_secs(30)),
        ("split-finder oracle", criterion_3, Duration::from_secs(60)),
        ("degenerate penalty", criterion_4, Duration::from_secs(1)),
        ("gradient checks", criterion_5, Duration::from_secs(1)),
        ("capped-l1 correspondence", criterion_6, Duration::from_secs(10)),
        ("bag-structured selection", criterion_7, Duration::from_secs(60)),
        ("lambda_max zeroing", criterion_8, Duration::from_secs(1)),
        ("resume equivalence", criterion_9, Duration::from_secs(10)),
    ];
    let mut failed = 0;
    for (k, (name, check, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *limit;
        let pass = result.pass && in_time;
        failed += usize::from(!pass);
        let timing = if in_time {
            format!("{:.2}s", elapsed.as_secs_f64())
        } else {
            format!("{:.2}s, over the {}s limit", elapsed.as_secs_f64(), limit.as_secs())
        };
        println!(
            "{} [{}] {name}: {} ({timing})",
            if pass { "PASS" } else { "FAIL" },
            k + 1,
            result.detail
        );
        if k == 0 {
            println!("INFO [1] same run on the box generator: {}", supplement_1());
        }
        if k == 6 {
            match colon_check() {
                Some(c) => {
                    failed += usize::from(!c.pass);
                    println!("{} [7] colon: {}", if c.pass { "PASS" } else { "FAIL" }, c.detail);
                }
                None => println!("SKIP [7] colon: set GBFS_COLON_DATA and GBFS_COLON_BAGS to run"),
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
    println!("all acceptance checks passed");
}
