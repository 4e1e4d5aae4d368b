//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use deceptio::classifiers::{predict_scores, train, ClassifierKind, ClassifierSpec, FeatureMatrix};
use deceptio::data::{DescriptorBag, PcmSignal};
use deceptio::experiment::{run_experiment, run_experiment_with_splits, AucAggregation, ExperimentResult};
use deceptio::fisher::{encode_fisher, mean_block, variance_block};
use deceptio::folds::{grouped_kfold_identities, SplitFile, SplitSpec};
use deceptio::gmm::{fit_gmm_traced, EmConfig, GaussianMixture};
use deceptio::metrics::auc_pr;
use deceptio::mfcc::{extract_mfcc, frame_signal, log_mel_energies, mel_center_frequencies, MfccConfig};
use deceptio::synthetic::{generate, SyntheticConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    ensure(
        elapsed.as_secs_f64() < limit_secs as f64,
        format!("took {:.1} s, limit {limit_secs} s", elapsed.as_secs_f64()),
    )
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

// ---------------------------------------------------------------- 1

fn direct_fisher(w: &[f64], mu: &[Vec<f64>], var: &[Vec<f64>], xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let k = w.len();
    let d = mu[0].len();
    let t = xs.len() as f64;
    let density = |c: usize, x: &[f64]| -> f64 {
        (0..d)
            .map(|j| {
                (-(x[j] - mu[c][j]).powi(2) / (2.0 * var[c][j])).exp() / (2.0 * std::f64::consts::PI * var[c][j]).sqrt()
            })
            .product()
    };
    let mut gm = vec![vec![0.0; d]; k];
    let mut gs = vec![vec![0.0; d]; k];
    for x in xs {
        let joint: Vec<f64> = (0..k).map(|c| w[c] * density(c, x)).collect();
        let total: f64 = joint.iter().sum();
        for c in 0..k {
            let gamma = joint[c] / total;
            for j in 0..d {
                let z = (x[j] - mu[c][j]) / var[c][j].sqrt();
                gm[c][j] += gamma * z;
                gs[c][j] += gamma * (z * z - 1.0);
            }
        }
    }
    for c in 0..k {
        for j in 0..d {
            gm[c][j] /= t * w[c].sqrt();
            gs[c][j] /= t * (2.0 * w[c]).sqrt();
        }
    }
    (gm, gs)
}

fn fisher_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let k = rng.random_range(1..=3);
        let d = rng.random_range(1..=4);
        let t = rng.random_range(1..=20);
        let raw: Vec<f64> = (0..k).map(|_| 0.1 + rng.random::<f64>()).collect();
        let sum: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / sum).collect();
        let mu: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let var: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(0.3..2.3)).collect()).collect();
        let xs: Vec<Vec<f64>> = (0..t).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let gmm = GaussianMixture::new(d, w.clone(), mu.concat(), var.concat()).map_err(|e| e.to_string())?;
        let bag = DescriptorBag::from_rows(&xs).map_err(|e| e.to_string())?;
        let fv = encode_fisher(&gmm, &bag).map_err(|e| e.to_string())?;
        let (gm, gs) = direct_fisher(&w, &mu, &var, &xs);
        ensure(fv.values.len() == 2 * k * d, "wrong FV length")?;
        for c in 0..k {
            for (a, b) in fv.values[mean_block(d, c)].iter().zip(&gm[c]) {
                worst = worst.max((a - b).abs());
            }
            for (a, b) in fv.values[variance_block(d, k, c)].iter().zip(&gs[c]) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    ensure(worst <= 1e-10, format!("max deviation {worst:e}"))?;
    within(start.elapsed(), 10)?;
    Ok(format!("200 instances, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- 2

fn em_checks() -> Check {
    let start = Instant::now();
    let mut worst_drop = 0.0f64;
    for run in 0..50u64 {
        let k = [1usize, 2, 4, 8][run as usize % 4];
        let mut rng = ChaCha8Rng::seed_from_u64(100 + run);
        let d = rng.random_range(1..=4);
        let centers: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| rng.random_range(-4.0..4.0)).collect()).collect();
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|_| {
                let c = &centers[rng.random_range(0..3)];
                c.iter().map(|m| m + gauss(&mut rng)).collect()
            })
            .collect();
        let bag = DescriptorBag::from_rows(&rows).map_err(|e| e.to_string())?;
        let config = EmConfig {
            seed: run,
            max_iterations: 100,
            tolerance: 1e-9,
            ..EmConfig::default()
        };
        let fit = fit_gmm_traced(&bag, k, &config).map_err(|e| format!("run {run}: {e}"))?;
        for pair in fit.log_likelihoods.windows(2) {
            worst_drop = worst_drop.max(pair[0] - pair[1]);
        }
    }
    ensure(worst_drop <= 1e-8, format!("log-likelihood dropped by {worst_drop:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rows: Vec<[f64; 1]> = (0..1000).map(|i| [if i < 500 { -10.0 } else { 10.0 } + gauss(&mut rng)]).collect();
    let bag = DescriptorBag::from_rows(&rows).map_err(|e| e.to_string())?;
    let gmm = fit_gmm_traced(&bag, 2, &EmConfig::default()).map_err(|e| e.to_string())?.mixture;
    let mut means: Vec<(f64, f64)> = (0..2).map(|c| (gmm.mean(c)[0], gmm.weights()[c])).collect();
    means.sort_by(|a, b| a.0.total_cmp(&b.0));
    ensure(
        (means[0].0 + 10.0).abs() < 0.5 && (means[1].0 - 10.0).abs() < 0.5,
        format!("two-cluster means {:.3} {:.3}", means[0].0, means[1].0),
    )?;
    ensure(
        means.iter().all(|m| (m.1 - 0.5).abs() < 0.05),
        format!("two-cluster weights {:.3} {:.3}", means[0].1, means[1].1),
    )?;

    let xs: Vec<[f64; 1]> = (0..1000).map(|_| [gauss(&mut rng)]).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().map(|x| x[0]).sum::<f64>() / n;
    let var = xs.iter().map(|x| (x[0] - mean).powi(2)).sum::<f64>() / n;
    let one = fit_gmm_traced(&DescriptorBag::from_rows(&xs).map_err(|e| e.to_string())?, 1, &EmConfig::default())
        .map_err(|e| e.to_string())?
        .mixture;
    ensure(
        (one.mean(0)[0] - mean).abs() < 0.1 && (one.variance(0)[0] - var).abs() < 0.1,
        "single-component fit off the sample moments",
    )?;
    within(start.elapsed(), 60)?;
    Ok(format!(
        "50 runs, worst decrease {worst_drop:.1e}; means {:.3}/{:.3}, weights {:.3}/{:.3}",
        means[0].0, means[1].0, means[0].1, means[1].1
    ))
}

// ---------------------------------------------------------------- 3

/// Average precision by enumerating every distinct score as a threshold
/// and counting from scratch.
fn brute_force_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let total = labels.iter().filter(|&&l| l).count() as f64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let seen = scores.iter().filter(|&&s| s >= t).count();
        let tp = scores.iter().zip(labels).filter(|&(&s, &l)| s >= t && l).count();
        let recall = tp as f64 / total;
        ap += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
    }
    ap
}

fn auc_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut draws = 0;
    let mut with_ties = 0;
    while draws < 10_000 {
        let n = rng.random_range(2..=12);
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        let levels = if rng.random_bool(0.5) { rng.random_range(1..=4) } else { 1_000_000 };
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let distinct: BTreeSet<u64> = scores.iter().map(|s| s.to_bits()).collect();
        if distinct.len() < n {
            with_ties += 1;
        }
        let got = auc_pr(&scores, &labels).map_err(|e| e.to_string())?;
        let want = brute_force_ap(&scores, &labels);
        ensure(got == want, format!("scores {scores:?} labels {labels:?}: {got} vs {want}"))?;
        draws += 1;
    }
    within(start.elapsed(), 30)?;
    Ok(format!("10000 draws ({with_ties} with ties) match exactly"))
}

// ---------------------------------------------------------------- 4

fn mfcc_checks() -> Check {
    let start = Instant::now();
    let cfg = MfccConfig::default();
    let sr = 16000;
    let signal = |samples: Vec<f64>| PcmSignal { sample_rate: sr, samples };

    let frames = frame_signal(&signal(vec![0.0; 16000]), &cfg).map_err(|e| e.to_string())?;
    ensure(frames.len() == 98, format!("1 s gave {} frames", frames.len()))?;

    let silence = extract_mfcc(&signal(vec![0.0; 16000]), &cfg).map_err(|e| e.to_string())?;
    ensure(silence.len() == 98, "silence frame count")?;
    let c0 = (cfg.filter_count as f64).sqrt() * cfg.log_floor.ln();
    for row in silence.rows() {
        ensure((row[0] - c0).abs() < 1e-9 * c0.abs(), format!("silence c0 {} vs {c0}", row[0]))?;
        ensure(row[1..].iter().all(|v| v.abs() < 1e-9), "silence higher coefficients not zero")?;
    }

    let centers = mel_center_frequencies(&cfg, sr);
    for filter in [4usize, 10, 16, 22] {
        let f = centers[filter];
        let tone: Vec<f64> = (0..16000)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / sr as f64).sin())
            .collect();
        let energies = log_mel_energies(&signal(tone), &cfg).map_err(|e| e.to_string())?;
        for frame in &energies {
            let argmax = frame.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|p| p.0);
            ensure(argmax == Some(filter), format!("tone at {f:.1} Hz peaked in filter {argmax:?}"))?;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base: Vec<f64> = (0..16000).map(|_| rng.random_range(-0.2..0.2)).collect();
    let doubled: Vec<f64> = base.iter().map(|v| 2.0 * v).collect();
    let a = extract_mfcc(&signal(base), &cfg).map_err(|e| e.to_string())?;
    let b = extract_mfcc(&signal(doubled), &cfg).map_err(|e| e.to_string())?;
    let shift = (cfg.filter_count as f64).sqrt() * 4f64.ln();
    let mut worst = 0.0f64;
    for (ra, rb) in a.rows().zip(b.rows()) {
        worst = worst.max((rb[0] - ra[0] - shift).abs());
        for j in 1..ra.len() {
            worst = worst.max((rb[j] - ra[j]).abs());
        }
    }
    ensure(worst < 1e-6, format!("amplitude scaling deviation {worst:e}"))?;
    within(start.elapsed(), 10)?;
    Ok(format!("98 frames; silence, tone argmax, scaling (max deviation {worst:.1e})"))
}

// ---------------------------------------------------------------- 5

fn light_experiment(synth: &SyntheticConfig) -> deceptio::experiment::ExperimentConfig {
    let mut e = synth.experiment_config();
    e.folds = 10;
    e.em.max_iterations = 30;
    e.classifiers = vec![
        ClassifierSpec {
            c_grid: vec![0.1, 1.0],
            ..ClassifierSpec::new(ClassifierKind::LinearSvm)
        },
        ClassifierSpec::new(ClassifierKind::NaiveBayes),
    ];
    e
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_deceptio")
}

fn deceptio(args: &[&str]) -> Result<std::process::Output, String> {
    Command::new(bin()).args(args).output().map_err(|e| e.to_string())
}

fn leakage_guard(work: &Path) -> Check {
    let mut audited = 0usize;
    for seed in [0u64, 1, 2] {
        let synth = SyntheticConfig {
            identities: 40,
            seed,
            duration: (8.0, 12.0),
            ..SyntheticConfig::default()
        };
        let dataset = generate(&synth).map_err(|e| e.to_string())?;
        let data = dataset.to_video_data(&MfccConfig::default()).map_err(|e| e.to_string())?;
        let config = light_experiment(&synth);
        let result = run_experiment(&data, &config).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(result.folds.len() == 10, format!("seed {seed}: {} folds", result.folds.len()))?;
        let mut tested = BTreeSet::new();
        for f in &result.folds {
            let test_ids: BTreeSet<&str> = f.test.iter().map(|&i| data[i].identity_id.as_str()).collect();
            let train_ids: BTreeSet<&str> = (0..data.len())
                .filter(|i| !f.test.contains(i))
                .map(|i| data[i].identity_id.as_str())
                .collect();
            ensure(test_ids.is_disjoint(&train_ids), format!("seed {seed} fold {}: identity on both sides", f.fold))?;
            for kind in ["gmm/motion", "gmm/audio", "gmm/transcript", "detectors", "classifier/", "fusion/"] {
                ensure(
                    f.audited.iter().any(|a| a.starts_with(kind)),
                    format!("seed {seed} fold {}: no audited {kind}", f.fold),
                )?;
            }
            audited += f.audited.len();
            tested.extend(f.test.iter().copied());
        }
        ensure(tested.len() == data.len(), format!("seed {seed}: some videos never tested"))?;

        // The same data with a test video also on the training side must abort.
        let identities: Vec<&str> = data.iter().map(|v| v.identity_id.as_str()).collect();
        let mut splits = grouped_kfold_identities(&identities, 10, seed)
            .and_then(|p| p.splits_for(&identities))
            .map_err(|e| e.to_string())?;
        let leaked = splits[0].test[0];
        splits[0].train.push(leaked);
        splits[0].train.sort_unstable();
        let leak = run_experiment_with_splits(&data, &config, &splits[..1]);
        ensure(
            matches!(leak, Err(deceptio::Error::Leakage { .. })),
            format!("seed {seed}: corrupted split not rejected: {:?}", leak.err()),
        )?;
    }

    // Corrupted split file through the binary.
    let dir = work.join("leak");
    let d = dir.to_str().ok_or("non-UTF-8 path")?;
    let out = deceptio(&["synth", d, "--identities", "12", "--small"])?;
    ensure(out.status.success(), String::from_utf8_lossy(&out.stderr).to_string())?;
    let config = dir.join("config.toml");
    let c = config.to_str().ok_or("non-UTF-8 path")?;
    let out = deceptio(&["extract", "-c", c])?;
    ensure(out.status.success(), String::from_utf8_lossy(&out.stderr).to_string())?;
    let manifest = deceptio::data::load_manifest(dir.join("manifest.jsonl")).map_err(|e| e.to_string())?;
    let plan = grouped_kfold_identities(
        &manifest.records.iter().map(|r| r.identity_id.as_str()).collect::<Vec<_>>(),
        4,
        0,
    )
    .map_err(|e| e.to_string())?;
    let mut file = SplitFile::from_plan(&plan, &manifest).map_err(|e| e.to_string())?;
    let SplitSpec { train, test } = &mut file.folds[0];
    train.push(test[0].clone());
    let split_path = dir.join("corrupt.json");
    std::fs::write(&split_path, serde_json::to_string(&file).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let out = deceptio(&["run", "-c", c, "--fold-plan", split_path.to_str().unwrap(), "-o", dir.join("bad").to_str().unwrap()])?;
    let stderr = String::from_utf8_lossy(&out.stderr);
    ensure(
        out.status.code() == Some(3),
        format!("corrupted split exited with {:?}: {stderr}", out.status.code()),
    )?;
    ensure(stderr.contains("leakage"), format!("stderr lacks leakage message: {stderr}"))?;
    Ok(format!("3 seeds x 10 folds clean ({audited} audited objects); corrupted splits rejected, CLI exit 3"))
}

// ---------------------------------------------------------------- 6

fn held_out_auc(spec: &ClassifierSpec, train_x: &[Vec<f64>], train_y: &[bool], test_x: &[Vec<f64>], test_y: &[bool]) -> Result<(f64, Vec<f64>), String> {
    let model = train(spec, &FeatureMatrix::from_rows(train_x).map_err(|e| e.to_string())?, train_y).map_err(|e| e.to_string())?;
    let scores = predict_scores(&model, &FeatureMatrix::from_rows(test_x).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    Ok((auc_pr(&scores, test_y).map_err(|e| e.to_string())?, scores))
}

fn blobs(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let pos = i % 2 == 0;
        let c = if pos { 2.0 } else { -2.0 };
        x.push((0..4).map(|j| if j < 2 { c + 0.5 * gauss(rng) } else { gauss(rng) }).collect());
        y.push(pos);
    }
    (x, y)
}

/// Labels follow the sign of `x1 * x2`. The negative clusters sit outside
/// the positive ones in every direction, so no hyperplane can rank a pure
/// positive cluster first.
fn xor(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
    const POS: [(f64, f64); 2] = [(1.0, 1.0), (-1.0, -1.0)];
    const NEG: [(f64, f64); 4] = [(3.5, -0.5), (0.5, -3.5), (-3.5, 0.5), (-0.5, 3.5)];
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let pos = i % 2 == 0;
        let (a, b) = if pos { POS[(i / 2) % 2] } else { NEG[(i / 2) % 4] };
        x.push(vec![a + 0.3 * gauss(rng), b + 0.3 * gauss(rng)]);
        y.push(pos);
    }
    (x, y)
}

fn classifier_sanity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (tx, ty) = blobs(&mut rng, 120);
    let (vx, vy) = blobs(&mut rng, 120);
    let mut parts = Vec::new();
    for kind in ClassifierKind::ALL {
        let spec = ClassifierSpec::new(kind);
        let (auc, scores) = held_out_auc(&spec, &tx, &ty, &vx, &vy)?;
        ensure(auc >= 0.95, format!("{} reached {auc:.3} on separable data", kind.slug()))?;
        if kind == ClassifierKind::RandomForest {
            for s in &scores {
                let q = s * spec.tree_count as f64;
                ensure((q - q.round()).abs() < 1e-9, format!("forest score {s} not a multiple of 1/{}", spec.tree_count))?;
            }
        }
        parts.push(format!("{} {auc:.3}", kind.short_name()));
    }
    let (tx, ty) = xor(&mut rng, 200);
    let (vx, vy) = xor(&mut rng, 200);
    let (kernel, _) = held_out_auc(&ClassifierSpec::new(ClassifierKind::KernelSvm), &tx, &ty, &vx, &vy)?;
    let (linear, _) = held_out_auc(&ClassifierSpec::new(ClassifierKind::LinearSvm), &tx, &ty, &vx, &vy)?;
    ensure(kernel >= 0.9, format!("kernel SVM on XOR {kernel:.3}"))?;
    ensure(linear <= 0.6, format!("linear SVM on XOR {linear:.3}"))?;
    Ok(format!("{}; XOR kernel {kernel:.3}, linear {linear:.3}", parts.join(", ")))
}

// ---------------------------------------------------------------- 7 & 8

struct Synthetic {
    result: ExperimentResult,
    labels: Vec<bool>,
    elapsed: Duration,
}

fn synthetic_experiment() -> Result<Synthetic, String> {
    let start = Instant::now();
    let synth = SyntheticConfig {
        identities: 80,
        videos_per_identity: (2, 4),
        seed: 0,
        ..SyntheticConfig::default()
    };
    let dataset = generate(&synth).map_err(|e| e.to_string())?;
    let data = dataset.to_video_data(&MfccConfig::default()).map_err(|e| e.to_string())?;
    let result = run_experiment(&data, &synth.experiment_config()).map_err(|e| e.to_string())?;
    Ok(Synthetic {
        result,
        labels: data.iter().map(|v| v.label.is_positive()).collect(),
        elapsed: start.elapsed(),
    })
}

/// Mean AUC over the classifier suite, and the linear SVM's AUC, per row.
fn row_auc(s: &Synthetic, name: &str) -> Result<(f64, f64), String> {
    let grid = s.result.grid(&s.labels, AucAggregation::Pooled);
    let r = s.result.row_index(name).ok_or(format!("no row {name}"))?;
    let values: Vec<f64> = grid[r].iter().map(|v| v.ok_or(format!("{name}: undefined AUC"))).collect::<Result<_, _>>()?;
    let svm = s
        .result
        .classifier_index(ClassifierKind::LinearSvm)
        .map_or(f64::NAN, |c| values[c]);
    Ok((values.iter().sum::<f64>() / values.len() as f64, svm))
}

fn fusion_benefit(s: &Result<Synthetic, String>) -> Check {
    let s = s.as_ref().map_err(Clone::clone)?;
    let singles = ["IDT", "MicroExpression", "Transcript", "MFCC"];
    let single: Vec<(f64, f64)> = singles.iter().map(|n| row_auc(s, n)).collect::<Result<_, _>>()?;
    let (all, all_svm) = row_auc(s, "All Modalities")?;
    let max = single.iter().map(|v| v.0).fold(f64::MIN, f64::max);
    let mean = single.iter().map(|v| v.0).sum::<f64>() / single.len() as f64;
    ensure(all >= max - 0.01, format!("fused {all:.4} below best single {max:.4}"))?;
    ensure(all >= mean + 0.03, format!("fused {all:.4} not 0.03 above mean single {mean:.4}"))?;
    within(s.elapsed, 300)?;
    let svm_max = single.iter().map(|v| v.1).fold(f64::MIN, f64::max);
    Ok(format!(
        "suite mean: fused {all:.4}, best single {max:.4}, mean single {mean:.4}; L-SVM fused {all_svm:.4} vs best {svm_max:.4}; {:.0} s",
        s.elapsed.as_secs_f64()
    ))
}

fn two_level(s: &Result<Synthetic, String>) -> Check {
    let s = s.as_ref().map_err(Clone::clone)?;
    let (idt, idt_svm) = row_auc(s, "IDT")?;
    let (both, both_svm) = row_auc(s, "IDT+MicroExpression")?;
    ensure(both >= idt + 0.02, format!("IDT+MicroExpression {both:.4} vs IDT {idt:.4}"))?;
    Ok(format!(
        "suite mean: IDT {idt:.4} -> IDT+MicroExpression {both:.4} ({:+.4}); L-SVM {idt_svm:.4} -> {both_svm:.4}",
        both - idt
    ))
}

// ---------------------------------------------------------------- 9

fn determinism(work: &Path) -> Check {
    let dir = work.join("det");
    let d = dir.to_str().ok_or("non-UTF-8 path")?;
    let out = deceptio(&["synth", d, "--identities", "20", "--seed", "5"])?;
    ensure(out.status.success(), String::from_utf8_lossy(&out.stderr).to_string())?;
    let c = dir.join("config.toml");
    let c = c.to_str().ok_or("non-UTF-8 path")?;
    let out = deceptio(&["extract", "-c", c])?;
    ensure(out.status.success(), String::from_utf8_lossy(&out.stderr).to_string())?;
    let mut reports = Vec::new();
    for (run, workers) in [("a", "1"), ("b", "2")] {
        let o = dir.join(run);
        let out = deceptio(&["run", "-c", c, "--workers", workers, "-o", o.to_str().unwrap()])?;
        ensure(out.status.success(), String::from_utf8_lossy(&out.stderr).to_string())?;
        reports.push(std::fs::read(o.join("report.json")).map_err(|e| e.to_string())?);
    }
    ensure(reports[0] == reports[1], "report.json differs between runs")?;
    Ok(format!("two runs (1 and 2 workers) byte-identical, {} bytes", reports[0].len()))
}

fn main() {
    let work = tempfile::tempdir().expect("temporary directory");
    let mut failed = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Check| {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} {name}: PASS ({secs:.1} s) {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({secs:.1} s) {why}");
            }
        }
    };
    report(1, "fisher oracle", &mut fisher_oracle);
    report(2, "EM monotonicity", &mut em_checks);
    report(3, "AUC oracle", &mut auc_oracle);
    report(4, "MFCC analytics", &mut mfcc_checks);
    report(5, "leakage guard", &mut || leakage_guard(work.path()));
    report(6, "classifier sanity", &mut classifier_sanity);
    let synthetic = synthetic_experiment();
    report(7, "fusion benefit", &mut || fusion_benefit(&synthetic));
    report(8, "two-level pipeline", &mut || two_level(&synthetic));
    report(9, "determinism", &mut || determinism(work.path()));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
