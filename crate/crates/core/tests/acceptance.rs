//! Acceptance criteria 1-10. Each test prints one `criterion N: PASS|FAIL`
//! line before asserting.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use fingerspell::dataset::{self, LabelRow, SplitMode};
use fingerspell::dbn::{self, Dbn, LabeledSet, SupervisedTrainConfig};
use fingerspell::eval::{self, EvalReport};
use fingerspell::features::{self, FeatureExtractor, FeatureKind, FeatureMatrix, PreprocessConfig};
use fingerspell::imaging::{DepthImage, IntensityImage, Raster};
use fingerspell::rbm::{self, Rbm, RbmTrainConfig};
use fingerspell::{Error, Letter, NUM_CLASSES};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, pass: bool, detail: impl std::fmt::Display) {
    println!("criterion {n}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

// ---------------------------------------------------------------- 1 and 2

const T: u16 = 120;

/// A random hand: a filled ellipse of depths within `T` of `base`, a few
/// holes, and a few pixels beyond the envelope; the rest reads zero.
fn random_hand(rng: &mut ChaCha8Rng) -> (DepthImage, IntensityImage) {
    let w = rng.random_range(32..72);
    let h = rng.random_range(32..72);
    let base: u16 = rng.random_range(400..2000);
    let (cx, cy) = (rng.random_range(0.3..0.7) * w as f64, rng.random_range(0.3..0.7) * h as f64);
    let (rx, ry) = (rng.random_range(4.0..w as f64 / 2.5), rng.random_range(4.0..h as f64 / 2.5));
    let mut depth = vec![0u16; w * h];
    let mut intensity = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            intensity[i] = rng.random();
            let r2 = ((x as f64 - cx) / rx).powi(2) + ((y as f64 - cy) / ry).powi(2);
            if r2 <= 1.0 && rng.random::<f64>() > 0.03 {
                depth[i] = base + rng.random_range(0..=T + 30);
            }
        }
    }
    let c = (cy as usize) * w + cx as usize;
    depth[c] = base;
    (
        DepthImage::new(w, h, depth).unwrap(),
        IntensityImage::from_u8(w, h, &intensity).unwrap(),
    )
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn criterion_01_feature_invariance() {
    let start = Instant::now();
    let ex = FeatureExtractor::default();
    let cfg = PreprocessConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut offset_ok, mut background_ok, mut nesting_ok) = (0, 0, 0);
    let trials = 1000;
    for _ in 0..trials {
        let (depth, intensity) = random_hand(&mut rng);
        let f = ex.extract(FeatureKind::Combined, &depth, &intensity).unwrap();

        let k: u16 = rng.random_range(1..5000);
        let shifted = DepthImage::new(
            depth.width(),
            depth.height(),
            depth.data().iter().map(|&v| if v > 0 { v + k } else { 0 }).collect(),
        )
        .unwrap();
        let g = ex.extract(FeatureKind::Combined, &shifted, &intensity).unwrap();
        offset_ok += usize::from(bits(f.values()) == bits(g.values()));

        let d = depth.data().iter().copied().filter(|&v| v > 0).min().unwrap();
        let far: Vec<u16> = depth
            .data()
            .iter()
            .map(|&v| {
                if v == 0 && rng.random::<f64>() < 0.7 {
                    rng.random_range(d + T + 1..=d + T + 3000)
                } else {
                    v
                }
            })
            .collect();
        let cluttered = DepthImage::new(depth.width(), depth.height(), far).unwrap();
        let g = ex.extract(FeatureKind::Combined, &cluttered, &intensity).unwrap();
        background_ok += usize::from(bits(f.values()) == bits(g.values()));

        let pre = features::preprocess(&depth, &intensity, &cfg).unwrap();
        let stack = features::depth_layers(&pre.depth, cfg.layers, cfg.max_hand_depth_mm);
        let nested = stack.layers().windows(2).all(|pair| {
            pair[0].data().iter().zip(pair[1].data()).all(|(&a, &b)| a <= b)
        });
        nesting_ok += usize::from(nested);
    }
    let elapsed = start.elapsed();
    let pass = offset_ok == trials && background_ok == trials && nesting_ok == trials && elapsed < Duration::from_secs(60);
    report(
        1,
        pass,
        format!(
            "{trials} images: offset {offset_ok}, background {background_ok}, nesting {nesting_ok}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_layer_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let trials = 200;
    let mut matches = 0;
    for _ in 0..trials {
        let (w, h) = (rng.random_range(1..12), rng.random_range(1..12));
        let n = rng.random_range(1..10usize);
        let t: u16 = rng.random_range(1..400);
        let data: Vec<u16> = (0..w * h)
            .map(|_| if rng.random::<f64>() < 0.2 { 0 } else { rng.random_range(1..=t + 20) })
            .collect();
        let img = DepthImage::new(w, h, data.clone()).unwrap();
        let stack = features::depth_layers(&img, n, t);
        // v <= (l-1) t / n + 1  <=>  v n <= (l-1) t + n, in integers
        let exact = (1..=n).all(|l| {
            let layer = &stack.layers()[l - 1];
            data.iter().zip(layer.data()).all(|(&v, &bit)| {
                let inside = v != 0 && (v as u64) * (n as u64) <= (l as u64 - 1) * t as u64 + n as u64;
                (bit == 1) == inside
            })
        });
        matches += usize::from(exact && stack.len() == n);
    }
    let pass = matches == trials;
    report(2, pass, format!("{matches}/{trials} random images match the per-pixel oracle"));
    assert!(pass);
}

// ---------------------------------------------------------------- 3

fn toy_network(rng: &mut ChaCha8Rng) -> Dbn {
    let layer = |v: usize, h: usize, rng: &mut ChaCha8Rng| {
        let mut r = Rbm::random(v, h, 0.8, rng);
        r.hidden_bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        r.visible_bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        r
    };
    let rbms = vec![layer(6, 4, rng), layer(4, 3, rng)];
    Dbn::new(rbms, 0.8, rng).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[test]
fn criterion_03_gradient_check() {
    const EPS: f64 = 1e-4;
    const TOL: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let net = toy_network(&mut rng);
    let x = Array2::from_shape_fn((5, 6), |_| rng.random_range(0.0..1.0));
    let y: Vec<usize> = (0..5).map(|_| rng.random_range(0..NUM_CLASSES)).collect();
    let mut one_hot = Array2::zeros((5, NUM_CLASSES));
    for (r, &c) in y.iter().enumerate() {
        one_hot[[r, c]] = 1.0;
    }
    let numeric = |perturb: &dyn Fn(&mut Dbn, f64)| {
        let mut plus = net.clone();
        perturb(&mut plus, EPS);
        let mut minus = net.clone();
        perturb(&mut minus, -EPS);
        (plus.loss(x.view(), &y).unwrap() - minus.loss(x.view(), &y).unwrap()) / (2.0 * EPS)
    };
    let mut worst: f64 = 0.0;
    let mut checked = 0;

    // stage 2: translation parameters from top activations
    let top = net.hidden_activations(x.view()).unwrap().pop().unwrap();
    let g2 = net.translation_gradients(top.view(), one_hot.view());
    for ((i, j), &a) in g2.weights.indexed_iter() {
        worst = worst.max(rel_err(a, numeric(&|m, e| m.translation_weights[[i, j]] += e)));
        checked += 1;
    }
    for (j, &a) in g2.bias.indexed_iter() {
        worst = worst.max(rel_err(a, numeric(&|m, e| m.translation_bias[j] += e)));
        checked += 1;
    }

    // stage 3: every parameter through the whole stack
    let (loss, g3) = net.gradients(x.view(), one_hot.view()).unwrap();
    assert!((loss - net.loss(x.view(), &y).unwrap()).abs() < 1e-12);
    for (k, (gw, gb)) in g3.layers.iter().enumerate() {
        for ((i, j), &a) in gw.indexed_iter() {
            worst = worst.max(rel_err(a, numeric(&|m, e| m.rbm_layers[k].weights[[i, j]] += e)));
            checked += 1;
        }
        for (j, &a) in gb.indexed_iter() {
            worst = worst.max(rel_err(a, numeric(&|m, e| m.rbm_layers[k].hidden_bias[j] += e)));
            checked += 1;
        }
    }
    for ((i, j), &a) in g3.translation_weights.indexed_iter() {
        worst = worst.max(rel_err(a, numeric(&|m, e| m.translation_weights[[i, j]] += e)));
        checked += 1;
    }
    for (j, &a) in g3.translation_bias.indexed_iter() {
        worst = worst.max(rel_err(a, numeric(&|m, e| m.translation_bias[j] += e)));
        checked += 1;
    }
    let pass = worst <= TOL;
    report(3, pass, format!("{checked} gradients, worst relative error {worst:.2e}, tolerance {TOL:.0e}"));
    assert!(pass);
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_04_cd1_sanity() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let templates: Vec<Vec<f64>> = (0..16)
        .map(|_| (0..64).map(|_| f64::from(rng.random::<bool>())).collect())
        .collect();
    let data = Array2::from_shape_fn((500, 64), |(r, c)| templates[r % 16][c]);
    let cfg = RbmTrainConfig {
        epochs: 60,
        ..RbmTrainConfig::default()
    };
    let mut errors = Vec::new();
    let a = rbm::train_rbm_logged(data.view(), 32, &cfg, |e| errors.push(e.reconstruction_error)).unwrap();
    let b = rbm::train_rbm(data.view(), 32, &cfg).unwrap();
    let first = errors[0];
    let last = *errors.last().unwrap();
    let same = [(&a.weights, &b.weights)]
        .iter()
        .all(|(x, y)| x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()))
        && a.visible_bias.iter().zip(&b.visible_bias).all(|(p, q)| p.to_bits() == q.to_bits())
        && a.hidden_bias.iter().zip(&b.hidden_bias).all(|(p, q)| p.to_bits() == q.to_bits());
    let pass = last < 0.3 * first && same;
    report(
        4,
        pass,
        format!(
            "epoch 1 error {first:.4}, final {last:.4} after {} epochs ({:.1}%), repeat identical: {same}",
            errors.len(),
            100.0 * last / first
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_05_frozen_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let x = Array2::from_shape_fn((96, 20), |_| f64::from(rng.random::<bool>()));
    let labels: Vec<usize> = (0..96).map(|i| i % NUM_CLASSES).collect();
    let cfg = RbmTrainConfig {
        epochs: 5,
        batch_size: 16,
        ..RbmTrainConfig::default()
    };
    let rbms = dbn::pretrain(x.view(), &[12, 8], &[cfg], |_, _| {}).unwrap();
    let net = Dbn::new(rbms, 0.01, &mut rng).unwrap();
    let train = LabeledSet::new(x.clone(), labels).unwrap();
    // no validation set: all epochs run and the last parameters are kept
    let valid = LabeledSet::new(Array2::zeros((0, 20)), Vec::new()).unwrap();
    let mut sup = SupervisedTrainConfig::default();
    sup.stage2.epochs = 15;
    sup.stage2.batch_size = 8;
    let trained = dbn::train_translation_layer(&net, &train, &valid, &sup, |_| {}).unwrap();
    let dump = |d: &Dbn| -> Vec<u8> {
        d.rbm_layers
            .iter()
            .flat_map(|r| r.weights.iter().chain(&r.visible_bias).chain(&r.hidden_bias).copied())
            .flat_map(f64::to_le_bytes)
            .collect()
    };
    let (before, after) = (dump(&net), dump(&trained));
    let differing = before.iter().zip(&after).filter(|(a, b)| a != b).count();
    let moved = trained.translation_weights != net.translation_weights;
    let pass = differing == 0 && before.len() == after.len() && moved;
    report(
        5,
        pass,
        format!("{} RBM bytes compared, {differing} differ; translation layer changed: {moved}", before.len()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6 and 7

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fingerspell"))
}

fn fingerspell(args: &[&str], cwd: &Path) {
    let out = bin().args(args).current_dir(cwd).output().unwrap();
    assert!(
        out.status.success(),
        "fingerspell {args:?} failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

const TRAIN_FLAGS: [&str; 8] = [
    "--layer-sizes",
    "200,100,50",
    "--rbm-epochs",
    "20",
    "--stage2-epochs",
    "50",
    "--stage3-epochs",
    "20",
];

struct EndToEnd {
    root: PathBuf,
    combined: EvalReport,
    elapsed: Duration,
}

fn read_report(path: &Path) -> EvalReport {
    EvalReport::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// gen-synthetic, extract combined, train and eval allseen, timed.
fn end_to_end() -> &'static EndToEnd {
    static RUN: OnceLock<EndToEnd> = OnceLock::new();
    RUN.get_or_init(|| {
        let root = tempfile::tempdir().unwrap().keep();
        let start = Instant::now();
        fingerspell(&["--seed", "7", "gen-synthetic", "--users", "3", "--per-class", "40", "--dest", "data"], &root);
        let common = ["--seed", "7", "--manifest", "data/manifest.csv", "--out-dir", "combined"];
        fingerspell(&[&common[..], &["extract"]].concat(), &root);
        fingerspell(&[&common[..], &TRAIN_FLAGS[..], &["train"]].concat(), &root);
        fingerspell(&[&common[..], &["eval"]].concat(), &root);
        let elapsed = start.elapsed();
        EndToEnd {
            combined: read_report(&root.join("combined/report.json")),
            root,
            elapsed,
        }
    })
}

#[test]
fn criterion_06_end_to_end_synthetic() {
    let run = end_to_end();
    let (recall, precision) = (run.combined.macro_recall.unwrap(), run.combined.macro_precision.unwrap());

    let unseen = ["--seed", "7", "--manifest", "data/manifest.csv", "--out-dir", "unseen", "--split", "unseen"];
    std::fs::create_dir_all(run.root.join("unseen")).unwrap();
    for f in ["features.bin", "labels.csv"] {
        std::fs::copy(run.root.join("combined").join(f), run.root.join("unseen").join(f)).unwrap();
    }
    fingerspell(&[&unseen[..], &TRAIN_FLAGS[..], &["train"]].concat(), &run.root);
    fingerspell(&[&unseen[..], &["eval"]].concat(), &run.root);
    let averaged: eval::AveragedReport =
        serde_json::from_str(&std::fs::read_to_string(run.root.join("unseen/averaged_report.json")).unwrap()).unwrap();
    let unseen_recall = averaged.macro_recall.unwrap();
    let per_user: Vec<String> = averaged
        .runs
        .iter()
        .zip(&averaged.reports)
        .map(|(u, r)| format!("{u} {:.4}", r.macro_recall.unwrap()))
        .collect();

    let pass = recall >= 0.95
        && precision >= 0.95
        && run.elapsed < Duration::from_secs(600)
        && unseen_recall >= 0.80
        && recall > unseen_recall;
    report(
        6,
        pass,
        format!(
            "allseen recall {recall:.4} precision {precision:.4} in {:.0}s; unseen mean recall {unseen_recall:.4} [{}]",
            run.elapsed.as_secs_f64(),
            per_user.join(", ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_feature_kind_comparison() {
    let run = end_to_end();
    let raw = ["--seed", "7", "--manifest", "data/manifest.csv", "--out-dir", "raw", "--feature-kind", "raw"];
    fingerspell(&[&raw[..], &["extract"]].concat(), &run.root);
    fingerspell(&[&raw[..], &TRAIN_FLAGS[..], &["train"]].concat(), &run.root);
    fingerspell(&[&raw[..], &["eval"]].concat(), &run.root);
    fingerspell(
        &[
            "--out-dir",
            "comparison",
            "compare",
            "--run",
            "combined=combined/report.json",
            "--run",
            "raw=raw/report.json",
        ],
        &run.root,
    );
    let table: eval::Comparison =
        serde_json::from_str(&std::fs::read_to_string(run.root.join("comparison/comparison.json")).unwrap()).unwrap();
    let csv = std::fs::read_to_string(run.root.join("comparison/comparison.csv")).unwrap();
    let raw_report = read_report(&run.root.join("raw/report.json"));
    let pass = table.runs == ["combined", "raw"]
        && table.rows.len() == NUM_CLASSES + 1
        && table.rows.iter().all(|r| r.recall.len() == 2 && r.precision.len() == 2)
        && csv.starts_with("letter,combined_precision,combined_recall,raw_precision,raw_recall\n");
    report(
        7,
        pass,
        format!(
            "macro recall combined {:.4} vs raw {:.4}",
            run.combined.macro_recall.unwrap(),
            raw_report.macro_recall.unwrap()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_08_metric_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let trials = 100;
    let mut agree = 0;
    for _ in 0..trials {
        let n = rng.random_range(1..400);
        let active = rng.random_range(1..=NUM_CLASSES);
        let truths: Vec<Letter> = (0..n).map(|_| Letter::from_index(rng.random_range(0..active)).unwrap()).collect();
        let preds: Vec<Letter> = truths
            .iter()
            .map(|&t| {
                if rng.random::<f64>() < 0.7 {
                    t
                } else {
                    Letter::from_index(rng.random_range(0..NUM_CLASSES)).unwrap()
                }
            })
            .collect();
        let rep = eval::precision_recall(&eval::confusion(&preds, &truths).unwrap());
        let mut ok = rep.total == n as u64;
        let (mut psum, mut pn, mut rsum, mut rn) = (0.0, 0, 0.0, 0);
        for (k, m) in rep.letters.iter().enumerate() {
            let tp = truths.iter().zip(&preds).filter(|(t, p)| t.index() == k && p.index() == k).count();
            let actual = truths.iter().filter(|t| t.index() == k).count();
            let predicted = preds.iter().filter(|p| p.index() == k).count();
            let expect_r = (actual > 0).then(|| tp as f64 / actual as f64);
            let expect_p = (predicted > 0).then(|| tp as f64 / predicted as f64);
            let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
                (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
                (None, None) => true,
                _ => false,
            };
            ok &= close(m.recall, expect_r) && close(m.precision, expect_p) && m.support == actual as u64;
            if let Some(r) = expect_r {
                rsum += r;
                rn += 1;
            }
            if let Some(p) = expect_p {
                psum += p;
                pn += 1;
            }
        }
        ok &= (rep.macro_recall.unwrap() - rsum / rn as f64).abs() <= 1e-12;
        ok &= (rep.macro_precision.unwrap() - psum / pn as f64).abs() <= 1e-12;
        agree += usize::from(ok);
    }
    let pass = agree == trials;
    report(8, pass, format!("{agree}/{trials} random matrices agree within 1e-12"));
    assert!(pass);
}

// ---------------------------------------------------------------- 9

fn random_labels(rng: &mut ChaCha8Rng, users: usize) -> Vec<LabelRow> {
    let mut rows = Vec::new();
    for u in 0..users {
        for l in Letter::all() {
            for _ in 0..rng.random_range(0..10) {
                rows.push(LabelRow {
                    user: format!("user{}", u + 1),
                    letter: l,
                });
            }
        }
    }
    // manifests need not be grouped
    for i in (1..rows.len()).rev() {
        rows.swap(i, rng.random_range(0..=i));
    }
    rows
}

fn is_partition(n: usize, s: &dataset::Split) -> bool {
    let mut seen = vec![0u8; n];
    for &i in s.train.iter().chain(&s.valid).chain(&s.test) {
        seen[i] += 1;
    }
    seen.iter().all(|&c| c == 1)
}

#[test]
fn criterion_09_split_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let trials = 1000;
    let (mut allseen_ok, mut unseen_ok, mut loo_ok) = (0, 0, 0);
    for trial in 0..trials {
        let rows = random_labels(&mut rng, 5);
        let seed = trial as u64;

        let s = dataset::split_allseen(&rows, seed);
        let mut ok = is_partition(rows.len(), &s) && s == dataset::split_allseen(&rows, seed);
        let users = dataset::users(&rows);
        for u in &users {
            for l in Letter::all() {
                let in_stratum = |idx: &[usize]| idx.iter().filter(|&&i| rows[i].user == *u && rows[i].letter == l).count();
                let n = in_stratum(&(0..rows.len()).collect::<Vec<_>>()) as f64;
                let (tr, va, te) = (in_stratum(&s.train) as f64, in_stratum(&s.valid) as f64, in_stratum(&s.test) as f64);
                ok &= (tr - n / 2.0).abs() <= 1.0 && (va - n / 4.0).abs() <= 1.0 && (te - n / 4.0).abs() <= 1.0;
            }
        }
        allseen_ok += usize::from(ok);

        let test_user = &users[rng.random_range(0..users.len())];
        let s = dataset::split_unseen(&rows, test_user, 0.1, seed).unwrap();
        let ok = is_partition(rows.len(), &s)
            && s.train.iter().chain(&s.valid).all(|&i| rows[i].user != *test_user)
            && s.test.iter().all(|&i| rows[i].user == *test_user);
        unseen_ok += usize::from(ok);

        let mut covered = vec![0u32; rows.len()];
        for u in &users {
            for &i in &dataset::split_unseen(&rows, u, 0.1, seed).unwrap().test {
                covered[i] += 1;
            }
        }
        loo_ok += usize::from(users.len() == 5 && covered.iter().all(|&c| c == 1));
    }
    let spec = dataset::SplitSpec {
        mode: SplitMode::Unseen,
        test_user: Some("nobody".into()),
        ..Default::default()
    };
    let unknown = matches!(dataset::split(&random_labels(&mut rng, 2), &spec), Err(Error::UnknownUser(_)));
    let pass = allseen_ok == trials && unseen_ok == trials && loo_ok == trials && unknown;
    report(
        9,
        pass,
        format!("{trials} trials: allseen {allseen_ok}, unseen {unseen_ok}, leave-one-out {loo_ok}; unknown user rejected: {unknown}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_serialization() {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut net = toy_network(&mut rng);
    net.translation_bias[3] = -0.0;
    net.rbm_layers[0].weights[[0, 0]] = f64::MIN_POSITIVE / 4.0;
    let mut bytes = Vec::new();
    net.write_to(&mut bytes).unwrap();
    let back = Dbn::from_bytes(&bytes).unwrap();
    let mut again = Vec::new();
    back.write_to(&mut again).unwrap();
    let model_ok = bytes == again && back.class_labels == net.class_labels && back.layer_sizes() == net.layer_sizes();

    let values: Vec<f32> = (0..3 * 7).map(|_| rng.random::<f32>()).collect();
    let m = FeatureMatrix::new(FeatureKind::Combined, 7, values).unwrap();
    let dir = tempfile::tempdir().unwrap();
    m.save(&dir.path().join("f.bin")).unwrap();
    let m2 = FeatureMatrix::load(&dir.path().join("f.bin")).unwrap();
    let features_ok = bits(&m.values) == bits(&m2.values) && m2.kind == m.kind && m2.dim == 7 && m2.to_bytes() == m.to_bytes();

    let named = |r: fingerspell::Result<Dbn>, needle: &str| matches!(r, Err(Error::Format(msg)) if msg.contains(needle));
    let mut bad_magic = bytes.clone();
    bad_magic[..6].copy_from_slice(b"HSDBN0");
    let mut bad_header = bytes.clone();
    bad_header[14] = b'!';
    let errors_ok = named(Dbn::from_bytes(&bad_magic), "magic")
        && named(Dbn::from_bytes(&bad_header), "header")
        && named(Dbn::from_bytes(&bytes[..bytes.len() - 8]), "translation.bias")
        && named(Dbn::from_bytes(&bytes[..bytes.len() - 8 * 30]), "translation.weights")
        && matches!(FeatureMatrix::from_bytes(b"HSFEAT9 raw 1 1\n\0\0\0\0"), Err(Error::Format(m)) if m.contains("header"));

    let pass = model_ok && features_ok && errors_ok;
    report(
        10,
        pass,
        format!("model round trip {model_ok}, feature round trip {features_ok}, corruption named {errors_ok}"),
    );
    assert!(pass);
}
