//! Acceptance suite. Runs every criterion in order and prints one line each.
//!
//! Exits nonzero when a criterion fails, unless the failure is a documented
//! one that the published numbers make unavoidable.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::Array2;
use ocrxfer::codec::{default_whitelist, Codec, BLANK};
use ocrxfer::ctc::{ctc_loss_grad, required_steps};
use ocrxfer::dataset::Sample;
use ocrxfer::evalkit::{
    cer, display_gain, distance, edit_ops, evaluate_model, gain, rank_models, replay, run_experiment, CorpusData,
    EditOp, ExperimentConfig, ExperimentReport, InitKind, ModeSpec, Recognizer, TrainingRunner,
};
use ocrxfer::linenet::{softmax, LineImage, NetError, Network};
use ocrxfer::modelstore::{self, Provenance};
use ocrxfer::synthgen::{derive_seed, CorpusManifest, DegradeParams, FontId};
use ocrxfer::trainer::{fit, TrainingConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
    /// Failure explained by an inconsistency in the published table.
    documented: bool,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into(), documented: false }
    }
}

// ---------------------------------------------------------------- 1

/// (book, Def, LH, gain, +WL, gain) at 60 and then 150 lines.
#[rustfmt::skip]
const GAIN_TABLE: [(&str, [f64; 5], [f64; 5]); 7] = [
    ("1476", [8.21, 5.35, 35.0, 5.17, 37.0], [4.00, 3.11, 22.0, 3.04, 24.0]),
    ("1488", [7.60, 3.53, 54.0, 3.49, 54.0], [2.88, 2.22, 23.0, 2.22, 23.0]),
    ("1495", [12.67, 6.26, 51.0, 6.14, 52.0], [5.83, 4.03, 31.0, 4.04, 31.0]),
    ("1500", [5.03, 3.58, 29.0, 3.42, 32.0], [2.95, 2.42, 18.0, 2.29, 22.0]),
    ("1505", [6.19, 5.32, 14.0, 4.79, 23.0], [3.70, 3.43, 7.0, 3.40, 8.0]),
    ("1509", [6.31, 2.85, 50.0, 2.06, 67.0], [2.81, 2.24, 20.0, 1.44, 49.0]),
    ("1572", [2.43, 1.58, 35.0, 1.61, 34.0], [1.72, 1.27, 26.0, 1.26, 27.0]),
];
const GAIN_TABLE_AVG_WL: [(usize, i64); 2] = [(60, 43), (150, 26)];

fn criterion_1() -> Outcome {
    let mut mismatches = Vec::new();
    let mut wl_gains: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (book, at60, at150) in GAIN_TABLE {
        for (budget, row) in [(60, at60), (150, at150)] {
            let [def, lh, lh_gain, wl, wl_gain] = row;
            for (mode, cer_p, published) in [("LH", lh, lh_gain), ("+WL", wl, wl_gain)] {
                let g = gain(def, cer_p).unwrap();
                if display_gain(g) != published as i64 {
                    mismatches.push(format!(
                        "{book} {mode}@{budget}: {def}/{cer_p} gives {} ({g:.2}), published {published}",
                        display_gain(g)
                    ));
                }
                if mode == "+WL" {
                    wl_gains.entry(budget).or_default().push(g);
                }
            }
        }
    }
    let mut avg_notes = Vec::new();
    let mut avg_ok = true;
    for (budget, published) in GAIN_TABLE_AVG_WL {
        let g = &wl_gains[&budget];
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        let ok = (display_gain(mean) - published).abs() <= 1;
        avg_ok &= ok;
        avg_notes.push(format!("AVG@{budget} {mean:.2} vs {published}"));
    }
    let pass = mismatches.is_empty() && avg_ok;
    let mut detail = format!("{} of 28 gains reproduced; {}", 28 - mismatches.len(), avg_notes.join(", "));
    if !mismatches.is_empty() {
        detail.push_str(&format!("; mismatch: {}", mismatches.join("; ")));
    }
    let documented = avg_ok && mismatches.len() == 1 && mismatches[0].starts_with("1509 LH@60");
    Outcome { pass, detail, documented }
}

// ---------------------------------------------------------------- 2, 3

fn random_net(rng: &mut ChaCha8Rng, classes: usize) -> (Network, LineImage) {
    let letters: Vec<char> = ('a'..='z').collect();
    let mut symbols = vec![BLANK, ' '];
    symbols.extend(letters.choose_multiple(rng, classes - 2).copied());
    let codec = Codec::from_parts(symbols, []).unwrap();
    let height = rng.gen_range(3..=8);
    let mut net = Network::init(height, 2 * rng.gen_range(1..=4), codec, rng.gen()).unwrap();
    // wider weights give peaked, varied posteriors
    for block in net.params_mut().blocks_mut() {
        for v in block.iter_mut() {
            *v = rng.gen_range(-1.5..1.5);
        }
    }
    let width = rng.gen_range(2..=12);
    let line = LineImage::new(Array2::from_shape_fn((height, width), |_| rng.gen::<f64>())).unwrap();
    (net, line)
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut argmax_kept = true;
    for _ in 0..100 {
        let classes = rng.gen_range(3..=10);
        let (net, line) = random_net(&mut rng, classes);
        let removable: Vec<char> = net.codec().symbols()[2..].to_vec();
        let n_remove = rng.gen_range(1..=removable.len());
        let removed: BTreeSet<char> = removable.choose_multiple(&mut rng, n_remove).copied().collect();
        let keep: BTreeSet<char> = removable.iter().copied().filter(|c| !removed.contains(c)).collect();
        let (_, delta) = net.codec().reduce(&keep);
        let small = net.resize_output(&delta, rng.gen()).unwrap();
        let old = net.forward(&line).unwrap().posteriors;
        let new = small.forward(&line).unwrap().posteriors;
        let map: Vec<usize> = small.codec().symbols().iter().map(|&c| net.codec().index_of(c).unwrap()).collect();
        for t in 0..old.nrows() {
            let retained: f64 = map.iter().map(|&o| old[[t, o]]).sum();
            for (n, &o) in map.iter().enumerate() {
                worst = worst.max((new[[t, n]] - old[[t, o]] / retained).abs());
            }
            let old_best = map[argmax(map.iter().map(|&o| old[[t, o]]))];
            argmax_kept &= map[argmax(new.row(t).iter().copied())] == old_best;
        }
    }
    Outcome::new(
        worst <= 1e-12 && argmax_kept,
        format!("max deviation {worst:.2e}, retained argmax preserved: {argmax_kept}"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut identical = true;
    let mut worst: f64 = 0.0;
    let mut consistent_rows = true;
    for _ in 0..100 {
        let classes = rng.gen_range(3..=10);
        let (net, line) = random_net(&mut rng, classes);
        let fresh: Vec<char> = ('A'..='Z').collect();
        let n_add = rng.gen_range(1..=3);
        let added: BTreeSet<char> = fresh.choose_multiple(&mut rng, n_add).copied().collect();
        let (_, delta) = net.codec().extend(&added).unwrap();
        let big = net.resize_output(&delta, rng.gen()).unwrap();
        consistent_rows &= big.codec().len() == classes + added.len();
        let old = net.forward(&line).unwrap();
        let new = big.forward(&line).unwrap();
        let map: Vec<(usize, usize)> = net
            .codec()
            .symbols()
            .iter()
            .map(|&c| (net.codec().index_of(c).unwrap(), big.codec().index_of(c).unwrap()))
            .collect();
        for t in 0..old.steps() {
            for &(o, n) in &map {
                identical &= old.logits[[t, o]].to_bits() == new.logits[[t, n]].to_bits();
                let odds_old = old.posteriors[[t, o]] / old.posteriors[[t, 0]];
                let odds_new = new.posteriors[[t, n]] / new.posteriors[[t, 0]];
                worst = worst.max((odds_new / odds_old - 1.0).abs());
            }
        }
    }
    Outcome::new(
        identical && worst <= 1e-12 && consistent_rows,
        format!("retained logits bit-identical: {identical}, max relative odds change {worst:.2e}"),
    )
}

// ---------------------------------------------------------------- 4

fn enumerate_loss(post: &Array2<f64>, target: &[usize]) -> f64 {
    let mut total = 0.0;
    walk(post, target, &mut Vec::with_capacity(post.nrows()), 1.0, &mut total);
    -total.ln()
}

/// Depth-first over every frame-level path, summing those that collapse to `target`.
fn walk(post: &Array2<f64>, target: &[usize], path: &mut Vec<usize>, p: f64, total: &mut f64) {
    if path.len() == post.nrows() {
        let mut labels: Vec<usize> = Vec::new();
        let mut prev = None;
        for &c in path.iter() {
            if c != 0 && prev != Some(c) {
                labels.push(c);
            }
            prev = Some(c);
        }
        if labels == target {
            *total += p;
        }
        return;
    }
    for c in 0..post.ncols() {
        let q = p * post[[path.len(), c]];
        path.push(c);
        walk(post, target, path, q, total);
        path.pop();
    }
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut post = logits.clone();
    for mut row in post.rows_mut() {
        let p = softmax(row.as_slice().unwrap());
        row.assign(&ndarray::Array1::from(p));
    }
    post
}

fn feasible_target(rng: &mut ChaCha8Rng, steps: usize, classes: usize) -> Vec<usize> {
    loop {
        let len = rng.gen_range(0..=3);
        let t: Vec<usize> = (0..len).map(|_| rng.gen_range(1..classes)).collect();
        if required_steps(&t) <= steps {
            return t;
        }
    }
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_loss: f64 = 0.0;
    for _ in 0..1000 {
        let classes = rng.gen_range(2..=4);
        let steps = rng.gen_range(1..=6);
        let target = feasible_target(&mut rng, steps, classes);
        let post = softmax_rows(&Array2::from_shape_fn((steps, classes), |_| rng.gen_range(-4.0..4.0)));
        let dp = ctc_loss_grad(post.view(), &target).unwrap().loss;
        worst_loss = worst_loss.max((dp - enumerate_loss(&post, &target)).abs());
    }
    const STEP: f64 = 1e-5;
    let mut worst_grad: f64 = 0.0;
    for _ in 0..100 {
        let classes = rng.gen_range(2..=4);
        let steps = rng.gen_range(1..=6);
        let target = feasible_target(&mut rng, steps, classes);
        let logits = Array2::from_shape_fn((steps, classes), |_| rng.gen_range(-3.0..3.0));
        let analytic = ctc_loss_grad(softmax_rows(&logits).view(), &target).unwrap().logit_grad;
        let loss = |l: &Array2<f64>| ctc_loss_grad(softmax_rows(l).view(), &target).unwrap().loss;
        for t in 0..steps {
            for c in 0..classes {
                let mut plus = logits.clone();
                plus[[t, c]] += STEP;
                let mut minus = logits.clone();
                minus[[t, c]] -= STEP;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
                let a = analytic[[t, c]];
                let scale = a.abs().max(numeric.abs());
                // entries that are zero up to rounding have no meaningful relative error
                if scale > 1e-6 {
                    worst_grad = worst_grad.max((a - numeric).abs() / scale);
                }
            }
        }
    }
    Outcome::new(
        worst_loss <= 1e-10 && worst_grad <= 1e-4,
        format!("max loss gap {worst_loss:.2e} over 1000, max gradient relative error {worst_grad:.2e} over 100"),
    )
}

// ---------------------------------------------------------------- 5

fn full_matrix_distance(a: &[char], b: &[char]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let alphabet = ['a', 'b', 'c', ' ', 'é', 'ß'];
    let mut bad = 0;
    for _ in 0..1000 {
        let mut s = || -> String {
            let n = rng.gen_range(0..=40);
            (0..n).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
        };
        let (r, h) = (s(), s());
        let (rc, hc): (Vec<char>, Vec<char>) = (r.chars().collect(), h.chars().collect());
        let oracle = full_matrix_distance(&rc, &hc);
        let (counts, ops) = edit_ops(&r, &h);
        let reference: String = ops
            .iter()
            .filter_map(|op| match *op {
                EditOp::Match(c) | EditOp::Substitute(c, _) | EditOp::Delete(c) => Some(c),
                EditOp::Insert(_) => None,
            })
            .collect();
        let expected_cer = oracle as f64 / rc.len().max(1) as f64;
        let ok = distance(&r, &h) == oracle
            && counts.total() == oracle
            && cer(&r, &h) == expected_cer
            && replay(&ops) == h
            && reference == r;
        bad += usize::from(!ok);
    }
    Outcome::new(bad == 0, format!("{} of 1000 pairs agree with the full-matrix DP", 1000 - bad))
}

// ---------------------------------------------------------------- 6, 7

fn cli(args: &[&str]) -> i32 {
    ocrxfer::cli::run_command(std::iter::once("ocrxfer").chain(args.iter().copied()))
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn criterion_6() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let symbols = std::iter::once(BLANK).chain(" abcdefghijklmnopqrstuvwxyz".chars()).collect();
    let mut base = Network::init(32, 8, Codec::from_parts(symbols, []).unwrap(), 6).unwrap();
    base.quantize_f32();
    let base_path = p.join("base.ocrm");
    modelstore::save(&base, &Provenance::default(), &base_path).unwrap();
    let gt = p.join("gt");
    let mut codes = vec![cli(&[
        "synth", "--font", "B", "--lines", "10", "--seed", "6", "--alphabet", "abcdeü", "--line-length", "6",
        "--out", path_str(&gt),
    ])];
    let mut has_q = Vec::new();
    for wl in ["default", "none"] {
        let out = p.join(wl);
        codes.push(cli(&[
            "finetune", "--model", path_str(&base_path), "--train", path_str(&gt), "--out", path_str(&out),
            "--iterations", "4", "--checkpoint-every", "2", "--whitelist", wl,
        ]));
        has_q.push(modelstore::load(&out.join("best.ocrm")).map(|n| n.codec().contains('q')).unwrap_or(false));
    }
    let gt_has_q = std::fs::read_dir(&gt)
        .unwrap()
        .filter_map(|e| std::fs::read_to_string(e.unwrap().path()).ok())
        .any(|t| t.contains('q'));
    Outcome::new(
        codes.iter().all(|&c| c == 0) && !gt_has_q && has_q == [true, false],
        format!("'q' kept with default whitelist: {}, kept with none: {}", has_q[0], has_q[1]),
    )
}

fn model_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "ocrm" || e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn criterion_7() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let data = p.join("d");
    let mut codes = vec![cli(&[
        "synth", "--font", "A", "--lines", "12", "--seed", "7", "--line-length", "5", "--noise", "0.1",
        "--out", path_str(&data),
    ])];
    for run in ["r1", "r2"] {
        codes.push(cli(&[
            "train", "--train", path_str(&data), "--out", path_str(&p.join(run)), "--iterations", "30",
            "--checkpoint-every", "10", "--hidden-size", "8", "--seed", "77", "--learning-rate", "1e-2",
        ]));
    }
    let (a, b) = (model_files(&p.join("r1")), model_files(&p.join("r2")));
    let same_files = a.len() == 5 && a == b;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bit_exact = true;
    for _ in 0..10 {
        let classes = rng.gen_range(3..=10);
        let (mut net, line) = random_net(&mut rng, classes);
        net.quantize_f32();
        let bytes = modelstore::to_bytes(&net, &Provenance::default());
        let (loaded, _) = modelstore::from_bytes(&bytes).unwrap();
        let (x, y) = (net.forward(&line).unwrap(), loaded.forward(&line).unwrap());
        bit_exact &= x.logits.iter().zip(y.logits.iter()).all(|(u, v)| u.to_bits() == v.to_bits());
        bit_exact &= (x.logits.mapv(|v| v as f32) == y.logits.mapv(|v| v as f32)) && x.posteriors == y.posteriors;
    }
    Outcome::new(
        codes.iter().all(|&c| c == 0) && same_files && bit_exact,
        format!("{} checkpoint files identical: {same_files}, round trip bit-exact: {bit_exact}", a.len()),
    )
}

// ---------------------------------------------------------------- shared training

const HEIGHT: usize = 32;
const HIDDEN: usize = 64;

fn degraded(font: FontId, n_lines: usize, seed: u64) -> CorpusManifest {
    let mut m = CorpusManifest::new(font, n_lines, seed);
    m.height = HEIGHT;
    m.line_length = 6;
    m.degrade = DegradeParams { pixel_noise_std: 0.25, blur_radius: 1, jitter: 1, seed: 0 };
    m
}

fn samples(manifest: &CorpusManifest) -> Vec<Sample> {
    manifest
        .lines()
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, (image, text))| Sample { id: format!("{i:06}"), image, text })
        .collect()
}

struct Pretrained {
    best: Network,
    best_cer: f64,
    /// (iteration, test CER, network) at every checkpoint.
    snapshots: Vec<(u64, f64, Network)>,
    elapsed: Duration,
}

fn pretrained() -> &'static Pretrained {
    static CELL: OnceLock<Pretrained> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let mut lines = samples(&degraded(FontId::A, 1050, 1000));
        let test = lines.split_off(1000);
        let config = TrainingConfig {
            iterations: 10_000,
            learning_rate: 1e-3,
            momentum: 0.9,
            checkpoint_every: 1000,
            seed: 1000,
            hidden_size: HIDDEN,
            ..TrainingConfig::default()
        };
        let (net, _) = ocrxfer::trainer::initial_network(&lines, &config).unwrap();
        let mut snapshots = Vec::new();
        fit(net, &lines, &test, &config, |it, cer, net| {
            snapshots.push((it, cer, net.clone()));
            Ok(())
        })
        .unwrap();
        let (_, best_cer, best) = snapshots
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .cloned()
            .unwrap();
        let cers: Vec<String> = snapshots.iter().map(|(i, c, _)| format!("{i}:{:.2}", 100.0 * c)).collect();
        println!("pretraining checkpoints (iteration:CER%) {}", cers.join(" "));
        Pretrained { best, best_cer, snapshots, elapsed: start.elapsed() }
    })
}

const SEEDS: [u64; 3] = [1, 2, 3];
const BUDGETS: [usize; 3] = [30, 60, 150];
const DEFAULT: &str = "default";
const TRANSFER: &str = "pretrained+WL";

struct Sweep {
    reports: Vec<(u64, ExperimentReport)>,
    elapsed: Duration,
}

fn sweep() -> &'static Sweep {
    static CELL: OnceLock<Sweep> = OnceLock::new();
    CELL.get_or_init(|| {
        let pre = pretrained();
        let start = Instant::now();
        let base = PathBuf::from("font-a.ocrm");
        let runner = TrainingRunner {
            training: TrainingConfig {
                iterations: 3000,
                learning_rate: 3e-3,
                momentum: 0.9,
                checkpoint_every: 600,
                hidden_size: HIDDEN,
                ..TrainingConfig::default()
            },
            pretrained: BTreeMap::from([(base.clone(), pre.best.clone())]),
        };
        let config = |seed| ExperimentConfig {
            budgets: BUDGETS.to_vec(),
            folds: 5,
            seed,
            eval_fraction: 0.5,
            modes: vec![
                ModeSpec { name: DEFAULT.into(), init: InitKind::Fresh, model: None, whitelist: BTreeSet::new() },
                ModeSpec {
                    name: TRANSFER.into(),
                    init: InitKind::Pretrained,
                    model: Some(base.clone()),
                    whitelist: default_whitelist(),
                },
            ],
        };
        let reports = SEEDS
            .iter()
            .map(|&seed| {
                let corpus = CorpusData {
                    name: "font-b".into(),
                    samples: samples(&degraded(FontId::B, 500, derive_seed(seed, &[2]))),
                };
                (seed, run_experiment(&[corpus], &config(seed), &runner).unwrap())
            })
            .collect();
        Sweep { reports, elapsed: start.elapsed() + pre.elapsed }
    })
}

fn gain_at(report: &ExperimentReport, budget: usize) -> f64 {
    report.row("font-b", budget, TRANSFER).unwrap().gain_vs_default.unwrap()
}

// ---------------------------------------------------------------- 8, 9

fn criterion_8() -> Outcome {
    let sweep = sweep();
    let mut all_better = true;
    let mut notes = Vec::new();
    for (seed, report) in &sweep.reports {
        let def = report.row("font-b", 60, DEFAULT).unwrap().mean_cer;
        let pre = report.row("font-b", 60, TRANSFER).unwrap().mean_cer;
        all_better &= pre < def;
        notes.push(format!("seed {seed}: {def:.2}% -> {pre:.2}% (gain {})", display_gain(gain_at(report, 60))));
    }
    let mean_gain = sweep.reports.iter().map(|(_, r)| gain_at(r, 60)).sum::<f64>() / SEEDS.len() as f64;
    let in_time = sweep.elapsed <= Duration::from_secs(30 * 60);
    Outcome::new(
        all_better && in_time,
        format!(
            "pretraining test CER {:.2}%; {}; mean gain {} at 60 lines; {:.0} s",
            100.0 * pretrained().best_cer,
            notes.join(", "),
            display_gain(mean_gain),
            sweep.elapsed.as_secs_f64()
        ),
    )
}

fn criterion_9() -> Outcome {
    let sweep = sweep();
    let mean = |budget| sweep.reports.iter().map(|(_, r)| gain_at(r, budget)).sum::<f64>() / SEEDS.len() as f64;
    let gains: Vec<f64> = BUDGETS.iter().map(|&b| mean(b)).collect();
    let per_seed: Vec<String> = sweep
        .reports
        .iter()
        .map(|(s, r)| {
            let g: Vec<String> = BUDGETS.iter().map(|&b| display_gain(gain_at(r, b)).to_string()).collect();
            format!("seed {s}: {}", g.join("/"))
        })
        .collect();
    Outcome::new(
        gains[0] >= gains[2],
        format!(
            "mean gain {:.1} / {:.1} / {:.1} at 30 / 60 / 150 lines ({})",
            gains[0],
            gains[1],
            gains[2],
            per_seed.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 10

/// Returns a fixed transcription per line, looked up by image.
struct Stub {
    outputs: Vec<(LineImage, String)>,
}

impl Recognizer for Stub {
    fn recognize(&self, line: &LineImage) -> Result<String, NetError> {
        Ok(self.outputs.iter().find(|(img, _)| img == line).map(|(_, t)| t.clone()).unwrap_or_default())
    }
}

/// A stub whose corpus CER is exactly `deletions / total reference chars`.
fn deleting_stub(sample: &[Sample], deletions: usize) -> Stub {
    let mut left = deletions;
    let outputs = sample
        .iter()
        .map(|s| {
            let n = s.text.chars().count();
            let cut = left.min(n);
            left -= cut;
            (s.image.clone(), s.text.chars().skip(cut).collect())
        })
        .collect();
    Stub { outputs }
}

fn criterion_10() -> Outcome {
    // 100 lines of 100 characters; each image is unique
    let sample: Vec<Sample> = (0..100)
        .map(|i| Sample {
            id: format!("{i:03}"),
            image: LineImage::new(Array2::from_elem((2, 2), i as f64 / 100.0)).unwrap(),
            text: "x".repeat(100),
        })
        .collect();
    let stubs = [deleting_stub(&sample, 3456), deleting_stub(&sample, 1558)];
    let ranked = rank_models(&stubs, &sample).unwrap();
    let stub_ok = ranked[0].0 == 1 && ranked[0].1 == 0.1558 && ranked[1].1 == 0.3456;

    let pre = pretrained();
    let models: Vec<&Network> = [10_000, 4000, 5000]
        .iter()
        .map(|it| &pre.snapshots.iter().find(|(i, _, _)| i == it).unwrap().2)
        .collect();
    let held_out = samples(&degraded(FontId::A, 50, 1010));
    let trained = rank_models(&models, &held_out).unwrap();
    let independent: Vec<f64> = models.iter().map(|m| evaluate_model(*m, &held_out).unwrap().cer).collect();
    let mut order: Vec<usize> = (0..models.len()).collect();
    order.sort_by(|&a, &b| independent[a].total_cmp(&independent[b]));
    let trained_ok = trained.iter().map(|r| r.0).eq(order.iter().copied())
        && trained.iter().all(|&(i, c)| c == independent[i]);
    Outcome::new(
        stub_ok && trained_ok,
        format!(
            "stubs ranked {:.2}% before {:.2}%; trained CERs {}",
            100.0 * ranked[0].1,
            100.0 * ranked[1].1,
            trained.iter().map(|(i, c)| format!("#{i} {:.2}%", 100.0 * c)).collect::<Vec<_>>().join(" < ")
        ),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "gain table arithmetic", criterion_1),
        (2, "codec reduction renormalization", criterion_2),
        (3, "codec extension preservation", criterion_3),
        (4, "CTC correctness", criterion_4),
        (5, "CER oracle equivalence", criterion_5),
        (6, "blind-spot protection", criterion_6),
        (7, "determinism", criterion_7),
        (10, "model ranking", criterion_10),
        (8, "desk-scale transfer", criterion_8),
        (9, "budget sweep", criterion_9),
    ];
    let mut outcomes = Vec::new();
    for (n, name, check) in criteria {
        let start = Instant::now();
        let o = check();
        println!(
            "criterion {n:>2} {name}: {} [{:.1} s] {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
        outcomes.push((n, o));
    }
    let passed = outcomes.iter().filter(|(_, o)| o.pass).count();
    let undocumented: Vec<u32> = outcomes.iter().filter(|(_, o)| !o.pass && !o.documented).map(|(n, _)| *n).collect();
    let documented: Vec<u32> = outcomes.iter().filter(|(_, o)| !o.pass && o.documented).map(|(n, _)| *n).collect();
    println!("acceptance: {passed}/{} passed", outcomes.len());
    if !documented.is_empty() {
        println!("failing against inconsistent published values: {documented:?}");
    }
    if !undocumented.is_empty() {
        println!("unexpected failures: {undocumented:?}");
        std::process::exit(1);
    }
}
