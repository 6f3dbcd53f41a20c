//! Acceptance suite. Each test prints one PASS/FAIL line for its criterion
//! and then asserts it. Run with `--nocapture` to see the lines.

use std::process::Command;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use stagewise_lora::autodiff::{Matrix, NodeId, Tape};
use stagewise_lora::checkpoint::{Checkpoint, MAGIC};
use stagewise_lora::data::{generate, Split, SynthSpec};
use stagewise_lora::error::CheckpointError;
use stagewise_lora::eval::{evaluate, render_table, EvalPair, Prediction, TableFormat};
use stagewise_lora::labels::{basic_labels, challenge_labels, rafdb_compound_labels};
use stagewise_lora::lora::{AdaptedLinear, LoraAdapter};
use stagewise_lora::model::{ClassifierNet, DEFAULT_HIDDEN};
use stagewise_lora::parser::{parse, Verdict};
use stagewise_lora::pipeline::{run_experiment, Seeds};
use stagewise_lora::prompt::{PromptSpec, CATEGORY_SLOT};
use stagewise_lora::train::{prepare_stage, run_stage, StageConfig};

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n:>2} {status} {name}: {detail}");
}

fn rand_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let normal = Normal::new(0.0, 1.0).unwrap();
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| normal.sample(rng)).collect()).unwrap()
}

// ---------------------------------------------------------------- 1

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Largest relative error between reverse-mode gradients and central
/// differences of `f` with respect to every entry of every input.
fn check_gradients(inputs: &[Matrix], f: &dyn Fn(&mut Tape, &[NodeId]) -> NodeId) -> f64 {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let loss = f(&mut tape, &ids);
    tape.backward(loss).unwrap();
    let analytic: Vec<Matrix> = ids.iter().map(|&id| tape.grad(id).clone()).collect();

    let eval = |vals: &[Matrix]| {
        let mut t = Tape::new();
        let ids: Vec<NodeId> = vals.iter().map(|m| t.param(m.clone())).collect();
        let l = f(&mut t, &ids);
        t.value(l).get(0, 0)
    };
    let mut worst: f64 = 0.0;
    for (k, m) in inputs.iter().enumerate() {
        for i in 0..m.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[k].data()[i], fd));
        }
    }
    worst
}

/// Reduces a matrix node to a scalar with non-uniform upstream gradient.
fn contract(t: &mut Tape, y: NodeId, rng: &mut ChaCha8Rng) -> NodeId {
    let (r, c) = t.value(y).shape();
    let u = t.constant(rand_matrix(1, r, rng));
    let v = t.constant(rand_matrix(c, 1, rng));
    let yv = t.matmul(y, v).unwrap();
    t.matmul(u, yv).unwrap()
}

/// Values bounded away from the relu kink.
fn away_from_zero(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    rand_matrix(rows, cols, rng).map(|x| if x.abs() < 0.05 { x.signum() * 0.05 + x } else { x })
}

fn op_configs(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, k, n) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
    let s = rng.random_range(-2.0..2.0);
    let label = rng.random_range(0..m);
    let proj_seed: u64 = rng.random();
    let mut worst: f64 = 0.0;
    let proj = move || ChaCha8Rng::seed_from_u64(proj_seed);

    let a = rand_matrix(m, k, &mut rng);
    let b = rand_matrix(k, n, &mut rng);
    worst = worst.max(check_gradients(&[a.clone(), b], &|t, x| {
        let y = t.matmul(x[0], x[1]).unwrap();
        contract(t, y, &mut proj())
    }));
    let a2 = rand_matrix(m, k, &mut rng);
    worst = worst.max(check_gradients(&[a.clone(), a2], &|t, x| {
        let y = t.add(x[0], x[1]).unwrap();
        contract(t, y, &mut proj())
    }));
    worst = worst.max(check_gradients(std::slice::from_ref(&a), &|t, x| {
        let y = t.scale(x[0], s);
        contract(t, y, &mut proj())
    }));
    worst = worst.max(check_gradients(&[away_from_zero(m, k, &mut rng)], &|t, x| {
        let y = t.relu(x[0]);
        contract(t, y, &mut proj())
    }));
    worst = worst.max(check_gradients(&[a], &|t, x| t.sum(x[0])));
    worst = worst.max(check_gradients(&[rand_matrix(m, 1, &mut rng)], &|t, x| {
        t.softmax_cross_entropy(x[0], label).unwrap()
    }));
    worst
}

/// Two adapted layers with a relu between them and a cross-entropy loss.
fn network_config(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, h, c) = (rng.random_range(2..6), rng.random_range(2..6), rng.random_range(2..5));
    let r1 = rng.random_range(1..=d.min(h));
    let r2 = rng.random_range(1..=h.min(c));
    let label = rng.random_range(0..c);
    let x = Matrix::column(&rand_matrix(d, 1, &mut rng).into_vec());
    // Non-zero B so gradients reach A.
    let inputs = vec![
        rand_matrix(h, d, &mut rng),
        rand_matrix(h, 1, &mut rng),
        rand_matrix(r1, d, &mut rng),
        rand_matrix(h, r1, &mut rng),
        rand_matrix(c, h, &mut rng),
        rand_matrix(c, 1, &mut rng),
        rand_matrix(r2, h, &mut rng),
        rand_matrix(c, r2, &mut rng),
    ];
    let build = |vals: &[Matrix], l: usize| {
        let mut layer = AdaptedLinear::new(vals[l].clone(), vals[l + 1].clone()).unwrap();
        layer
            .attach(LoraAdapter::from_parts(vals[l + 2].clone(), vals[l + 3].clone(), 1.0).unwrap())
            .unwrap();
        layer
    };
    // Evaluate the layers through their own tape recording and read the
    // gradients off the nodes they create.
    let mut tape = Tape::new();
    let xn = tape.constant(x.clone());
    let l1 = build(&inputs, 0);
    let l2 = build(&inputs, 4);
    let (h1, n1) = l1.forward_on_tape(&mut tape, xn, true).unwrap();
    let a1 = tape.relu(h1);
    let (z, n2) = l2.forward_on_tape(&mut tape, a1, true).unwrap();
    let loss = tape.softmax_cross_entropy(z, label).unwrap();
    tape.backward(loss).unwrap();
    let nodes = [
        n1.weight,
        n1.bias,
        n1.lora.unwrap().0,
        n1.lora.unwrap().1,
        n2.weight,
        n2.bias,
        n2.lora.unwrap().0,
        n2.lora.unwrap().1,
    ];
    let analytic: Vec<Matrix> = nodes.iter().map(|&n| tape.grad(n).clone()).collect();

    let eval = |vals: &[Matrix]| {
        let a = build(vals, 0).forward(&x).unwrap().map(|v| v.max(0.0));
        let z = build(vals, 4).forward(&a).unwrap();
        let mut t = Tape::new();
        let zn = t.constant(z);
        let l = t.softmax_cross_entropy(zn, label).unwrap();
        t.value(l).get(0, 0)
    };
    let mut worst: f64 = 0.0;
    for (k, m) in inputs.iter().enumerate() {
        for i in 0..m.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= FD_STEP;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[k].data()[i], fd));
        }
    }
    worst
}

#[test]
fn c01_gradients_match_central_differences() {
    let start = Instant::now();
    let configs = 24u64;
    let mut worst: f64 = 0.0;
    for seed in 0..configs {
        worst = worst.max(op_configs(seed));
        worst = worst.max(network_config(1000 + seed));
    }
    let elapsed = start.elapsed();
    let pass = worst <= FD_TOL && elapsed < Duration::from_secs(5);
    verdict(
        1,
        "gradient correctness",
        pass,
        &format!("{configs} op configs + {configs} network configs, worst rel err {worst:.2e}, {elapsed:.2?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 2

#[test]
fn c02_fresh_adapters_change_no_output_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for i in 0..50 {
        let d_in = rng.random_range(2..20);
        let hidden = [rng.random_range(2..20), rng.random_range(2..20)];
        let labels: Vec<String> = (0..rng.random_range(2..8)).map(|k| format!("c{k}")).collect();
        let mut net = ClassifierNet::new(d_in, &hidden, labels, i).unwrap();
        let inputs: Vec<Vec<f64>> = (0..10).map(|_| rand_matrix(d_in, 1, &mut rng).into_vec()).collect();
        let before: Vec<Vec<f64>> = inputs.iter().map(|x| net.forward(x).unwrap()).collect();
        let rank = rng.random_range(1..=16);
        net.attach_adapters(rank, rng.random()).unwrap();
        for (x, b) in inputs.iter().zip(&before) {
            let after = net.forward(x).unwrap();
            if after.iter().map(|v| v.to_bits()).ne(b.iter().map(|v| v.to_bits())) {
                mismatches += 1;
            }
        }
    }
    let pass = mismatches == 0;
    verdict(
        2,
        "zero-init no-op",
        pass,
        &format!("50 nets x 10 inputs, {mismatches} differing outputs"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 3

#[test]
fn c03_merged_layer_matches_adapted_layer() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d_in = rng.random_range(1..65);
        let d_out = rng.random_range(1..65);
        let rank = rng.random_range(1..=d_in.min(d_out));
        let mut layer =
            AdaptedLinear::new(rand_matrix(d_out, d_in, &mut rng), rand_matrix(d_out, 1, &mut rng)).unwrap();
        let adapter = LoraAdapter::from_parts(
            rand_matrix(rank, d_in, &mut rng),
            rand_matrix(d_out, rank, &mut rng),
            rng.random_range(0.5..2.0),
        )
        .unwrap();
        layer.attach(adapter).unwrap();
        let merged = layer.merge().unwrap();
        for _ in 0..50 {
            let x = rand_matrix(d_in, 1, &mut rng);
            let diff = layer
                .forward(&x)
                .unwrap()
                .max_abs_diff(&merged.forward(&x).unwrap())
                .unwrap();
            worst = worst.max(diff);
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-10 && elapsed < Duration::from_secs(2);
    verdict(
        3,
        "merge equivalence",
        pass,
        &format!("50 layers x 50 inputs, max |diff| {worst:.2e}, {elapsed:.2?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 4

#[test]
fn c04_stage_one_leaves_base_weights_untouched() {
    let seeds = Seeds::from_master(0);
    let data = generate(&SynthSpec {
        seed: seeds.data,
        ..SynthSpec::default()
    })
    .unwrap();
    let config = StageConfig::stage1(basic_labels(), seeds.stage1);
    assert_eq!((config.epochs, config.batch_size, config.learning_rate), (20, 1, 1e-4));
    let net = prepare_stage(16, &DEFAULT_HIDDEN, &config, seeds.init).unwrap();
    let base_bits = |n: &ClassifierNet| -> Vec<u64> {
        n.backbone()
            .iter()
            .flat_map(|l| l.weight.data().iter().chain(l.bias.data()))
            .map(|v| v.to_bits())
            .collect()
    };
    let adapter_bits = |n: &ClassifierNet| -> Vec<u64> {
        n.backbone()
            .iter()
            .filter_map(|l| l.adapter.as_ref())
            .flat_map(|a| a.a.data().iter().chain(a.b.data()))
            .map(|v| v.to_bits())
            .collect()
    };
    let before = base_bits(&net);
    let adapters_before = adapter_bits(&net);
    let train: Vec<_> = data.basic.split(Split::Train).cloned().collect();
    let (trained, log) = run_stage(net, &config, &train).unwrap();
    let unchanged = base_bits(&trained) == before;
    let adapters_moved = adapter_bits(&trained) != adapters_before;
    let pass = unchanged && adapters_moved && log.len() == 20;
    verdict(
        4,
        "freeze guarantee",
        pass,
        &format!(
            "{} base values byte-identical: {unchanged}; adapters updated: {adapters_moved}",
            before.len()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5

#[test]
fn c05_parameter_counts() {
    let mut rows = Vec::new();
    let mut pass = true;
    for d in [32usize, 64, 512] {
        for r in [8usize, 16] {
            let mut layer = AdaptedLinear::new(Matrix::zeros(d, d), Matrix::zeros(d, 1)).unwrap();
            layer.attach(LoraAdapter::init(d, d, r, 0).unwrap()).unwrap();
            let (t, b) = (layer.trainable_param_count(), layer.base_param_count());
            pass &= t == 2 * d * r && b == d * d;
            rows.push(format!("d={d} r={r}: {t}/{b}"));
        }
    }
    let mut layer = AdaptedLinear::new(Matrix::zeros(512, 512), Matrix::zeros(512, 1)).unwrap();
    layer.attach(LoraAdapter::init(512, 512, 16, 0).unwrap()).unwrap();
    pass &= layer.trainable_param_count() == 16384 && layer.base_param_count() == 262144;
    verdict(5, "parameter accounting", pass, &rows.join(", "));
    assert!(pass);
}

// ---------------------------------------------------------------- 6

#[test]
fn c06_staged_training_beats_threshold_and_baseline() {
    let start = Instant::now();
    let exp = run_experiment(0, &SynthSpec::default()).unwrap();
    let elapsed = start.elapsed();
    let staged = exp.staged_report.overall_accuracy();
    let baseline = exp.baseline_report.overall_accuracy();
    let basic = exp.basic_report.overall_accuracy();
    let a = staged >= 0.90;
    let b = exp.staged_report.overall_correct() >= exp.baseline_report.overall_correct();
    let fast = elapsed < Duration::from_secs(60);
    let pass = a && b && fast;
    verdict(
        6,
        "stage-wise synthetic experiment",
        pass,
        &format!(
            "basic {basic:.4} after stage 1; compound staged {staged:.4} ({}/{}) >= 0.90: {a}; \
             single-stage 30 epochs {baseline:.4} ({}/{}); staged >= baseline: {b}; {elapsed:.2?}",
            exp.staged_report.overall_correct(),
            exp.staged_report.overall_total(),
            exp.baseline_report.overall_correct(),
            exp.baseline_report.overall_total(),
        ),
    );
    assert!(a, "staged compound accuracy {staged} below 0.90");
    assert!(b, "staged {staged} below single-stage baseline {baseline}");
    assert!(fast, "took {elapsed:?}");
}

// ---------------------------------------------------------------- 7

const LISTING: &str = "Analysis: The person in the image has wide-open eyes, raised eyebrows, and a bright smile, \n\
indicating a mix of happiness and surprise.\n\
Conclusion: The facial expression of the person in the image is 'Happily Surprised'.";

#[test]
fn c07_parser_round_trips_templates() {
    let mut checked = 0;
    let mut failures = Vec::new();
    for set in [challenge_labels(), rafdb_compound_labels()] {
        let spec = PromptSpec::for_categories(&set).unwrap();
        for c in &set {
            let filled = spec.output_templates.person.replace(CATEGORY_SLOT, c);
            match parse(&filled, &set) {
                Ok(p) if p.verdict == Verdict::Category(c.clone()) && !p.lenient => {}
                other => failures.push(format!("{c}: {other:?}")),
            }
            checked += 1;
        }
        match parse(&spec.output_templates.no_person, &set) {
            Ok(p) if p.verdict == Verdict::NoPerson => {}
            other => failures.push(format!("no-person: {other:?}")),
        }
    }
    let listing = parse(LISTING, &challenge_labels()).map(|p| p.verdict);
    let listing_ok = listing == Ok(Verdict::Category("Happily Surprised".into()));
    let pass = failures.is_empty() && listing_ok && checked == 18;
    verdict(
        7,
        "parser round trip",
        pass,
        &format!(
            "{checked} category templates, {} failures; example transcript -> {listing:?}",
            failures.len()
        ),
    );
    assert!(pass, "{failures:?}");
}

// ---------------------------------------------------------------- 8

#[test]
fn c08_metrics_match_brute_force_tally() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    for inst in 0..100 {
        let n_labels = rng.random_range(1..12);
        let labels: Vec<String> = (0..n_labels).map(|k| format!("L{k}")).collect();
        let n_pairs = rng.random_range(1..=1000);
        let pairs: Vec<EvalPair> = (0..n_pairs)
            .map(|i| EvalPair {
                id: format!("{inst}-{i}"),
                gold: labels[rng.random_range(0..n_labels)].clone(),
                predicted: match rng.random_range(0..10) {
                    0 => Prediction::NoPerson,
                    1 => Prediction::ParseFailure,
                    _ => Prediction::Category(labels[rng.random_range(0..n_labels)].clone()),
                },
                lenient: rng.random_bool(0.1),
            })
            .collect();
        let report = evaluate(&pairs, &labels).unwrap();

        // Every cell by independent filtering.
        let mut columns: Vec<Prediction> = labels.iter().map(|l| Prediction::Category(l.clone())).collect();
        columns.push(Prediction::NoPerson);
        columns.push(Prediction::ParseFailure);
        for (i, gold) in labels.iter().enumerate() {
            for (j, col) in columns.iter().enumerate() {
                let count = pairs.iter().filter(|p| &p.gold == gold && &p.predicted == col).count() as u64;
                if report.confusion[i][j] != count {
                    mismatches += 1;
                }
            }
            let total = pairs.iter().filter(|p| &p.gold == gold).count() as u64;
            let correct = pairs
                .iter()
                .filter(|p| &p.gold == gold && p.predicted == Prediction::Category(gold.clone()))
                .count() as u64;
            if report.per_class[i].total != total || report.per_class[i].correct != correct {
                mismatches += 1;
            }
        }
        let hits = pairs
            .iter()
            .filter(|p| p.predicted == Prediction::Category(p.gold.clone()))
            .count() as u64;
        let lenient = pairs.iter().filter(|p| p.lenient).count() as u64;
        if report.overall_correct() != hits || report.overall_total() != n_pairs || report.lenient_count != lenient {
            mismatches += 1;
        }
        // Overall as the count-weighted mean of per-class accuracies.
        let n = Ratio::from_integer(n_pairs);
        let weighted: Ratio<u64> = report
            .per_class
            .iter()
            .filter(|c| c.total > 0)
            .map(|c| Ratio::new(c.total, 1) / n * Ratio::new(c.correct, c.total))
            .sum();
        if weighted != Ratio::new(hits, n_pairs) || report.overall_accuracy() != hits as f64 / n_pairs as f64 {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches == 0 && elapsed < Duration::from_secs(5);
    verdict(
        8,
        "metrics oracle",
        pass,
        &format!("100 instances, {mismatches} mismatches, {elapsed:.2?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 9

fn slra(dir: &std::path::Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_slra"))
        .current_dir(dir)
        .args(args)
        .args(["--seed", "0", "--quiet"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "slra {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn run_pipeline(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    slra(dir, &["synth", "--out-dir", "data"]);
    slra(
        dir,
        &[
            "train",
            "--stage",
            "1",
            "--manifest",
            "data/basic.jsonl",
            "--out",
            "s1.ckpt",
        ],
    );
    slra(
        dir,
        &[
            "train",
            "--stage",
            "2",
            "--manifest",
            "data/compound.jsonl",
            "--from-checkpoint",
            "s1.ckpt",
            "--out",
            "s2.ckpt",
        ],
    );
    slra(
        dir,
        &[
            "eval",
            "--checkpoint",
            "s2.ckpt",
            "--manifest",
            "data/compound.jsonl",
            "--format",
            "csv",
            "--out",
            "report.csv",
        ],
    );
    [
        "data/basic.jsonl",
        "data/compound.jsonl",
        "s1.ckpt",
        "s2.ckpt",
        "report.csv",
    ]
    .iter()
    .map(|f| (f.to_string(), std::fs::read(dir.join(f)).unwrap()))
    .collect()
}

fn corruption_cases(bytes: &[u8]) -> Vec<(&'static str, bool)> {
    let mut cases = Vec::new();
    let truncated = (1..bytes.len()).step_by(97).chain([bytes.len() - 1]).all(|cut| {
        matches!(
            Checkpoint::from_bytes(&bytes[..cut]),
            Err(CheckpointError::Truncated(_))
        )
    });
    cases.push(("every truncation -> Truncated", truncated));

    let mut bad = bytes.to_vec();
    bad[0] = b'X';
    cases.push((
        "bad magic -> BadMagic",
        matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic(_))),
    ));

    let mut bad = bytes.to_vec();
    bad[4..8].copy_from_slice(&99u32.to_le_bytes());
    cases.push((
        "unknown version -> Version",
        matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::Version { found: 99, .. })
        ),
    ));

    // Swap the rows and cols of the head bias: same byte count, wrong shape.
    let name = b"head.bias";
    let at = bytes.windows(name.len()).position(|w| w == name).unwrap() + name.len();
    let mut bad = bytes.to_vec();
    let (rows, cols) = (bad[at..at + 8].to_vec(), bad[at + 8..at + 16].to_vec());
    bad[at..at + 8].copy_from_slice(&cols);
    bad[at + 8..at + 16].copy_from_slice(&rows);
    cases.push((
        "transposed head bias -> Shape",
        matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Shape { .. })),
    ));

    let mut bad = bytes.to_vec();
    bad.push(0);
    cases.push((
        "trailing byte -> Malformed",
        matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Malformed(_))),
    ));
    cases
}

#[test]
fn c09_pipeline_is_deterministic_and_checkpoints_persist() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let a = run_pipeline(first.path());
    let b = run_pipeline(second.path());
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();

    let bytes = &a.iter().find(|(n, _)| n == "s2.ckpt").unwrap().1;
    assert_eq!(&bytes[..4], &MAGIC);
    let loaded = Checkpoint::from_bytes(bytes).unwrap();
    let round_trip = &loaded.to_bytes() == bytes;

    let cases = corruption_cases(bytes);
    let corrupt_ok = cases.iter().all(|c| c.1);
    let pass = differing.is_empty() && round_trip && corrupt_ok;
    verdict(
        9,
        "determinism and persistence",
        pass,
        &format!(
            "differing artifacts {differing:?}; save/load bit-exact: {round_trip}; {}",
            cases
                .iter()
                .map(|(n, ok)| format!("{n}: {ok}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 10

#[test]
fn c10_overall_row_renders_two_decimals() {
    let labels = vec!["Happily Surprised".to_string(), "Sadly Angry".to_string()];
    // 4489/5000 + 4489/5000 = 8978/10000.
    let pairs: Vec<EvalPair> = (0..10_000)
        .map(|i| {
            let gold = labels[i % 2].clone();
            let predicted = if i / 2 < 4489 {
                Prediction::Category(gold.clone())
            } else {
                Prediction::ParseFailure
            };
            EvalPair {
                id: i.to_string(),
                gold,
                predicted,
                lenient: false,
            }
        })
        .collect();
    let report = evaluate(&pairs, &labels).unwrap();
    assert_eq!(report.overall_accuracy(), 0.8978);
    let text = render_table(&report, TableFormat::Text);
    let csv = render_table(&report, TableFormat::Csv);
    let text_row = text
        .lines()
        .find(|l| l.starts_with("Overall"))
        .unwrap_or("")
        .to_string();
    let csv_row = csv.lines().find(|l| l.starts_with("Overall")).unwrap_or("").to_string();
    let pass = text_row.split_whitespace().nth(1) == Some("89.78") && csv_row.ends_with(",89.78");
    verdict(
        10,
        "table rendering",
        pass,
        &format!("text {text_row:?}; csv {csv_row:?}"),
    );
    assert!(pass);
}
