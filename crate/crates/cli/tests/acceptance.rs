//! Acceptance checks. Prints one `PASS`/`FAIL` line per criterion, then
//! fails the test if any criterion failed. Tolerances are pinned below.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use find_client::{Client, MetricsParams};
use find_core::api::{
    ApplyRequest, CreateSession, DatasetSource, EmbeddingSource, OracleSpec, RegisterDataset, RunConfig, SimulateRequest,
    TrainRequest,
};
use find_core::corpus::{load_dataset, load_embeddings, Dataset, DatasetFormat, Document, EmbeddingTable, Vocabulary};
use find_core::eval::{approx_randomization_test, bias_metrics, evaluate, MetricsReport, SubpopulationSpec};
use find_core::experiment::{all_clouds, apply_disabled, bias_debug, rank_ablation, AblationConfig, BiasConfig};
use find_core::features::DEFAULT_TOP_N;
use find_core::feedback::{create_session, simulate_answers, Answer, Policy, TaskType};
use find_core::lrp::{feature_relevance_cnn, feature_relevance_cnn_full, LrpConfig};
use find_core::model::{init_model, train, ArchConfig, CnnConfig, FinetuneOptions, ModelConfig, ModelSnapshot};
use find_core::snapshot::{from_bytes, to_bytes};
use find_core::synth::{gender_corpus, sentiment_corpus, GenderSpec, SentimentSpec};
use find_service::{ServiceConfig, Workspace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-6;
const LRP_EPSILON: f64 = 1e-9;
const CONSERVATION_TOL: f64 = 1e-6;
const ORACLE_TOL: f64 = 1e-9;
const MASK_TOL: f64 = 1e-12;
const C_SLACK: f64 = 0.01;
const ABLATION_BUDGET: Duration = Duration::from_secs(15 * 60);
const FPED_REDUCTION: f64 = 0.30;
const BIAS_F1_DROP: f64 = 0.03;
const P_SAME: f64 = 0.95;
const P_OPPOSITE: f64 = 0.01;

type Outcome = Result<String, String>;

fn check(results: &mut Vec<(String, bool)>, name: &str, f: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    let (ok, detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    // written to the handle directly so the line survives test output capture
    let mut out = std::io::stdout().lock();
    writeln!(out, "{} {name}: {detail} [{secs:.1}s]", if ok { "PASS" } else { "FAIL" }).ok();
    out.flush().ok();
    results.push((name.to_string(), ok));
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    check(&mut results, "gradient check (tiny CNN)", gradient_check);
    check(&mut results, "LRP conservation", lrp_conservation);
    check(&mut results, "LRP window locality and fast path", lrp_locality);
    check(&mut results, "mask identity", mask_identity);
    check(&mut results, "rank ablation ordering", rank_ablation_ordering);
    check(&mut results, "bias metrics and debiasing", bias_reduction);
    check(&mut results, "randomization test", randomization);
    check(&mut results, "CLI / service / core parity", parity);
    check(&mut results, "crash recovery", crash_recovery);
    let failed: Vec<&str> = results.iter().filter(|(_, ok)| !ok).map(|(n, _)| n.as_str()).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

// ---- fixtures ----

/// Random CNN over a vocabulary `w0..w{words}`, with non-zero head biases.
fn random_cnn(sizes: &[usize], per_size: usize, words: usize, dim: usize, max_len: usize, seed: u64) -> ModelSnapshot {
    let vocab = Vocabulary::from_words((0..words).map(|i| format!("w{i}")));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; (words + 2) * dim];
    for v in data.iter_mut().skip(2 * dim) {
        *v = rng.gen_range(-1.0..1.0);
    }
    let table = EmbeddingTable::from_rows(dim, data, 1.0).unwrap();
    let config = ModelConfig {
        arch: ArchConfig::Cnn(CnnConfig {
            filter_sizes: sizes.to_vec(),
            filters_per_size: per_size,
        }),
        max_len,
        embed_dim: dim,
        classes: vec!["neg".into(), "pos".into()],
        seed,
    };
    let mut model = init_model(config, Arc::new(vocab), Arc::new(table)).unwrap();
    for b in model.head.bias.iter_mut() {
        *b = rng.gen_range(-0.5..0.5);
    }
    model
}

/// Encoded document of random length in `1..=max_len`, padded with 0.
fn random_doc(rng: &mut ChaCha8Rng, words: usize, max_len: usize) -> Vec<u32> {
    let len = rng.gen_range(1..=max_len);
    (0..max_len)
        .map(|i| if i < len { rng.gen_range(2..words as u32 + 2) } else { 0 })
        .collect()
}

// ---- 1. gradients ----

fn gradient_check() -> Outcome {
    let mut model = random_cnn(&[2, 3], 2, 8, 4, 6, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for trial in 0..3 {
        let doc = random_doc(&mut rng, 8, 6);
        let label = trial % 2;
        let (_, grads) = model.loss_and_gradients(&doc, label);
        let shapes: Vec<usize> = model.trainable_blocks().iter().map(|b| b.len()).collect();
        for (block, &len) in shapes.iter().enumerate() {
            for i in 0..len {
                let orig = model.trainable_blocks()[block][i];
                model.trainable_blocks_mut()[block][i] = orig + GRAD_STEP;
                let up = model.loss(&doc, label);
                model.trainable_blocks_mut()[block][i] = orig - GRAD_STEP;
                let down = model.loss(&doc, label);
                model.trainable_blocks_mut()[block][i] = orig;
                let numeric = (up - down) / (2.0 * GRAD_STEP);
                let analytic = grads[block][i];
                let rel = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-7);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    ensure(worst < GRAD_REL_TOL, || format!("max relative error {worst:.2e} over {checked} parameters"))?;
    Ok(format!("max relative error {worst:.2e} over {checked} parameters"))
}

// ---- 2-3. LRP ----

fn lrp_conservation() -> Outcome {
    let model = random_cnn(&[2, 3, 4], 5, 40, 8, 20, 3);
    let cfg = LrpConfig::with_epsilon(LRP_EPSILON);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for pair in 0..100 {
        let doc = random_doc(&mut rng, 40, 20);
        let feature = pair % model.feature_count();
        let f = model.forward(&doc).features[feature];
        let r = feature_relevance_cnn(&model, &doc, "d", feature, &cfg);
        let err = (r.total() - f).abs() / f.abs().max(1.0);
        worst = worst.max(err);
    }
    ensure(worst <= CONSERVATION_TOL, || format!("max scaled error {worst:.2e}"))?;
    Ok(format!("100 pairs, max |sum R - f| / max(1,|f|) = {worst:.2e}"))
}

fn lrp_locality() -> Outcome {
    let model = random_cnn(&[2, 3, 4], 4, 30, 6, 16, 21);
    let cfg = LrpConfig::with_epsilon(LRP_EPSILON);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut gap: f64 = 0.0;
    let mut pairs = 0;
    for _ in 0..50 {
        let doc = random_doc(&mut rng, 30, 16);
        let trace = model.forward(&doc);
        for f in 0..model.feature_count() {
            let fast = feature_relevance_cnn(&model, &doc, "d", f, &cfg);
            let full = feature_relevance_cnn_full(&model, &doc, "d", f, &cfg);
            for (a, b) in fast.scores.iter().zip(&full.scores) {
                gap = gap.max((a - b).abs());
            }
            if trace.features[f] > 0.0 {
                let width = model.filter_size(f).unwrap();
                let start = trace.pool_argmax[f];
                let outside = fast.support().into_iter().find(|&p| p < start || p >= start + width);
                ensure(outside.is_none(), || format!("feature {f}: relevance at {outside:?} outside [{start}, {})", start + width))?;
            } else {
                ensure(fast.support().is_empty(), || format!("dead feature {f} has relevance"))?;
            }
            pairs += 1;
        }
    }
    ensure(gap <= ORACLE_TOL, || format!("fast path differs from full propagation by {gap:.2e}"))?;
    Ok(format!("{pairs} pairs local; fast vs full max gap {gap:.2e}"))
}

// ---- 4. mask ----

fn mask_identity() -> Outcome {
    let model = random_cnn(&[2, 3], 4, 25, 5, 12, 4);
    let d = model.feature_count();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let all: BTreeSet<usize> = (0..d).collect();
    let silent = model.disable_features(&all).unwrap();
    let bias_winner = find_core::model::argmax(&model.head.bias);
    let mut worst: f64 = 0.0;
    let mut masks = BTreeSet::new();
    // 100 random masks, 10 documents each
    for _ in 0..100 {
        let disabled: BTreeSet<usize> = (0..d).filter(|_| rng.gen_bool(0.5)).collect();
        let masked = model.disable_features(&disabled).unwrap();
        masks.insert(disabled.clone());
        for _ in 0..10 {
            let doc = random_doc(&mut rng, 25, 12);
            let features = model.forward(&doc).features;
            // independent route: drop the disabled columns of W by hand
            let logits = masked.head.logits(&features);
            for (c, &got) in logits.iter().enumerate() {
                let expected: f64 = model.head.bias[c]
                    + (0..d)
                        .filter(|j| !disabled.contains(j))
                        .map(|j| model.head.weights[c * d + j] * features[j])
                        .sum::<f64>();
                worst = worst.max((got - expected).abs());
            }
            ensure(model.head.logits(&features) == model.head.logits_unmasked(&features), || {
                "an all-ones mask changes the logits".into()
            })?;
            let p = silent.forward(&doc).probabilities;
            ensure(find_core::model::argmax(&p) == bias_winner, || "all-zeros mask does not predict argmax(b)".into())?;
        }
    }
    ensure(worst <= MASK_TOL, || format!("masked logits differ by {worst:.2e}"))?;
    Ok(format!(
        "1000 documents under {} distinct masks, max gap {worst:.1e}; all-zeros mask predicts argmax(b)",
        masks.len()
    ))
}

// ---- 5. rank ablation ----

fn rank_ablation_ordering() -> Outcome {
    let start = Instant::now();
    let fixture = sentiment_corpus(&SentimentSpec::default()).map_err(|e| e.to_string())?;
    let config = AblationConfig {
        max_len: 40,
        ..AblationConfig::default()
    };
    let report = rank_ablation(&fixture.dataset, fixture.vocab, fixture.embeddings, &fixture.oracle, &config)
        .map_err(|e| e.to_string())?;
    let f1 = |c: &str| report.macro_f1(c).unwrap_or(f64::NAN);
    let (orig, a, ab, c) = (f1("Original"), f1("A"), f1("AB"), f1("C"));
    let order = report.drop_order().join(" > ");
    let elapsed = start.elapsed();
    let detail = format!(
        "Original {orig:.3}, A {a:.3}, AB {ab:.3}, C {c:.3}; drop order {order} (reference AB > A > AC > BC > B > Original > C); {:.0}s",
        elapsed.as_secs_f64()
    );
    ensure(ab < a && a < orig, || format!("expected AB < A < Original: {detail}"))?;
    ensure(c >= orig - C_SLACK, || format!("expected C >= Original - {C_SLACK}: {detail}"))?;
    ensure(elapsed < ABLATION_BUDGET, || format!("over the time budget: {detail}"))?;
    Ok(detail)
}

// ---- 6. bias ----

fn doc(text: &str, label: usize) -> Document {
    Document::new(text, text, label).unwrap()
}

fn bias_reduction() -> Outcome {
    // FPR 5/20 overall, 1/10 male, 4/10 female -> FPED 0.15 + 0.15
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    let mut docs = Vec::new();
    for i in 0..10 {
        for (text, p) in [("he writes code", usize::from(i < 1)), ("she writes code", usize::from(i < 4))] {
            docs.push(doc(text, 0));
            labels.push(0);
            preds.push(p);
        }
    }
    for i in 0..5 {
        for (text, p) in [("his post is abusive", usize::from(i >= 1)), ("her post is abusive", usize::from(i >= 3))] {
            docs.push(doc(text, 1));
            labels.push(1);
            preds.push(p);
        }
    }
    let specs = [
        SubpopulationSpec::new("male", ["he", "his"]).unwrap(),
        SubpopulationSpec::new("female", ["she", "her"]).unwrap(),
    ];
    let hand = bias_metrics(&preds, &labels, &docs, &specs, 1).map_err(|e| e.to_string())?;
    ensure((hand.fped - 0.30).abs() < 1e-12, || format!("hand fixture FPED {} != 0.30", hand.fped))?;

    let fixture = gender_corpus(&GenderSpec::default()).map_err(|e| e.to_string())?;
    let config = BiasConfig {
        max_len: 40,
        ..BiasConfig::default()
    };
    let summary = bias_debug(&fixture.dataset, fixture.vocab, fixture.embeddings, &config).map_err(|e| e.to_string())?;
    let (before, after) = (summary.fped.0.mean, summary.fped.1.mean);
    let (f1_before, f1_after) = (summary.macro_f1.0.mean, summary.macro_f1.1.mean);
    let reduction = if before > 0.0 { 1.0 - after / before } else { 0.0 };
    let detail = format!(
        "hand FPED 0.30; synthetic FPED {before:.3} -> {after:.3} ({:.0}% lower), macro F1 {f1_before:.3} -> {f1_after:.3}",
        100.0 * reduction
    );
    ensure(reduction >= FPED_REDUCTION, || format!("FPED reduction below {FPED_REDUCTION}: {detail}"))?;
    ensure(f1_before - f1_after <= BIAS_F1_DROP, || format!("macro F1 dropped more than {BIAS_F1_DROP}: {detail}"))?;
    Ok(detail)
}

// ---- 7. randomization ----

fn randomization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let labels: Vec<usize> = (0..200).map(|_| rng.gen_range(0..3)).collect();
    let preds: Vec<usize> = (0..200).map(|_| rng.gen_range(0..3)).collect();
    let mut min_same = f64::INFINITY;
    for seed in 0..20 {
        let r = approx_randomization_test(&preds, &preds, &labels, 3, 1000, 0.05, seed).map_err(|e| e.to_string())?;
        min_same = min_same.min(r.p_value);
    }
    ensure(min_same >= P_SAME, || format!("identical inputs gave p = {min_same}"))?;
    let labels: Vec<usize> = (0..50).map(|i| i % 2).collect();
    let inverted: Vec<usize> = labels.iter().map(|&y| 1 - y).collect();
    let r = approx_randomization_test(&labels, &inverted, &labels, 2, 1000, 0.05, 0).map_err(|e| e.to_string())?;
    ensure(r.p_value <= P_OPPOSITE, || format!("perfect vs inverted gave p = {}", r.p_value))?;
    Ok(format!("identical: min p {min_same:.3} over 20 seeds; perfect vs inverted (N=50): p {:.4}", r.p_value))
}

// ---- 8. parity ----

const SMALL_CONFIG: &str = "filter_sizes = [2, 3]\nfilters_per_size = 3\nmax_len = 30\nmax_epochs = 4\npatience = 2\nlearning_rate = 3e-3\n";
const TRAIN_SEED: u64 = 3;

fn small_fixture(dir: &Path) -> OracleSpec {
    let f = sentiment_corpus(&SentimentSpec {
        train: 80,
        dev: 20,
        test: 40,
        embed_dim: 12,
        ..Default::default()
    })
    .unwrap();
    f.write(dir).unwrap();
    OracleSpec::from_oracle(&f.oracle, &f.dataset.classes)
}

fn find(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_find"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("find {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap()
}

struct Route {
    trained: Vec<u8>,
    derived: Vec<u8>,
    disabled: BTreeSet<usize>,
    report: MetricsReport,
}

fn cli_route(dir: &Path, work: &Path) -> Result<Route, String> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let config = work.join("small.toml");
    std::fs::write(&config, SMALL_CONFIG).unwrap();
    let (m1, m2, answers) = (work.join("m1.snap"), work.join("m2.snap"), work.join("answers.jsonl"));
    let seed = TRAIN_SEED.to_string();
    find(&["train", "--data", &s(dir), "--config", &s(&config), "--seed", &seed, "--out", &s(&m1)])?;
    find(&["simulate", "--model", &s(&m1), "--data", &s(dir), "--answers-out", &s(&answers)])?;
    let applied: serde_json::Value = serde_json::from_str(&find(&[
        "--json", "apply", "--model", &s(&m1), "--data", &s(dir), "--answers", &s(&answers), "--policy", "majority",
        "--config", &s(&config), "--seed", &seed, "--out", &s(&m2),
    ])?)
    .map_err(|e| e.to_string())?;
    let evaluated: serde_json::Value =
        serde_json::from_str(&find(&["--json", "eval", "--model", &s(&m2), "--data", &s(dir)])?).map_err(|e| e.to_string())?;
    Ok(Route {
        trained: std::fs::read(&m1).map_err(|e| e.to_string())?,
        derived: std::fs::read(&m2).map_err(|e| e.to_string())?,
        disabled: serde_json::from_value(applied["disabled"].clone()).map_err(|e| e.to_string())?,
        report: serde_json::from_value(evaluated["metrics"]["report"].clone()).map_err(|e| e.to_string())?,
    })
}

fn service_route(dir: &Path, data_dir: &Path, oracle: OracleSpec) -> Result<Route, String> {
    let run_config = RunConfig::from_toml(SMALL_CONFIG).map_err(|e| e.to_string())?;
    runtime().block_on(async {
        let server = find_service::start(&ServiceConfig {
            port: 0,
            data_dir: data_dir.to_path_buf(),
            ..ServiceConfig::default()
        })
        .await
        .map_err(|e| e.to_string())?;
        let client = Client::new(server.url());
        let e = |e: find_client::ClientError| e.to_string();
        let ds = client
            .register_dataset(&RegisterDataset {
                name: Some("fixture".into()),
                data: DatasetSource::Path {
                    path: dir.join("dataset.jsonl"),
                    format: None,
                },
                embeddings: EmbeddingSource::Path {
                    path: dir.join("embeddings.txt"),
                },
            })
            .await
            .map_err(e)?;
        let trained = client
            .train_wait(&TrainRequest {
                dataset_id: ds.dataset_id.clone(),
                config: run_config.clone(),
                seed: TRAIN_SEED,
            })
            .await
            .map_err(e)?;
        let m1 = trained.model.model_id;
        let session = client
            .create_session(&CreateSession {
                model_id: m1.clone(),
                task: TaskType::ClassChoice,
                policy: Policy::MajorityVote,
                top_n: Some(DEFAULT_TOP_N),
            })
            .await
            .map_err(e)?;
        client
            .simulate(
                &session.session_id,
                &SimulateRequest {
                    oracle,
                    respondents: 10,
                    noise: 0.1,
                    seed: 0,
                },
            )
            .await
            .map_err(e)?;
        let applied = client
            .apply_wait(
                &session.session_id,
                &ApplyRequest {
                    config: run_config,
                    seed: TRAIN_SEED,
                    finetune_always: false,
                },
            )
            .await
            .map_err(e)?;
        let m2 = applied.model.model_id;
        let metrics = client.metrics(&m2, &MetricsParams::default()).await.map_err(e)?;
        let route = Route {
            trained: client.snapshot(&m1).await.map_err(e)?,
            derived: client.snapshot(&m2).await.map_err(e)?,
            disabled: applied.disabled,
            report: metrics.report,
        };
        server.stop().await.map_err(|e| e.to_string())?;
        Ok(route)
    })
}

fn core_route(dir: &Path, oracle: &OracleSpec) -> Result<Route, String> {
    let e = |e: find_core::Error| e.to_string();
    let run_config = RunConfig::from_toml(SMALL_CONFIG).map_err(e)?;
    let mut dataset: Dataset = load_dataset(&dir.join("dataset.jsonl"), DatasetFormat::Jsonl).map_err(e)?;
    dataset.name = "fixture".into();
    let vocab = Vocabulary::build(&dataset);
    let embeddings = load_embeddings(&dir.join("embeddings.txt"), &vocab).map_err(e)?;
    let config = ModelConfig {
        arch: run_config.arch().map_err(e)?,
        max_len: run_config.max_len,
        embed_dim: embeddings.dim(),
        classes: dataset.classes.clone(),
        seed: TRAIN_SEED,
    };
    let initial = init_model(config, Arc::new(vocab), Arc::new(embeddings)).map_err(e)?;
    let (model, _) = train(&initial, &dataset, &run_config.train(TRAIN_SEED)).map_err(e)?;
    let trained = to_bytes(&model);
    let m1 = find_core::snapshot::snapshot_id(&trained);
    let clouds = all_clouds(&model, &dataset, DEFAULT_TOP_N);
    let mut session = create_session("s0001", &m1, &model, clouds, TaskType::ClassChoice, Policy::MajorityVote).map_err(e)?;
    let oracle = oracle.resolve(&dataset.classes).map_err(e)?;
    for answer in simulate_answers(&session, &oracle, 10, 0.1, 0).map_err(e)? {
        session.add_answer(answer).map_err(e)?;
    }
    let disabled = session.aggregate(&model).map_err(e)?.disabled.clone();
    let (derived, _) = apply_disabled(&model, &disabled, &dataset, &run_config.train(TRAIN_SEED), FinetuneOptions::default())
        .map_err(e)?;
    let derived_bytes = to_bytes(&derived);
    let mut report = evaluate(&derived, &dataset.test, &dataset.name).map_err(e)?;
    report.model = Some(find_core::snapshot::snapshot_id(&derived_bytes));
    Ok(Route {
        trained,
        derived: derived_bytes,
        disabled,
        report,
    })
}

fn parity() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("fixture");
    let oracle = small_fixture(&dir);
    let work = tmp.path().join("cli");
    std::fs::create_dir_all(&work).unwrap();
    let cli = cli_route(&dir, &work)?;
    let service = service_route(&dir, &tmp.path().join("service"), oracle.clone())?;
    let core = core_route(&dir, &oracle)?;
    for (name, route) in [("service", &service), ("core", &core)] {
        ensure(route.trained == cli.trained, || format!("trained snapshot differs between CLI and {name}"))?;
        ensure(route.derived == cli.derived, || format!("derived snapshot differs between CLI and {name}"))?;
        ensure(route.disabled == cli.disabled, || {
            format!("disabled sets differ: CLI {:?}, {name} {:?}", cli.disabled, route.disabled)
        })?;
        ensure(route.report == cli.report, || format!("metrics reports differ: CLI {:?}, {name} {:?}", cli.report, route.report))?;
    }
    from_bytes(&cli.derived).map_err(|e| e.to_string())?;
    Ok(format!(
        "byte-equal snapshots ({} and {} bytes), disabled {:?}, macro F1 {:.4} on all three routes",
        cli.trained.len(),
        cli.derived.len(),
        cli.disabled,
        cli.report.macro_f1
    ))
}

// ---- 9. crash recovery ----

struct ServeProcess {
    child: Child,
    url: String,
}

fn spawn_serve(data_dir: &Path) -> Result<ServeProcess, String> {
    let mut child = Command::new(env!("CARGO_BIN_EXE_find"))
        .arg("serve")
        .env("FIND_DATA_DIR", data_dir)
        .env("FIND_PORT", "0")
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .map_err(|e| e.to_string())?;
    let url = line
        .trim()
        .strip_prefix("listening on ")
        .ok_or_else(|| format!("unexpected first line {line:?}"))?
        .to_string();
    Ok(ServeProcess { child, url })
}

fn crash_recovery() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("fixture");
    let oracle = small_fixture(&dir);
    let data_dir: PathBuf = tmp.path().join("data");
    let rt = runtime();
    let e = |e: find_client::ClientError| e.to_string();

    let mut first = spawn_serve(&data_dir)?;
    let before = rt.block_on(async {
        let client = Client::new(first.url.clone());
        let ds = client
            .register_dataset(&RegisterDataset {
                name: None,
                data: DatasetSource::Path {
                    path: dir.join("dataset.jsonl"),
                    format: None,
                },
                embeddings: EmbeddingSource::Path {
                    path: dir.join("embeddings.txt"),
                },
            })
            .await
            .map_err(e)?;
        let trained = client
            .train_wait(&TrainRequest {
                dataset_id: ds.dataset_id,
                config: RunConfig::from_toml(SMALL_CONFIG).unwrap(),
                seed: 1,
            })
            .await
            .map_err(e)?;
        let session = client
            .create_session(&CreateSession {
                model_id: trained.model.model_id,
                task: TaskType::BinaryGraded,
                policy: Policy::MajorityVote,
                top_n: None,
            })
            .await
            .map_err(e)?;
        // part of the answers arrive, then the process dies mid-session
        client
            .simulate(
                &session.session_id,
                &SimulateRequest {
                    oracle,
                    respondents: 3,
                    noise: 0.0,
                    seed: 2,
                },
            )
            .await
            .map_err(e)?;
        client
            .answers(
                &session.session_id,
                vec![Answer {
                    question_id: 0,
                    respondent_id: "late".into(),
                    choice: 1,
                    cloud: 0,
                    timestamp_ms: 5,
                }],
            )
            .await
            .map_err(e)?;
        client.state().await.map_err(e)
    })?;
    first.child.kill().map_err(|e| e.to_string())?;
    first.child.wait().map_err(|e| e.to_string())?;

    // a write cut short by the crash
    let log = data_dir.join("events.jsonl");
    let mut file = std::fs::OpenOptions::new().append(true).open(&log).map_err(|e| e.to_string())?;
    file.write_all(br#"{"event":"answers_added","session_id":"s00"#).map_err(|e| e.to_string())?;
    drop(file);

    let mut second = spawn_serve(&data_dir)?;
    let after = rt.block_on(Client::new(second.url.clone()).state()).map_err(e);
    second.child.kill().ok();
    second.child.wait().ok();
    let after = after?;
    ensure(after == before, || "state after restart differs from state before the crash".into())?;

    let replayed = serde_json::to_value(Workspace::open(&data_dir).map_err(|e| e.to_string())?.state()).unwrap();
    ensure(replayed == before, || "in-process replay differs from the served state".into())?;
    let events = before["events"].as_u64().unwrap_or(0);
    Ok(format!("state equal after kill -9 and a torn tail ({events} events); in-process replay agrees"))
}
