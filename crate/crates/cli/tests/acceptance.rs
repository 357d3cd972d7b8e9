//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria that need the official bAbI Task 6 files read them from
//! `HCN_BABI_DIR` (`dialog-babi-task6-dstc2-{trn,dev,tst}.txt`) and fail as
//! BLOCKED when it is unset. The process exits 0 regardless unless
//! `HCN_ACCEPTANCE_STRICT=1`, so `cargo test` stays usable offline.

use std::cell::RefCell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use hcn::data::{parse_split, parse_str, serialize, PreparedCorpus};
use hcn::dm::{
    dialogue_accuracy, evaluate, train_model, turn_accuracy, Checkpoint, CheckpointMetrics, DmError, Evaluation,
    ModelConfig, TrainOptions, Trainer,
};
use hcn::embeddings::{train_subword_skipgram, training_sentences, SkipGramConfig};
use hcn::hpo::{run_search, toy, SearchOptions, Strategy};
use hcn::testkit::fixtures::{random_table, shipped_config, skipgram_table, synthetic_corpus};
use hcn::testkit::primitive_gradient_suite;
use hcn_cli::server::{router, AppState, DEFAULT_IDLE_TIMEOUT};
use hcn_cli::session::Engine;
use http_body_util::BodyExt;
use tower::ServiceExt;

const SPLIT_FILES: [&str; 3] =
    ["dialog-babi-task6-dstc2-trn.txt", "dialog-babi-task6-dstc2-dev.txt", "dialog-babi-task6-dstc2-tst.txt"];
const SEEDS: [u64; 3] = [1, 2, 3];

type Verdict = Result<(bool, String), String>;

thread_local! {
    /// (label, turn accuracy, dialogue accuracy) of every evaluation run here.
    static EVALUATIONS: RefCell<Vec<(String, f64, f64)>> = const { RefCell::new(Vec::new()) };
}

fn record(label: &str, ev: &Evaluation) {
    EVALUATIONS.with(|e| e.borrow_mut().push((label.to_string(), ev.turn_accuracy, ev.dialogue_accuracy)));
}

fn babi_dir() -> Option<PathBuf> {
    std::env::var_os("HCN_BABI_DIR").map(PathBuf::from)
}

fn blocked() -> Verdict {
    Ok((false, "BLOCKED: official bAbI Task 6 files not available (set HCN_BABI_DIR)".into()))
}

fn babi_corpus(dir: &Path) -> Result<PreparedCorpus, String> {
    let [a, b, c] = SPLIT_FILES.map(|f| dir.join(f));
    PreparedCorpus::prepare(&a, &b, &c).map_err(|e| e.to_string())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn gradient_integrity() -> Verdict {
    let started = Instant::now();
    let suite = primitive_gradient_suite(20, 2024).map_err(|e| e.to_string())?;
    let worst = suite.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max);
    let failing: Vec<&str> = suite.iter().filter(|(_, r)| !(r.max_rel_error < 1e-4)).map(|(n, _)| *n).collect();
    let secs = started.elapsed().as_secs_f64();
    Ok((
        failing.is_empty() && secs < 60.0,
        format!("{} ops x 20 trials, worst rel err {worst:.2e}, failing {failing:?}, {secs:.1}s", suite.len()),
    ))
}

fn data_fidelity() -> Verdict {
    let Some(dir) = babi_dir() else { return blocked() };
    let a = babi_corpus(&dir)?;
    let b = babi_corpus(&dir)?;
    let counts = [a.train.len(), a.dev.len(), a.test.len()];
    let stable = a.actions == b.actions;
    let mut round_trip = true;
    for f in SPLIT_FILES {
        let parsed = parse_split(&dir.join(f)).map_err(|e| e.to_string())?;
        round_trip &= parse_str(&serialize(&parsed)).map_err(|e| e.to_string())? == parsed;
    }
    Ok((
        counts == [3200, 400, 400] && stable && round_trip,
        format!("dialogues {counts:?} (want [3200, 400, 400]), templates {} stable={stable}, round trip={round_trip}", a.actions.len()),
    ))
}

fn capacity() -> Verdict {
    let started = Instant::now();
    let (corpus, source) = match babi_dir() {
        Some(dir) => {
            let full = babi_corpus(&dir)?;
            let subset = PreparedCorpus::from_splits(full.train[..20].to_vec(), Vec::new(), Vec::new())
                .map_err(|e| e.to_string())?;
            (subset, "bAbI train subset")
        }
        None => (synthetic_corpus(20, 0, 0), "synthetic corpus, bAbI unavailable"),
    };
    let table = skipgram_table(&corpus, 300, 5);
    let cfg = shipped_config("fasttext");
    let opts = TrainOptions { epochs: 200, ..TrainOptions::default() };
    let mut tr = Trainer::new(&cfg, &corpus.train, corpus.actions.len(), &table, &corpus.vocab, opts)
        .map_err(|e| e.to_string())?;
    let mut ev = None;
    for epoch in 1..=200 {
        tr.train_epoch().map_err(|e| e.to_string())?;
        if epoch % 5 == 0 || epoch == 200 {
            let e = evaluate(tr.model(), &corpus.train, &table, &corpus.vocab).map_err(|e| e.to_string())?;
            let done = e.turn_accuracy >= 0.99;
            ev = Some((epoch, e));
            if done {
                break;
            }
        }
    }
    let (epoch, ev) = ev.expect("at least one evaluation");
    record("capacity/train", &ev);
    let secs = started.elapsed().as_secs_f64();
    Ok((
        ev.turn_accuracy >= 0.99 && secs < 600.0,
        format!("{source}: train turn acc {:.4} after {epoch} epochs, {secs:.0}s", ev.turn_accuracy),
    ))
}

struct Headline {
    baseline: Vec<f64>,
    cnn: Vec<f64>,
    /// Baseline checkpoint of the first seed, reused for the parity check.
    checkpoint: Checkpoint,
    corpus: PreparedCorpus,
}

fn run_headline(dir: &Path) -> Result<Headline, String> {
    let corpus = babi_corpus(dir)?;
    let cfg = SkipGramConfig { dim: 300, epochs: 100, ..SkipGramConfig::default() };
    let (table, _) = train_subword_skipgram(&training_sentences(&corpus.train), &cfg).map_err(|e| e.to_string())?;
    let opts = TrainOptions { epochs: 12, ..TrainOptions::default() };
    let mut scores = [Vec::new(), Vec::new()];
    let mut checkpoint = None;
    for (i, name) in ["fasttext", "fasttext_cnn"].into_iter().enumerate() {
        for seed in SEEDS {
            let cfg = ModelConfig { seed, ..shipped_config(name) };
            let (model, report) = train_model(&cfg, &corpus, &table, &opts).map_err(|e| e.to_string())?;
            let ev = evaluate(&model, &corpus.test, &table, &corpus.vocab).map_err(|e| e.to_string())?;
            record(&format!("{name}/seed{seed}/test"), &ev);
            println!("  {name} seed {seed}: test turn acc {:.4}, dialogue acc {:.4}", ev.turn_accuracy, ev.dialogue_accuracy);
            scores[i].push(ev.turn_accuracy);
            if checkpoint.is_none() {
                let metrics = CheckpointMetrics {
                    best_dev_turn_accuracy: report.best_dev_turn_accuracy,
                    best_epoch: report.best_epoch,
                    epochs_trained: 12,
                };
                checkpoint = Some(Checkpoint::new(model, &corpus, table.clone(), metrics));
            }
        }
    }
    let [baseline, cnn] = scores;
    Ok(Headline { baseline, cnn, checkpoint: checkpoint.expect("trained"), corpus })
}

fn headline_band(h: Option<&Result<Headline, String>>) -> Verdict {
    let Some(h) = h else { return blocked() };
    let h = h.as_ref().map_err(Clone::clone)?;
    let (b, c) = (median(h.baseline.clone()), median(h.cnn.clone()));
    Ok((b >= 0.52 && c >= 0.54, format!("median test turn acc: baseline {b:.4} (>= 0.52), cnn {c:.4} (>= 0.54)")))
}

fn ordering(h: Option<&Result<Headline, String>>) -> Verdict {
    let Some(h) = h else { return blocked() };
    let h = h.as_ref().map_err(Clone::clone)?;
    let (b, c) = (median(h.baseline.clone()), median(h.cnn.clone()));
    Ok((
        c >= b,
        format!("fasttext cnn {c:.4} vs baseline {b:.4}; word2vec column not run (no pretrained News vectors)"),
    ))
}

fn hpo() -> Verdict {
    let started = Instant::now();
    let best = |seed, strategy| {
        let o = SearchOptions { budget: 30, seed, strategy, history: None };
        run_search(&toy::space(), &o, |p| Ok(toy::objective(p))).map(|r| r.best.score)
    };
    let mut bayes = Vec::new();
    let mut random = Vec::new();
    for seed in 0..20 {
        bayes.push(best(seed, Strategy::Bayesian).map_err(|e| e.to_string())?);
        random.push(best(seed, Strategy::Random).map_err(|e| e.to_string())?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let worst_gap = bayes.iter().map(|b| toy::OPTIMUM - b).fold(0.0, f64::max);

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("history.jsonl");
    let mut o = SearchOptions { budget: 11, seed: 5, strategy: Strategy::Bayesian, history: Some(path.clone()) };
    run_search(&toy::space(), &o, |p| Ok(toy::objective(p))).map_err(|e| e.to_string())?;
    o.budget = 30;
    let resumed = run_search(&toy::space(), &o, |p| Ok(toy::objective(p))).map_err(|e| e.to_string())?;
    let on_disk = hcn::hpo::read_history(&path).map_err(|e| e.to_string())?;
    let mut keys: Vec<String> = on_disk.iter().map(|t| serde_json::to_string(&t.params).unwrap()).collect();
    keys.sort();
    keys.dedup();
    let resume_ok = on_disk.len() == 30 && keys.len() == 30 && resumed.history == on_disk;

    let secs = started.elapsed().as_secs_f64();
    Ok((
        worst_gap <= 0.05 && mean(&bayes) >= mean(&random) && resume_ok && secs < 300.0,
        format!(
            "GP-EI worst gap {worst_gap:.4}, mean best {:.5} vs random {:.5}; resume {} trials, {} distinct; {secs:.1}s",
            mean(&bayes),
            mean(&random),
            on_disk.len(),
            keys.len()
        ),
    ))
}

fn round_trip() -> Verdict {
    let corpus = synthetic_corpus(20, 5, 10);
    let table = random_table(&corpus, 32, 9);
    let opts = TrainOptions { epochs: 3, ..TrainOptions::default() };
    let mut all_equal = true;
    let mut compared = 0;
    let mut rejected = true;
    for name in ["fasttext", "fasttext_cnn", "fasttext_rnn"] {
        let (model, _) = train_model(&shipped_config(name), &corpus, &table, &opts).map_err(|e| e.to_string())?;
        for (split, ds) in [("dev", &corpus.dev), ("test", &corpus.test)] {
            record(&format!("{name}/synthetic/{split}"), &evaluate(&model, ds, &table, &corpus.vocab).map_err(|e| e.to_string())?);
        }
        let ck = Checkpoint::new(model, &corpus, table.clone(), CheckpointMetrics::default());
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        ck.save(dir.path()).map_err(|e| e.to_string())?;
        let loaded = Checkpoint::load(dir.path()).map_err(|e| e.to_string())?;
        let fixtures: Vec<&hcn::data::Turn> = corpus.test.iter().flat_map(|d| &d.turns).take(50).collect();
        let (mut s1, mut s2) = (ck.model.initial_state(), loaded.model.initial_state());
        for t in &fixtures {
            let a = ck.model.forward_turn(&t.user_tokens, &s1, None, &ck.embeddings, &ck.vocab).map_err(|e| e.to_string())?;
            let b = loaded
                .model
                .forward_turn(&t.user_tokens, &s2, None, &loaded.embeddings, &loaded.vocab)
                .map_err(|e| e.to_string())?;
            all_equal &= a.probs.iter().map(|x| x.to_bits()).eq(b.probs.iter().map(|x| x.to_bits()));
            compared += 1;
            (s1, s2) = (a.state, b.state);
        }
        let manifest = dir.path().join("manifest.json");
        let text = std::fs::read_to_string(&manifest).map_err(|e| e.to_string())?;
        let key = "\"vocab\": \"";
        let at = text.find(key).ok_or("manifest lacks a vocab fingerprint")? + key.len();
        let mut tampered = text.clone();
        tampered.replace_range(at..at + 4, if &text[at..at + 4] == "0000" { "1111" } else { "0000" });
        std::fs::write(&manifest, tampered).map_err(|e| e.to_string())?;
        rejected &= matches!(Checkpoint::load(dir.path()), Err(DmError::Compatibility(_)));
    }
    Ok((
        all_equal && rejected && compared == 150,
        format!("{compared} fixture turns over 3 configs bitwise equal={all_equal}, tampered fingerprint rejected={rejected}"),
    ))
}

fn parity(h: Option<&Result<Headline, String>>) -> Verdict {
    let (ck, corpus, source) = match h {
        Some(Ok(h)) => (h.checkpoint.clone(), h.corpus.clone(), "bAbI baseline checkpoint"),
        _ => {
            let corpus = synthetic_corpus(30, 5, 25);
            let table = random_table(&corpus, 32, 4);
            let opts = TrainOptions { epochs: 4, ..TrainOptions::default() };
            let (model, _) =
                train_model(&shipped_config("fasttext_cnn"), &corpus, &table, &opts).map_err(|e| e.to_string())?;
            (Checkpoint::new(model, &corpus, table, CheckpointMetrics::default()), corpus, "synthetic checkpoint")
        }
    };
    let dialogues = &corpus.test[..20];
    let offline = evaluate(&ck.model, dialogues, &ck.embeddings, &ck.vocab).map_err(|e| e.to_string())?;
    record("parity/test20", &offline);
    let app = router(AppState::new(Some(Engine::new(ck)), DEFAULT_IDLE_TIMEOUT), None);
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let (mut turns, mut mismatches) = (0, 0);
    rt.block_on(async {
        let call = |uri: String, body: Option<serde_json::Value>| {
            let app = app.clone();
            async move {
                let req = Request::builder().method("POST").uri(uri).header("content-type", "application/json");
                let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
                let resp = app.oneshot(req).await.unwrap();
                let status = resp.status();
                let bytes = resp.into_body().collect().await.unwrap().to_bytes();
                (status, serde_json::from_slice::<serde_json::Value>(&bytes).unwrap())
            }
        };
        for (d, preds) in dialogues.iter().zip(&offline.predictions) {
            let (status, body) = call("/api/session".into(), None).await;
            assert_eq!(status, StatusCode::CREATED);
            let id = body["session_id"].as_str().unwrap().to_string();
            for (t, p) in d.turns.iter().zip(preds) {
                let (_, r) = call(format!("/api/session/{id}/message"), Some(serde_json::json!({ "text": t.raw_user }))).await;
                turns += 1;
                if r["action_id"].as_u64() != Some(p.index() as u64) {
                    mismatches += 1;
                }
            }
        }
    });
    Ok((mismatches == 0, format!("{source}: 20 dialogues, {turns} turns, {mismatches} mismatches")))
}

fn metric_properties() -> Verdict {
    use hcn::data::ActionId;
    let ids = |xs: &[usize]| xs.iter().map(|&x| ActionId(x)).collect::<Vec<_>>();
    let gold = ids(&[0, 1, 2, 3, 4, 5, 6]);
    let pred = ids(&[0, 9, 2, 9, 4, 5, 9]);
    let t = turn_accuracy(&pred, &gold).map_err(|e| e.to_string())?;
    // dialogues of 3 and 4 turns: first has a miss at turn 2, second at 4 and 7
    let d = dialogue_accuracy(&pred, &gold, &[3, 4]).map_err(|e| e.to_string())?;
    let d2 = dialogue_accuracy(&ids(&[0, 1, 2, 3, 0]), &ids(&[0, 1, 2, 3, 4]), &[3, 2]).map_err(|e| e.to_string())?;
    let oracles = t == 4.0 / 7.0 && d == 0.0 && d2 == 0.5;
    let evals = EVALUATIONS.with(|e| e.borrow().clone());
    let violations: Vec<&String> = evals.iter().filter(|(_, t, d)| d > t).map(|(l, _, _)| l).collect();
    Ok((
        oracles && violations.is_empty() && !evals.is_empty(),
        format!("fixture oracles={oracles}; dialogue <= turn on {} evaluations, violations {violations:?}", evals.len()),
    ))
}

fn main() {
    let strict = std::env::var("HCN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failed = 0;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Verdict| {
        let started = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let (pass, detail) = match verdict {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("{tag} {name}: {detail} [{:.1}s]", started.elapsed().as_secs_f64());
    };

    report("gradient-integrity", &mut gradient_integrity);
    report("data-fidelity", &mut data_fidelity);
    report("capacity-sanity", &mut capacity);
    let headline = babi_dir().map(|d| run_headline(&d));
    report("headline-band", &mut || headline_band(headline.as_ref()));
    report("ordering", &mut || ordering(headline.as_ref()));
    report("hpo-toy", &mut hpo);
    report("checkpoint-round-trip", &mut round_trip);
    report("online-offline-parity", &mut || parity(headline.as_ref()));
    // last, so it sees every evaluation above
    report("metric-properties", &mut metric_properties);

    println!("{failed} criteria failed");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
