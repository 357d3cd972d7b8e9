use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gp::{expected_improvement, GaussianProcess};
use super::space::{Params, SearchSpace};
use super::HpoError;
use crate::data::PreparedCorpus;
use crate::dm::{derive_seed, train_model, ModelConfig, TrainOptions};
use crate::embeddings::EmbeddingTable;

/// Random suggestions before the surrogate takes over.
pub const WARMUP: usize = 5;
pub const CANDIDATES: usize = 1000;
pub const RESTARTS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Done,
    Failed,
}

/// One line of the history file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    /// 0-based position in the search.
    pub index: usize,
    pub params: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ModelConfig>,
    pub score: f64,
    pub status: TrialStatus,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Bayesian,
    Random,
}

pub fn random_suggest(space: &SearchSpace, rng: &mut impl Rng) -> Params {
    space.sample(rng)
}

/// Next point to evaluate: uniform draws during warm-up or whenever the
/// surrogate cannot be fitted, otherwise the best of [`CANDIDATES`] uniform
/// candidates under expected improvement. Candidates equal to an already
/// evaluated point are skipped.
pub fn suggest(history: &[Trial], space: &SearchSpace, rng: &mut impl Rng) -> Params {
    if history.len() < WARMUP {
        return space.sample(rng);
    }
    let Ok(xs) = history.iter().map(|t| space.encode(&t.params)).collect::<Result<Vec<_>, _>>() else {
        log::warn!("history does not fit the search space; suggesting at random");
        return space.sample(rng);
    };
    let ys: Vec<f64> = history.iter().map(|t| t.score).collect();
    let Some(gp) = GaussianProcess::fit(&xs, &ys, RESTARTS, rng) else {
        return space.sample(rng);
    };
    let best = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut pick: Option<(f64, Params)> = None;
    for _ in 0..CANDIDATES {
        let p = space.sample(rng);
        if history.iter().any(|t| t.params == p) {
            continue;
        }
        let x = space.encode(&p).expect("sampled points are inside the space");
        let (m, s) = gp.predict(&x);
        let ei = expected_improvement(m, s, best);
        if pick.as_ref().is_none_or(|(b, _)| ei > *b) {
            pick = Some((ei, p));
        }
    }
    pick.map_or_else(|| space.sample(rng), |(_, p)| p)
}

#[derive(Clone, Debug)]
pub struct SearchOptions {
    pub budget: usize,
    pub seed: u64,
    pub strategy: Strategy,
    /// JSON-lines history; appended after each trial and resumed from.
    pub history: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best: Trial,
    pub history: Vec<Trial>,
}

/// Reads a history file. A final line cut off mid-write is dropped with a
/// warning; any other malformed line is an error.
pub fn read_history(path: &Path) -> Result<Vec<Trial>, HpoError> {
    let io = |e| HpoError::Io { path: path.display().to_string(), source: e };
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io(e)),
    };
    let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>().map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Trial>(line) {
            Ok(t) => out.push(t),
            Err(_) if i + 1 == lines.len() => {
                log::warn!("{}: ignoring truncated last line", path.display());
            }
            Err(e) => return Err(HpoError::History(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    for (i, t) in out.iter().enumerate() {
        if t.index != i {
            return Err(HpoError::History(format!("{}: trial {} recorded at position {i}", path.display(), t.index)));
        }
    }
    Ok(out)
}

fn write_history(path: &Path, trials: &[Trial]) -> Result<(), HpoError> {
    let io = |e| HpoError::Io { path: path.display().to_string(), source: e };
    let mut text = String::new();
    for t in trials {
        text += &serde_json::to_string(t).expect("trial serializes");
        text.push('\n');
    }
    std::fs::write(path, text).map_err(io)
}

fn append_trial(path: &Path, trial: &Trial) -> Result<(), HpoError> {
    let io = |e| HpoError::Io { path: path.display().to_string(), source: e };
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    let line = serde_json::to_string(trial).expect("trial serializes") + "\n";
    f.write_all(line.as_bytes()).map_err(io)?;
    f.sync_data().map_err(io)
}

/// Sequential search maximizing `objective`. Trial `k` draws from an RNG
/// seeded by `(seed, k)`, so a resumed search suggests exactly what an
/// uninterrupted one would. Objective errors and panics are recorded as
/// failed trials with score 0.
pub fn run_search<F>(space: &SearchSpace, opts: &SearchOptions, mut objective: F) -> Result<SearchOutcome, HpoError>
where
    F: FnMut(&Params) -> Result<f64, String>,
{
    if opts.budget == 0 {
        return Err(HpoError::Usage("budget must be at least 1".into()));
    }
    let mut history = match &opts.history {
        Some(p) => {
            let h = read_history(p)?;
            if let Some(t) = h.iter().find(|t| !space.contains(&t.params)) {
                return Err(HpoError::History(format!(
                    "trial {} in {} does not belong to this search space",
                    t.index,
                    p.display()
                )));
            }
            // rewrite so a dropped partial line does not linger
            write_history(p, &h)?;
            if !h.is_empty() {
                log::info!("resuming from {} completed trials", h.len());
            }
            h
        }
        None => Vec::new(),
    };
    if history.len() > opts.budget {
        log::warn!("history already holds {} trials, more than the budget of {}", history.len(), opts.budget);
    }

    while history.len() < opts.budget {
        let k = history.len();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[opts.seed, k as u64]));
        let params = match opts.strategy {
            Strategy::Bayesian => suggest(&history, space, &mut rng),
            Strategy::Random => random_suggest(space, &mut rng),
        };
        let config = space.featurizer.as_ref().map(|_| space.to_config(&params)).transpose()?;
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| objective(&params)))
            .unwrap_or_else(|_| Err("objective panicked".to_string()))
            .and_then(|s| if s.is_finite() { Ok(s) } else { Err(format!("non-finite score {s}")) });
        let (score, status, error) = match result {
            Ok(s) => (s, TrialStatus::Done, None),
            Err(e) => {
                log::warn!("trial {k} failed: {e}");
                (0.0, TrialStatus::Failed, Some(e))
            }
        };
        let trial =
            Trial { index: k, params, config, score, status, seconds: started.elapsed().as_secs_f64(), error };
        log::info!("trial {k}: score {:.4} ({:?}, {:.1}s)", trial.score, trial.status, trial.seconds);
        if let Some(p) = &opts.history {
            append_trial(p, &trial)?;
        }
        history.push(trial);
    }

    let best = history
        .iter()
        .fold(None::<&Trial>, |b, t| if b.is_none_or(|b| t.score > b.score) { Some(t) } else { b })
        .expect("budget is at least 1")
        .clone();
    Ok(SearchOutcome { best, history })
}

/// Objective for a dialogue-manager search: trains the config built from
/// each assignment and scores its best-epoch dev turn accuracy.
pub fn dialogue_objective<'a>(
    space: &'a SearchSpace,
    corpus: &'a PreparedCorpus,
    table: &'a EmbeddingTable,
    epochs: usize,
) -> impl FnMut(&Params) -> Result<f64, String> + 'a {
    move |params| {
        let config = space.to_config(params).map_err(|e| e.to_string())?;
        let opts = TrainOptions { epochs, ..TrainOptions::default() };
        let (_, report) = train_model(&config, corpus, table, &opts).map_err(|e| e.to_string())?;
        Ok(report.best_dev_turn_accuracy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpo::space::{Dim, ParamValue};

    fn line() -> SearchSpace {
        SearchSpace::new(vec![Dim::float("x", 0.0, 1.0, false)]).unwrap()
    }

    fn x(p: &Params) -> f64 {
        match p["x"] {
            ParamValue::Float(v) => v,
            ref v => panic!("{v:?}"),
        }
    }

    fn trial(index: usize, params: Params, score: f64) -> Trial {
        Trial { index, params, config: None, score, status: TrialStatus::Done, seconds: 0.0, error: None }
    }

    #[test]
    fn warmup_is_uniform() {
        let space = line();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in 0..WARMUP {
            let hist: Vec<Trial> = (0..n).map(|i| trial(i, space.sample(&mut rng), 0.0)).collect();
            let mut a = ChaCha8Rng::seed_from_u64(9);
            let mut b = ChaCha8Rng::seed_from_u64(9);
            assert_eq!(suggest(&hist, &space, &mut a), space.sample(&mut b));
        }
    }

    #[test]
    fn suggestions_stay_in_bounds() {
        let space = SearchSpace::for_featurizer("cnn").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut hist = Vec::new();
        for i in 0..100 {
            let p = if i < 8 { suggest(&hist, &space, &mut rng) } else { suggest(&hist[..8], &space, &mut rng) };
            assert!(space.contains(&p));
            if i < 8 {
                let score = rng.random::<f64>();
                hist.push(trial(i, p, score));
            }
        }
    }

    #[test]
    fn expected_improvement_concentrates_near_the_best_observation() {
        // f(x) = -(x - 0.7)²; compare the suggestion's distance to the best
        // observed point with E|U - x*| = (x*² + (1 - x*)²) / 2 for uniform U
        let space = line();
        let (mut dist, mut uniform) = (0.0, 0.0);
        for rep in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + rep);
            let hist: Vec<Trial> = (0..6)
                .map(|i| {
                    let p = space.sample(&mut rng);
                    let s = -(x(&p) - 0.7).powi(2);
                    trial(i, p, s)
                })
                .collect();
            let best = hist.iter().max_by(|a, b| a.score.total_cmp(&b.score)).unwrap();
            let xb = x(&best.params);
            dist += (x(&suggest(&hist, &space, &mut rng)) - xb).abs();
            uniform += (xb * xb + (1.0 - xb).powi(2)) / 2.0;
        }
        assert!(dist < 0.6 * uniform, "mean distance {} vs uniform {}", dist / 50.0, uniform / 50.0);
    }

    #[test]
    fn constant_history_falls_back_to_random() {
        let space = line();
        let hist: Vec<Trial> = (0..6).map(|i| trial(i, [("x".into(), ParamValue::Float(i as f64 / 6.0))].into(), 0.3)).collect();
        let mut a = ChaCha8Rng::seed_from_u64(2);
        let p = suggest(&hist, &space, &mut a);
        assert!(space.contains(&p));
    }

    #[test]
    fn budget_one_returns_its_trial() {
        let opts = SearchOptions { budget: 1, seed: 3, strategy: Strategy::Bayesian, history: None };
        let out = run_search(&line(), &opts, |p| Ok(x(p))).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.best, out.history[0]);
    }

    #[test]
    fn failures_are_kept_with_score_zero() {
        let opts = SearchOptions { budget: 4, seed: 3, strategy: Strategy::Random, history: None };
        let mut calls = 0;
        let out = run_search(&line(), &opts, |p| {
            calls += 1;
            match calls {
                2 => Err("boom".into()),
                3 => panic!("kaboom"),
                _ => Ok(-1.0 - x(p)),
            }
        })
        .unwrap();
        assert_eq!(out.history.len(), 4);
        assert_eq!(out.history[1].status, TrialStatus::Failed);
        assert_eq!(out.history[2].status, TrialStatus::Failed);
        assert_eq!(out.history[1].score, 0.0);
        assert_eq!(out.best.index, 1);
    }

    #[test]
    fn zero_budget_is_refused() {
        let opts = SearchOptions { budget: 0, seed: 3, strategy: Strategy::Random, history: None };
        assert!(run_search(&line(), &opts, |_| Ok(0.0)).is_err());
    }
}
