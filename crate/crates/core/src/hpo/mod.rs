//! Hyperparameter search: Gaussian-process expected improvement with a
//! random-search baseline, over a resumable trial history.

use thiserror::Error;

pub mod gp;
mod search;
mod space;

pub use search::{
    dialogue_objective, random_suggest, read_history, run_search, suggest, SearchOptions, SearchOutcome, Strategy,
    Trial, TrialStatus, CANDIDATES, RESTARTS, WARMUP,
};
pub use space::{Dim, DimKind, ParamValue, Params, SearchSpace};

#[derive(Debug, Error)]
pub enum HpoError {
    #[error("search space: {0}")]
    Space(String),
    #[error("history: {0}")]
    History(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Negated 2-D quadratic with its maximum 0 at (0.3, -0.2), searched over
/// [-1, 1]². A cheap stand-in for a training run.
pub mod toy {
    use super::{Dim, ParamValue, Params, SearchSpace};

    pub const OPTIMUM: f64 = 0.0;

    pub fn space() -> SearchSpace {
        SearchSpace::new(vec![Dim::float("x", -1.0, 1.0, false), Dim::float("y", -1.0, 1.0, false)])
            .expect("toy space is valid")
    }

    pub fn objective(p: &Params) -> f64 {
        let get = |k: &str| match p.get(k) {
            Some(ParamValue::Float(v)) => *v,
            other => panic!("toy objective needs a float {k}, got {other:?}"),
        };
        -((get("x") - 0.3).powi(2) + (get("y") + 0.2).powi(2))
    }
}
