use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HpoError;
use crate::dm::ModelConfig;

/// A sampled hyperparameter value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl ParamValue {
    fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(i) => Some(*i as f64),
            ParamValue::Float(x) => Some(*x),
            ParamValue::Text(_) => None,
        }
    }

    fn to_toml(&self) -> toml::Value {
        match self {
            ParamValue::Int(i) => toml::Value::Integer(*i),
            ParamValue::Float(x) => toml::Value::Float(*x),
            ParamValue::Text(s) => toml::Value::String(s.clone()),
        }
    }

    fn from_toml(v: &toml::Value) -> Option<Self> {
        Some(match v {
            toml::Value::Integer(i) => ParamValue::Int(*i),
            toml::Value::Float(x) => ParamValue::Float(*x),
            toml::Value::String(s) => ParamValue::Text(s.clone()),
            _ => return None,
        })
    }
}

/// One assignment of every dimension, keyed by dimension name.
pub type Params = BTreeMap<String, ParamValue>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DimKind {
    Int {
        low: i64,
        high: i64,
        #[serde(default)]
        log: bool,
    },
    Float {
        low: f64,
        high: f64,
        #[serde(default)]
        log: bool,
    },
    Categorical { choices: Vec<ParamValue> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dim {
    pub name: String,
    #[serde(flatten)]
    pub kind: DimKind,
}

impl Dim {
    pub fn int(name: &str, low: i64, high: i64, log: bool) -> Self {
        Dim { name: name.into(), kind: DimKind::Int { low, high, log } }
    }

    pub fn float(name: &str, low: f64, high: f64, log: bool) -> Self {
        Dim { name: name.into(), kind: DimKind::Float { low, high, log } }
    }

    pub fn categorical(name: &str, choices: Vec<ParamValue>) -> Self {
        Dim { name: name.into(), kind: DimKind::Categorical { choices } }
    }

    /// Width of this dimension in the surrogate's input space.
    fn width(&self) -> usize {
        match &self.kind {
            DimKind::Categorical { choices } => choices.len(),
            _ => 1,
        }
    }

    fn validate(&self) -> Result<(), HpoError> {
        let bad = |m: &str| Err(HpoError::Space(format!("dimension {}: {m}", self.name)));
        match &self.kind {
            DimKind::Int { low, high, log } => {
                if low > high {
                    return bad("low exceeds high");
                }
                if *log && *low < 1 {
                    return bad("log-scaled integers need low >= 1");
                }
            }
            DimKind::Float { low, high, log } => {
                if !(low.is_finite() && high.is_finite()) || low > high {
                    return bad("bounds must be finite with low <= high");
                }
                if *log && *low <= 0.0 {
                    return bad("log-scaled floats need low > 0");
                }
            }
            DimKind::Categorical { choices } => {
                if choices.is_empty() {
                    return bad("no choices");
                }
            }
        }
        Ok(())
    }

    fn contains(&self, v: &ParamValue) -> bool {
        match (&self.kind, v) {
            (DimKind::Int { low, high, .. }, ParamValue::Int(i)) => low <= i && i <= high,
            (DimKind::Float { low, high, .. }, v) => v.as_f64().is_some_and(|x| *low <= x && x <= *high),
            (DimKind::Categorical { choices }, v) => choices.contains(v),
            _ => false,
        }
    }

    /// Position of a numeric value in [0, 1] (log-transformed where flagged).
    fn unit(&self, x: f64) -> f64 {
        let (lo, hi, log) = match self.kind {
            DimKind::Int { low, high, log } => (low as f64, high as f64, log),
            DimKind::Float { low, high, log } => (low, high, log),
            DimKind::Categorical { .. } => unreachable!("categoricals are one-hot encoded"),
        };
        let (lo, hi, x) = if log { (lo.ln(), hi.ln(), x.ln()) } else { (lo, hi, x) };
        if hi > lo {
            ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.5
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> ParamValue {
        match &self.kind {
            DimKind::Int { low, high, log: false } => ParamValue::Int(rng.random_range(*low..=*high)),
            DimKind::Int { low, high, log: true } => {
                // log-uniform over [low, high + 1), floored, so every integer has mass
                let (a, b) = ((*low as f64).ln(), ((*high + 1) as f64).ln());
                let x = rng.random_range(a..b).exp().floor() as i64;
                ParamValue::Int(x.clamp(*low, *high))
            }
            DimKind::Float { low, high, log } => {
                if low == high {
                    return ParamValue::Float(*low);
                }
                let x = if *log {
                    rng.random_range(low.ln()..high.ln()).exp()
                } else {
                    rng.random_range(*low..*high)
                };
                ParamValue::Float(x.clamp(*low, *high))
            }
            DimKind::Categorical { choices } => choices[rng.random_range(0..choices.len())].clone(),
        }
    }
}

/// Hyperparameter search space. When `featurizer` is set, assignments map
/// onto [`ModelConfig`]s: dimension names are config keys, `fixed` supplies
/// the keys that are not searched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    #[serde(default)]
    pub featurizer: Option<String>,
    #[serde(default)]
    pub fixed: toml::Table,
    pub dims: Vec<Dim>,
}

const FEATURIZER_KEYS: [&str; 6] = ["filters", "conv_keep", "widths", "input_lstm_size", "input_lstm_keep", "input_activation"];

fn text(s: &str) -> ParamValue {
    ParamValue::Text(s.into())
}

impl SearchSpace {
    pub fn new(dims: Vec<Dim>) -> Result<Self, HpoError> {
        let space = SearchSpace { featurizer: None, fixed: toml::Table::new(), dims };
        space.validate()?;
        Ok(space)
    }

    /// The default search space for a featurizer kind (`baseline`, `cnn`, `rnn`).
    pub fn for_featurizer(kind: &str) -> Result<Self, HpoError> {
        let mut dims = vec![
            Dim::int("lstm_size", 32, 512, true),
            Dim::float("lstm_keep", 0.5, 1.0, false),
            Dim::float("fc_keep", 0.5, 1.0, false),
            Dim::float("learning_rate", 1e-5, 1e-2, true),
            Dim::categorical("activation", vec![text("relu"), text("tanh")]),
            Dim::float("adam_epsilon", 1e-8, 0.1, true),
            Dim::categorical("adam_beta1", vec![ParamValue::Float(0.5), ParamValue::Float(0.9)]),
        ];
        match kind {
            "baseline" => {}
            "cnn" => {
                dims.push(Dim::int("filters", 4, 64, false));
                dims.push(Dim::float("conv_keep", 0.5, 1.0, false));
            }
            "rnn" => {
                dims.push(Dim::int("input_lstm_size", 32, 512, false));
                dims.push(Dim::float("input_lstm_keep", 0.5, 1.0, false));
                dims.push(Dim::categorical("input_activation", vec![text("relu"), text("tanh")]));
            }
            other => return Err(HpoError::Space(format!("unknown featurizer kind {other:?}"))),
        }
        let space = SearchSpace { featurizer: Some(kind.into()), fixed: toml::Table::new(), dims };
        space.validate()?;
        Ok(space)
    }

    pub fn from_toml_str(s: &str) -> Result<Self, HpoError> {
        let space: SearchSpace = toml::from_str(s).map_err(|e| HpoError::Space(e.to_string()))?;
        space.validate()?;
        Ok(space)
    }

    pub fn load(path: &Path) -> Result<Self, HpoError> {
        let s = std::fs::read_to_string(path).map_err(|e| HpoError::Io { path: path.display().to_string(), source: e })?;
        Self::from_toml_str(&s).map_err(|e| HpoError::Space(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("search space is representable as TOML")
    }

    pub fn validate(&self) -> Result<(), HpoError> {
        if self.dims.is_empty() {
            return Err(HpoError::Space("no dimensions".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.dims {
            d.validate()?;
            if !seen.insert(d.name.as_str()) {
                return Err(HpoError::Space(format!("dimension {} appears twice", d.name)));
            }
        }
        if self.featurizer.is_some() {
            // fail early rather than on the first trial
            let probe = self.sample(&mut ChaCha8Rng::seed_from_u64(0));
            self.to_config(&probe)?;
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Params {
        self.dims.iter().map(|d| (d.name.clone(), d.sample(rng))).collect()
    }

    pub fn contains(&self, params: &Params) -> bool {
        params.len() == self.dims.len() && self.dims.iter().all(|d| params.get(&d.name).is_some_and(|v| d.contains(v)))
    }

    /// Width of the surrogate's input vectors.
    pub fn encoded_len(&self) -> usize {
        self.dims.iter().map(Dim::width).sum()
    }

    /// Maps an assignment to the unit cube: numeric dims scaled (after a log
    /// where flagged), categoricals one-hot.
    pub fn encode(&self, params: &Params) -> Result<Vec<f64>, HpoError> {
        let mut out = Vec::with_capacity(self.encoded_len());
        for d in &self.dims {
            let v = params.get(&d.name).ok_or_else(|| HpoError::Space(format!("missing value for {}", d.name)))?;
            if !d.contains(v) {
                return Err(HpoError::Space(format!("{} = {v:?} is outside the space", d.name)));
            }
            match &d.kind {
                DimKind::Categorical { choices } => out.extend(choices.iter().map(|c| if c == v { 1.0 } else { 0.0 })),
                _ => out.push(d.unit(v.as_f64().expect("numeric dim holds a number"))),
            }
        }
        Ok(out)
    }

    /// Builds the model config for an assignment.
    pub fn to_config(&self, params: &Params) -> Result<ModelConfig, HpoError> {
        let kind = self.featurizer.as_deref().ok_or_else(|| HpoError::Space("space has no featurizer".into()))?;
        let mut top = toml::Table::new();
        let mut feat = toml::Table::new();
        feat.insert("kind".into(), toml::Value::String(kind.into()));
        let entries = self.fixed.iter().map(|(k, v)| (k.clone(), v.clone()));
        let searched = params.iter().map(|(k, v)| (k.clone(), v.to_toml()));
        for (k, v) in entries.chain(searched) {
            if FEATURIZER_KEYS.contains(&k.as_str()) {
                feat.insert(k, v);
            } else {
                top.insert(k, v);
            }
        }
        top.insert("featurizer".into(), toml::Value::Table(feat));
        let cfg: ModelConfig = toml::Value::Table(top).try_into().map_err(|e| HpoError::Space(format!("{e}")))?;
        cfg.validate().map_err(|e| HpoError::Space(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads this space's dimensions back out of a config; `None` when a key
    /// is missing or not representable.
    pub fn params_of(&self, config: &ModelConfig) -> Option<Params> {
        let toml::Value::Table(mut top) = toml::Value::try_from(config).ok()? else {
            return None;
        };
        let feat = match top.remove("featurizer") {
            Some(toml::Value::Table(t)) => t,
            _ => toml::Table::new(),
        };
        self.dims
            .iter()
            .map(|d| {
                let v = top.get(&d.name).or_else(|| feat.get(&d.name))?;
                Some((d.name.clone(), ParamValue::from_toml(v)?))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_stay_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in ["baseline", "cnn", "rnn"] {
            let space = SearchSpace::for_featurizer(kind).unwrap();
            for _ in 0..1000 {
                let p = space.sample(&mut rng);
                assert!(space.contains(&p), "{p:?}");
                let x = space.encode(&p).unwrap();
                assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
                space.to_config(&p).unwrap();
            }
        }
    }

    #[test]
    fn log_scaled_learning_rate_median() {
        // log-uniform on [1e-5, 1e-2] has median 10^-3.5
        let space = SearchSpace::new(vec![Dim::float("learning_rate", 1e-5, 1e-2, true)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut xs: Vec<f64> = (0..10_000)
            .map(|_| match space.sample(&mut rng)["learning_rate"] {
                ParamValue::Float(x) => x,
                ref v => panic!("{v:?}"),
            })
            .collect();
        xs.sort_by(f64::total_cmp);
        let median = xs[5000];
        assert!((1e-4..=1e-3).contains(&median), "{median}");
        assert!((median.log10() + 3.5).abs() < 0.1, "{median}");
    }

    #[test]
    fn log_integer_draws_cover_both_ends() {
        let d = Dim::int("n", 1, 8, true);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws: Vec<i64> = (0..4000)
            .map(|_| match d.sample(&mut rng) {
                ParamValue::Int(i) => i,
                v => panic!("{v:?}"),
            })
            .collect();
        // P(1) = ln 2 / ln 9 ≈ 0.315, P(8) = ln(9/8) / ln 9 ≈ 0.054
        let p1 = draws.iter().filter(|&&i| i == 1).count() as f64 / 4000.0;
        let p8 = draws.iter().filter(|&&i| i == 8).count() as f64 / 4000.0;
        assert!((p1 - 0.315).abs() < 0.03, "{p1}");
        assert!((p8 - 0.054).abs() < 0.015, "{p8}");
    }

    #[test]
    fn same_seed_same_sequence() {
        let space = SearchSpace::for_featurizer("cnn").unwrap();
        let a: Vec<Params> = (0..5).scan(ChaCha8Rng::seed_from_u64(1), |r, _| Some(space.sample(r))).collect();
        let b: Vec<Params> = (0..5).scan(ChaCha8Rng::seed_from_u64(1), |r, _| Some(space.sample(r))).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn shipped_configs_lie_inside_their_spaces() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for (file, kind) in [
            ("fasttext", "baseline"),
            ("word2vec", "baseline"),
            ("fasttext_cnn", "cnn"),
            ("word2vec_cnn", "cnn"),
            ("fasttext_rnn", "rnn"),
            ("word2vec_rnn", "rnn"),
        ] {
            let cfg = ModelConfig::load(&dir.join(format!("{file}.cfg"))).unwrap();
            let space = SearchSpace::for_featurizer(kind).unwrap();
            let p = space.params_of(&cfg).unwrap();
            assert!(space.contains(&p), "{file}: {p:?}");
            let mut rebuilt = space.to_config(&p).unwrap();
            rebuilt.embeddings.clone_from(&cfg.embeddings);
            assert_eq!(rebuilt, cfg, "{file}");
        }
    }

    #[test]
    fn shipped_space_files_match_the_builtin_spaces() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for kind in ["baseline", "cnn", "rnn"] {
            let file = SearchSpace::load(&dir.join(format!("space_{kind}.toml"))).unwrap();
            assert_eq!(file, SearchSpace::for_featurizer(kind).unwrap(), "{kind}");
        }
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let space = SearchSpace::for_featurizer("rnn").unwrap();
        assert_eq!(SearchSpace::from_toml_str(&space.to_toml_string()).unwrap(), space);

        let text = r#"
[[dims]]
name = "x"
kind = "float"
low = 1.0
high = 0.0
"#;
        assert!(SearchSpace::from_toml_str(text).is_err());
        let text = r#"
featurizer = "cnn"
[[dims]]
name = "lstm_size"
kind = "int"
low = 8
high = 16
"#;
        // keys the config needs are neither searched nor fixed
        assert!(SearchSpace::from_toml_str(text).is_err());
    }

    #[test]
    fn encoding_is_one_hot_for_categoricals() {
        let space = SearchSpace::new(vec![
            Dim::float("a", 0.0, 2.0, false),
            Dim::categorical("b", vec![text("x"), text("y"), text("z")]),
            Dim::int("c", 1, 100, true),
        ])
        .unwrap();
        let p: Params =
            [("a".into(), ParamValue::Float(0.5)), ("b".into(), text("y")), ("c".into(), ParamValue::Int(10))].into();
        let x = space.encode(&p).unwrap();
        assert_eq!(x.len(), 5);
        assert_eq!(&x[..4], &[0.25, 0.0, 1.0, 0.0]);
        assert!((x[4] - 0.5).abs() < 1e-12);
    }
}
