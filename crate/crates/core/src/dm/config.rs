use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DmError;
use crate::encoders::{check_keep, FeaturizerConfig};
use crate::grad::{Activation, AdamConfig};

fn default_seed() -> u64 {
    1
}

fn default_embeddings() -> String {
    "fasttext".into()
}

/// One trained model's architecture and optimizer settings.
///
/// Keep values are keep probabilities: 1.0 disables the dropout layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Label of the embedding table the model is meant for.
    #[serde(default = "default_embeddings")]
    pub embeddings: String,
    pub lstm_size: usize,
    pub lstm_keep: f64,
    pub fc_keep: f64,
    pub learning_rate: f64,
    /// Activation of the fully connected layer after the dialogue LSTM.
    pub activation: Activation,
    pub adam_epsilon: f64,
    pub adam_beta1: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Feed a one-hot of the previous action into the dialogue LSTM.
    #[serde(default)]
    pub prev_action_feature: bool,
    pub featurizer: FeaturizerConfig,
}

impl ModelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, DmError> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| DmError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, DmError> {
        let text = std::fs::read_to_string(path).map_err(|e| DmError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| DmError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), DmError> {
        if self.lstm_size == 0 {
            return Err(DmError::Config("lstm_size must be at least 1".into()));
        }
        check_keep("lstm_keep", self.lstm_keep)?;
        check_keep("fc_keep", self.fc_keep)?;
        self.featurizer.validate()?;
        self.adam().validate()?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.learning_rate, self.adam_beta1, self.adam_epsilon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASELINE: &str = r#"
lstm_size = 55
lstm_keep = 0.85
fc_keep = 0.82
learning_rate = 0.008
activation = "relu"
adam_epsilon = 1e-8
adam_beta1 = 0.9

[featurizer]
kind = "baseline"
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ModelConfig::from_toml_str(BASELINE).unwrap();
        assert_eq!(cfg.lstm_size, 55);
        assert_eq!(cfg.seed, 1);
        assert!(!cfg.prev_action_feature);
        assert_eq!(cfg.featurizer, FeaturizerConfig::Baseline {});
        assert_eq!(ModelConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn fields_of_other_featurizers_are_rejected() {
        let text = BASELINE.replace("kind = \"baseline\"", "kind = \"baseline\"\nfilters = 3");
        assert!(ModelConfig::from_toml_str(&text).is_err());
        let text = BASELINE.replace("kind = \"baseline\"", "kind = \"cnn\"\nfilters = 3\nconv_keep = 0.5\ninput_lstm_size = 4");
        assert!(ModelConfig::from_toml_str(&text).is_err());
        let text = BASELINE.replace("lstm_size = 55", "lstm_size = 55\ninput_lstm_size = 4");
        assert!(ModelConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn cnn_widths_default() {
        let text = BASELINE.replace("kind = \"baseline\"", "kind = \"cnn\"\nfilters = 21\nconv_keep = 0.72");
        let cfg = ModelConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.featurizer, FeaturizerConfig::Cnn { filters: 21, conv_keep: 0.72, widths: vec![3, 4, 5] });
    }

    #[test]
    fn invalid_values_are_rejected() {
        for (from, to) in [
            ("lstm_keep = 0.85", "lstm_keep = 0.0"),
            ("fc_keep = 0.82", "fc_keep = 1.5"),
            ("learning_rate = 0.008", "learning_rate = -1.0"),
            ("lstm_size = 55", "lstm_size = 0"),
            ("adam_beta1 = 0.9", "adam_beta1 = 1.0"),
        ] {
            assert!(ModelConfig::from_toml_str(&BASELINE.replace(from, to)).is_err(), "{to}");
        }
    }

    #[test]
    fn shipped_configs_match_the_published_table() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let load = |n: &str| ModelConfig::load(&dir.join(n)).unwrap();
        // (file, lstm, lstm keep, fc keep, lr, activation, eps, beta1)
        let rows = [
            ("fasttext.cfg", 55, 0.85, 0.82, 0.008, Activation::Relu, 1e-8, 0.9),
            ("fasttext_cnn.cfg", 245, 0.80, 0.79, 0.0001, Activation::Relu, 1e-8, 0.5),
            ("fasttext_rnn.cfg", 505, 0.94, 0.76, 0.0003, Activation::Relu, 1e-8, 0.5),
            ("word2vec.cfg", 85, 0.92, 0.59, 0.001, Activation::Tanh, 1e-8, 0.5),
            ("word2vec_cnn.cfg", 109, 0.79, 0.93, 0.005, Activation::Tanh, 0.1, 0.5),
            ("word2vec_rnn.cfg", 219, 0.74, 0.98, 0.00005, Activation::Relu, 1e-8, 0.9),
        ];
        for (file, lstm, lk, fk, lr, act, eps, b1) in rows {
            let c = load(file);
            assert_eq!(
                (c.lstm_size, c.lstm_keep, c.fc_keep, c.learning_rate, c.activation, c.adam_epsilon, c.adam_beta1),
                (lstm, lk, fk, lr, act, eps, b1),
                "{file}"
            );
        }
        assert_eq!(load("fasttext.cfg").featurizer, FeaturizerConfig::Baseline {});
        assert_eq!(load("word2vec.cfg").featurizer, FeaturizerConfig::Baseline {});
        assert_eq!(
            load("fasttext_cnn.cfg").featurizer,
            FeaturizerConfig::Cnn { filters: 21, conv_keep: 0.72, widths: vec![3, 4, 5] }
        );
        assert_eq!(
            load("word2vec_cnn.cfg").featurizer,
            FeaturizerConfig::Cnn { filters: 6, conv_keep: 0.84, widths: vec![3, 4, 5] }
        );
        assert_eq!(
            load("fasttext_rnn.cfg").featurizer,
            FeaturizerConfig::Rnn { input_lstm_size: 199, input_lstm_keep: 0.97, input_activation: Activation::Tanh }
        );
        assert_eq!(
            load("word2vec_rnn.cfg").featurizer,
            FeaturizerConfig::Rnn { input_lstm_size: 312, input_lstm_keep: 0.91, input_activation: Activation::Tanh }
        );
        for n in ["fasttext.cfg", "fasttext_cnn.cfg", "fasttext_rnn.cfg"] {
            assert_eq!(load(n).embeddings, "fasttext");
        }
        for n in ["word2vec.cfg", "word2vec_cnn.cfg", "word2vec_rnn.cfg"] {
            assert_eq!(load(n).embeddings, "word2vec");
        }
    }
}
