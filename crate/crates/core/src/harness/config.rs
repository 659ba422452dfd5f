//! Single TOML configuration file for every CLI command.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel_sim::codec::CodecMode;
use crate::channel_sim::corpus::CorpusConfig;
use crate::channel_sim::loss::Concealment;
use crate::classifier::ClassifierConfig;
use crate::error::{Error, Result};
use crate::fingerprint::FingerprintConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    /// train on one fold, test on the rest
    pub inverted: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { k: 5, inverted: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub codecs: Vec<CodecMode>,
    pub loss_rates: Vec<f64>,
    /// loss rate of the concealment comparison
    pub concealment_rate: f64,
    pub concealments: Vec<Concealment>,
    pub unlabelled_fractions: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            codecs: CodecMode::ALL.to_vec(),
            loss_rates: vec![0.0, 0.1, 0.2, 0.3],
            concealment_rate: 0.1,
            concealments: vec![Concealment::RepeatSpectrum, Concealment::Silence],
            unlabelled_fractions: vec![0.0, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub corpus: CorpusConfig,
    pub fingerprint: FingerprintConfig,
    pub classifier: ClassifierConfig,
    pub evaluation: EvalConfig,
    pub experiments: ExperimentConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config> {
        let c: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Config::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.evaluation.k < 2 {
            return Err(Error::Config(format!("evaluation.k = {}, need at least 2", self.evaluation.k)));
        }
        if self.corpus.rooms.len() < 2 {
            return Err(Error::Config("corpus needs at least two rooms".into()));
        }
        if self.corpus.positions == 0 {
            return Err(Error::Config("corpus.positions must be positive".into()));
        }
        if !self.experiments.loss_rates.windows(2).all(|w| w[0] <= w[1]) {
            return Err(Error::Config("experiments.loss_rates must be sorted ascending".into()));
        }
        for &r in self
            .experiments
            .loss_rates
            .iter()
            .chain([&self.experiments.concealment_rate, &self.corpus.channel.loss_rate])
        {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("loss rate {r} outside [0, 1]")));
            }
        }
        for &f in &self.experiments.unlabelled_fractions {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("unlabelled fraction {f} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = Config::default();
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = Config::from_toml("[evaluation]\nk = 4\n[corpus]\npositions = 3\n").unwrap();
        assert_eq!(c.evaluation.k, 4);
        assert!(c.evaluation.inverted);
        assert_eq!(c.corpus.positions, 3);
        assert_eq!(c.fingerprint, FingerprintConfig::default());
    }

    #[test]
    fn bad_files_are_config_errors() {
        for text in [
            "[evaluation]\nk = 1\n",
            "[evaluation]\nkk = 3\n",
            "nonsense = [",
            "[experiments]\nloss_rates = [0.3, 0.1]\n",
        ] {
            let e = Config::from_toml(text).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{text}: {e}");
        }
    }
}
