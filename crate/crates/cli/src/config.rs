//! TOML run configuration shared by `train` and `explore`.

use std::path::Path;

use circrnn::admm::TrainConfig;
use circrnn::arch::{GateActivation, LayerSpec};
use circrnn::cost::ExploreConfig;
use circrnn::task::{Example, SyntheticTask};
use circrnn::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: LayerSpec,
    #[serde(default)]
    pub cell_input: GateActivation,
    pub task: SyntheticTask,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub explore: ExploreConfig,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_examples: usize,
    pub test_examples: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_examples: 256,
            test_examples: 256,
            seed: 11,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.task.validate()?;
        cfg.train.validate()?;
        if cfg.model.input_dim != cfg.task.input_dim() {
            return Err(Error::Config(format!(
                "model input_dim {} differs from task input_dim {}",
                cfg.model.input_dim,
                cfg.task.input_dim()
            )));
        }
        if cfg.model.model_output_dim() != cfg.task.output_dim() {
            return Err(Error::Config(format!(
                "model output width {} differs from task output_dim {}",
                cfg.model.model_output_dim(),
                cfg.task.output_dim()
            )));
        }
        if cfg.data.train_examples == 0 || cfg.data.test_examples == 0 {
            return Err(Error::Config("train_examples and test_examples must be positive".into()));
        }
        Ok(cfg)
    }

    /// Applies a `--seed` override to data generation and training.
    pub fn reseed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.data.seed = s;
            self.train.seed = s;
        }
    }

    pub fn datasets(&self) -> (Vec<Example>, Vec<Example>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.data.seed);
        let train = self.task.generate(self.data.train_examples, &mut rng);
        let test = self.task.generate(self.data.test_examples, &mut rng);
        (train, test)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
cell = "lstm"
input_dim = 8
layer_sizes = [16]
output_dim = 8
block_size = 4

[task]
name = "copy"
alphabet = 4
length = 3
delay = 2
input_dim = 8
output_dim = 8
"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.model.block_size, 4);
        assert_eq!(cfg.train, TrainConfig::default());
        let (train, test) = cfg.datasets();
        assert_eq!((train.len(), test.len()), (256, 256));
    }

    #[test]
    fn rejects_mismatched_dims_and_unknown_keys() {
        let bad = MINIMAL.replace("input_dim = 8\nlayer", "input_dim = 9\nlayer");
        assert!(RunConfig::parse(&bad).is_err());
        let bad = format!("{MINIMAL}\n[extra]\nx = 1\n");
        assert!(RunConfig::parse(&bad).is_err());
    }
}
