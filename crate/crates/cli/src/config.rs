use std::path::Path;

use anyhow::{anyhow, Context, Result};
use neuroaffect::experiments::ExperimentConfig;

/// Reads a TOML experiment configuration. Missing keys take their defaults;
/// unknown or mistyped keys are reported with their full dotted path.
pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("in config {}", path.display()))
}

pub fn parse(text: &str) -> Result<ExperimentConfig> {
    let de =
        toml::Deserializer::parse(text).map_err(|e| anyhow!("{}", e.to_string().trim_end()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow!("key `{path}`: {}", e.into_inner().message().trim_end())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_keeps_defaults() {
        let cfg = parse("folds = 3\n[train]\nepochs = 7\n").unwrap();
        assert_eq!(cfg.folds, 3);
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.n_trees, ExperimentConfig::default().n_trees);
    }

    #[test]
    fn errors_name_the_key_path() {
        let e = parse("[train]\nlr_init = \"fast\"\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("train.lr_init"), "{e}");
        let e = parse("[train.augment]\nnoise = 1.0\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("train.augment"), "{e}");
        assert!(e.contains("noise"), "{e}");
        let e = parse("roster = [\"svm\"]\n").unwrap_err().to_string();
        assert!(e.contains("roster"), "{e}");
    }
}
