//! Flat `section.key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use repkd::distill::{Distance, ObjectiveConfig};
use repkd::nn::ModelConfig;
use repkd::strategies::{ContextVariantPolicy, StrategyKind};
use repkd::trainer::{OptimizerConfig, OptimizerKind, TrainConfig, DEFAULT_MAX_SYMBOLS};
use repkd::{Error, Result};

/// Every accepted key with its default. An empty default means "derive it".
pub const KEYS: &[(&str, &str, &str)] = &[
    ("data.dir", "", "corpus directory; other data paths default inside it"),
    ("data.train", "", "training manifest (default <data.dir>/train.manifest)"),
    ("data.dev", "", "dev manifest (default <data.dir>/dev.manifest)"),
    ("data.vocab", "", "vocabulary file (default <data.dir>/vocab.txt)"),
    ("model.vocab", "0", "output vocabulary size; 0 reads it from data.vocab"),
    ("model.d_in", "0", "feature dimension; 0 reads it from the corpus"),
    ("model.encoder_hidden", "64", "comma-separated encoder hidden sizes"),
    ("model.d_trs", "64", "encoder output size"),
    ("model.d_embed", "32", "prediction-network embedding size"),
    ("model.d_prd", "64", "prediction-network state size"),
    ("model.d_joint", "64", "joint hidden size"),
    ("model.subsample", "2", "frame stacking factor"),
    ("kd.lambda", "0.01", "distillation weight"),
    ("kd.distance", "l1", "l1 or l2"),
    ("kd.normalize", "false", "divide the distillation sum by the token count"),
    ("kd.strategy", "last", "last, first, uniform, random or meanpool"),
    ("kd.layers_k", "1", "layers taken from the first teacher"),
    ("kd.extra_strategy", "last", "strategy for every further teacher"),
    ("kd.extra_layers_k", "1", "layers taken from every further teacher"),
    ("kd.context_variants", "4", "context variants sampled per epoch"),
    ("kd.mask_rate", "0.1", "mask rate the variants were exported with; 0 pins variant 0"),
    ("kd.models", "", "comma-separated teacher ids"),
    ("kd.teacher_dir", "", "directory holding <id>.trep (default data.dir)"),
    ("train.run_dir", "run", "output directory"),
    ("train.epochs", "20", "epochs of iteration 1"),
    ("train.batch_size", "8", "utterances per update"),
    ("train.optimizer", "sgd", "sgd or adam"),
    ("train.lr", "0.02", "learning rate"),
    ("train.momentum", "0.9", "momentum (adam: beta1)"),
    ("train.clip_norm", "5", "global gradient-norm clip, 0 disables"),
    ("train.seed", "1", "global seed"),
    ("train.threads", "0", "worker threads; 0 defers to REPKD_THREADS"),
    ("train.resume", "false", "continue from the saved training state"),
    ("iter2.epochs", "", "epochs of iteration 2 (default train.epochs)"),
    ("iter2.lr", "", "learning rate of iteration 2 (default train.lr)"),
    ("iter2.fresh_init", "false", "reinitialize instead of warm-starting"),
    ("eval.max_symbols", "10", "greedy emissions allowed per frame"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !known(key) {
            return Err(Error::InvalidConfig(format!("unknown config key {key:?}")));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("{origin}:{}: expected `section.key = value`", n + 1))
            })?;
            self.set(k.trim(), v)
                .map_err(|e| Error::InvalidConfig(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Defaults, then the file, then command-line overrides.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::InvalidConfig(format!("cannot read config {}: {e}", path.display())))?;
            cfg.merge_text(&text, &path.display().to_string())?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .parse()
            .map_err(|e| Error::InvalidConfig(format!("{key} = {:?}: {e}", self.raw(key))))
    }

    fn get_or<T: FromStr>(&self, key: &str, fallback: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        if self.raw(key).is_empty() {
            self.get(fallback)
        } else {
            self.get(key)
        }
    }

    /// `key = value` lines, sorted, for the run log.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    fn data_path(&self, key: &str, file: &str) -> Result<PathBuf> {
        match (self.raw(key), self.raw("data.dir")) {
            (p, _) if !p.is_empty() => Ok(PathBuf::from(p)),
            (_, dir) if !dir.is_empty() => Ok(Path::new(dir).join(file)),
            _ => Err(Error::InvalidConfig(format!("set {key} or data.dir"))),
        }
    }

    pub fn train_manifest(&self) -> Result<PathBuf> {
        self.data_path("data.train", "train.manifest")
    }

    pub fn dev_manifest(&self) -> Result<PathBuf> {
        self.data_path("data.dev", "dev.manifest")
    }

    pub fn vocab_path(&self) -> Result<PathBuf> {
        self.data_path("data.vocab", "vocab.txt")
    }

    pub fn run_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("train.run_dir"))
    }

    pub fn teacher_dir(&self) -> PathBuf {
        match (self.raw("kd.teacher_dir"), self.raw("data.dir")) {
            (t, _) if !t.is_empty() => PathBuf::from(t),
            (_, d) if !d.is_empty() => PathBuf::from(d),
            _ => PathBuf::from("."),
        }
    }

    pub fn teachers(&self) -> Vec<String> {
        self.raw("kd.models")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect()
    }

    /// `vocab` and `d_in` fall back to the supplied corpus values when 0.
    pub fn model(&self, vocab: usize, d_in: usize) -> Result<ModelConfig> {
        let hidden = self
            .raw("model.encoder_hidden")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|e| Error::InvalidConfig(format!("model.encoder_hidden: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let pick = |key: &str, fallback: usize| -> Result<usize> {
            let v: usize = self.get(key)?;
            Ok(if v == 0 { fallback } else { v })
        };
        let cfg = ModelConfig {
            vocab: pick("model.vocab", vocab)?,
            d_in: pick("model.d_in", d_in)?,
            encoder_hidden: hidden,
            d_trs: self.get("model.d_trs")?,
            d_embed: self.get("model.d_embed")?,
            d_prd: self.get("model.d_prd")?,
            d_joint: self.get("model.d_joint")?,
            subsample: self.get("model.subsample")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train(&self, iteration: u8) -> Result<TrainConfig> {
        let (epochs, lr) = if iteration == 2 {
            (self.get_or("iter2.epochs", "train.epochs")?, self.get_or("iter2.lr", "train.lr")?)
        } else {
            (self.get("train.epochs")?, self.get("train.lr")?)
        };
        let cfg = TrainConfig {
            epochs,
            batch_size: self.get("train.batch_size")?,
            optimizer: OptimizerConfig {
                kind: self.get::<OptimizerKind>("train.optimizer")?,
                lr,
                momentum: self.get("train.momentum")?,
                clip_norm: self.get("train.clip_norm")?,
                ..OptimizerConfig::default()
            },
            seed: self.get("train.seed")?,
            threads: self.get("train.threads")?,
            max_symbols: self.get("eval.max_symbols")?,
            fresh_init: self.get("iter2.fresh_init")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn objective(&self) -> Result<ObjectiveConfig> {
        let lambda: f64 = self.get("kd.lambda")?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("kd.lambda = {lambda} must be >= 0")));
        }
        Ok(ObjectiveConfig {
            lambda,
            distance: self.get::<Distance>("kd.distance")?,
            normalize: self.get("kd.normalize")?,
        })
    }

    /// Strategy and K for the `index`-th teacher in `kd.models`.
    pub fn strategy_for(&self, index: usize) -> Result<(StrategyKind, u32)> {
        if index == 0 {
            Ok((self.get("kd.strategy")?, self.get("kd.layers_k")?))
        } else {
            Ok((self.get("kd.extra_strategy")?, self.get("kd.extra_layers_k")?))
        }
    }

    pub fn context(&self) -> Result<ContextVariantPolicy> {
        let p = ContextVariantPolicy {
            variants: self.get("kd.context_variants")?,
            mask_rate: self.get("kd.mask_rate")?,
            seed: self.get("train.seed")?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn max_symbols(&self) -> Result<usize> {
        let v: usize = self.get("eval.max_symbols")?;
        Ok(if v == 0 { DEFAULT_MAX_SYMBOLS } else { v })
    }
}

/// Pulls `--section.key value` and `--section.key=value` pairs out of `args`.
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--").filter(|f| f.split('=').next().is_some_and(|k| k.contains('.'))) else {
            rest.push(a);
            continue;
        };
        match flag.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => {
                let v = it.next().unwrap_or_default();
                overrides.push((flag.to_string(), v));
            }
        }
    }
    (rest, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut c = RunConfig::default();
        c.merge_text("# comment\nkd.lambda = 0.5\n\ntrain.epochs=3 # trailing\n", "t").unwrap();
        c.set("kd.lambda", "0").unwrap();
        assert_eq!(c.raw("kd.lambda"), "0");
        assert_eq!(c.get::<usize>("train.epochs").unwrap(), 3);
        assert!(c.resolved().contains("kd.lambda = 0\n"));
    }

    #[test]
    fn unknown_and_malformed_keys() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("kd.lamda", "1"), Err(Error::InvalidConfig(_))));
        assert!(c.merge_text("train.epochs 3", "t").is_err());
        c.set("train.epochs", "x").unwrap();
        assert!(c.train(1).is_err());
    }

    #[test]
    fn override_extraction() {
        let args = ["repkd", "train", "--kd.lambda", "0", "--iter", "2", "--kd.strategy=uniform"]
            .map(String::from)
            .to_vec();
        let (rest, ov) = split_overrides(args);
        assert_eq!(rest, ["repkd", "train", "--iter", "2"]);
        assert_eq!(
            ov,
            [("kd.lambda".into(), "0".into()), ("kd.strategy".into(), "uniform".into())]
        );
    }

    #[test]
    fn iteration2_falls_back_to_train_values() {
        let mut c = RunConfig::default();
        c.set("train.epochs", "7").unwrap();
        assert_eq!(c.train(2).unwrap().epochs, 7);
        c.set("iter2.epochs", "2").unwrap();
        assert_eq!(c.train(2).unwrap().epochs, 2);
    }
}
