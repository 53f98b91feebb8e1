//! Experiment configuration: one TOML document with a section per stage.
//! Every key is optional; unknown keys are an error naming their dotted path.

use std::path::PathBuf;

use fairssl::augment::AugmentConfig;
use fairssl::dataio::SplitFractions;
use fairssl::diffcore::Padding;
use fairssl::fairmetrics::{BootstrapConfig, ReportConfig};
use fairssl::models::FreezeMask;
use fairssl::objectives::{ContrastiveConfig, OptimizerConfig};
use fairssl::trainer::{RunConfig, Workflow};
use fairssl::{EncoderSpec, Split, SynthSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct ExperimentConfig {
    /// Root of every derived seed: data generation, split, training,
    /// bootstrap and CKA subsets.
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
    pub supervised: SupervisedSection,
    pub fairness: FairnessSection,
    pub cka: CkaSection,
    pub output: OutputSection,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct DataSection {
    /// Dataset directory; `<out>/data` when unset. Relative paths honour
    /// `FAIRSSL_DATA_ROOT`.
    pub dir: Option<PathBuf>,
    pub synthetic: SynthSpec,
    pub split: SplitFractions,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub kernel_sizes: [usize; 3],
    pub filters: [usize; 3],
    pub dropout: f64,
    pub padding: Padding,
}

impl Default for ModelSection {
    fn default() -> Self {
        let e = EncoderSpec::default();
        ModelSection {
            kernel_sizes: e.kernel_sizes,
            filters: e.filters,
            dropout: e.dropout,
            padding: e.padding,
        }
    }
}

impl ModelSection {
    pub fn encoder(&self) -> EncoderSpec {
        EncoderSpec {
            kernel_sizes: self.kernel_sizes,
            filters: self.filters,
            dropout: self.dropout,
            padding: self.padding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainSection {
    pub epochs: usize,
    /// Positive pairs per batch.
    pub batch_size: usize,
    pub lr: f64,
    pub temperature: f64,
    pub augment: AugmentConfig,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let r = RunConfig::pretrain(0);
        let OptimizerConfig::SgdCosine { base_lr, .. } = r.optimizer else {
            unreachable!("pretraining defaults to SGD")
        };
        PretrainSection {
            epochs: r.epochs,
            batch_size: r.batch_size,
            lr: base_lr,
            temperature: r.contrastive.temperature,
            augment: r.augment,
        }
    }
}

fn adadelta_defaults() -> (usize, usize, f64, f64, f64) {
    let r = RunConfig::finetune(FreezeMask::TRAINABLE, 0);
    let OptimizerConfig::Adadelta { lr, rho, eps } = r.optimizer else {
        unreachable!("fine-tuning defaults to Adadelta")
    };
    (r.epochs, r.batch_size, lr, rho, eps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    /// Masks trained by `finetune` without `--mask`: `"all"` or masks such
    /// as `"TFT"` / `"•∘•"`.
    pub masks: Vec<String>,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let (epochs, batch_size, lr, rho, eps) = adadelta_defaults();
        FinetuneSection {
            epochs,
            batch_size,
            lr,
            rho,
            eps,
            masks: vec!["all".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisedSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Default for SupervisedSection {
    fn default() -> Self {
        let (epochs, batch_size, lr, rho, eps) = adadelta_defaults();
        SupervisedSection {
            epochs,
            batch_size,
            lr,
            rho,
            eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct AttributeChoice {
    pub name: String,
    /// Overrides the dataset's privileged designation.
    pub privileged: Option<String>,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FairnessSection {
    /// Split that models are evaluated on.
    pub split: Split,
    pub threshold: f64,
    pub replicates: usize,
    pub level: f64,
    /// Attributes to audit; every dataset attribute when empty.
    pub attributes: Vec<AttributeChoice>,
    /// Reference model of the segment table and model comparisons.
    pub baseline: String,
}

impl Default for FairnessSection {
    fn default() -> Self {
        let r = ReportConfig::default();
        FairnessSection {
            split: Split::Test,
            threshold: r.threshold,
            replicates: r.bootstrap.replicates,
            level: r.bootstrap.level,
            attributes: Vec::new(),
            baseline: "supervised".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CkaSection {
    /// Attribute the grids are conditioned on.
    pub attribute: String,
    pub min_n: usize,
    pub model_a: String,
    pub model_b: String,
}

impl Default for CkaSection {
    fn default() -> Self {
        CkaSection {
            attribute: "gender".into(),
            min_n: 50,
            model_a: "supervised".into(),
            model_b: "ssl-TFT".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    /// Used when `--out` is not given.
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

impl ExperimentConfig {
    /// Parses a TOML document, rejecting keys no section knows.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let mut unknown = Vec::new();
        let de = toml::Deserializer::parse(text).map_err(|e| CliError::Config(e.to_string()))?;
        let cfg: ExperimentConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
            .map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(key) = unknown.into_iter().next() {
            return Err(CliError::UnknownKey { key });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.data.synthetic.validate()?;
        self.data.split.validate()?;
        self.pretrain_run().validate()?;
        self.supervised_run().validate()?;
        for mask in self.masks(None)? {
            self.finetune_run(mask).validate()?;
        }
        self.report_config().bootstrap.validate()?;
        if !(0.0..=1.0).contains(&self.fairness.threshold) {
            return Err(CliError::Config(format!(
                "fairness.threshold must lie in [0, 1], got {}",
                self.fairness.threshold
            )));
        }
        if self.cka.min_n < 2 {
            return Err(CliError::Config("cka.min_n must be at least 2".into()));
        }
        Ok(())
    }

    pub fn pretrain_run(&self) -> RunConfig {
        RunConfig {
            workflow: Workflow::Pretrain,
            encoder: self.model.encoder(),
            epochs: self.pretrain.epochs,
            batch_size: self.pretrain.batch_size,
            optimizer: OptimizerConfig::sgd_cosine(self.pretrain.lr, self.pretrain.epochs),
            augment: self.pretrain.augment,
            contrastive: ContrastiveConfig {
                temperature: self.pretrain.temperature,
            },
            seed: self.seed,
        }
    }

    /// Each mask trains from its own seed, derived from the root seed and
    /// the mask bits.
    pub fn finetune_run(&self, mask: FreezeMask) -> RunConfig {
        let bits = mask.frozen.iter().fold(0u64, |acc, &f| acc << 1 | u64::from(f));
        RunConfig {
            workflow: Workflow::Finetune { mask },
            epochs: self.finetune.epochs,
            batch_size: self.finetune.batch_size,
            optimizer: OptimizerConfig::Adadelta {
                lr: self.finetune.lr,
                rho: self.finetune.rho,
                eps: self.finetune.eps,
            },
            seed: fairssl::SeedTree::new(self.seed).key("finetune", &[bits]),
            ..self.pretrain_run()
        }
    }

    pub fn supervised_run(&self) -> RunConfig {
        RunConfig {
            workflow: Workflow::Supervised,
            epochs: self.supervised.epochs,
            batch_size: self.supervised.batch_size,
            optimizer: OptimizerConfig::Adadelta {
                lr: self.supervised.lr,
                rho: self.supervised.rho,
                eps: self.supervised.eps,
            },
            ..self.pretrain_run()
        }
    }

    pub fn report_config(&self) -> ReportConfig {
        ReportConfig {
            threshold: self.fairness.threshold,
            bootstrap: BootstrapConfig {
                replicates: self.fairness.replicates,
                level: self.fairness.level,
                seed: self.seed,
            },
        }
    }

    /// Masks selected by `--mask` (or the config when absent), expanding
    /// `all` and dropping repeats.
    pub fn masks(&self, flag: Option<&str>) -> Result<Vec<FreezeMask>, CliError> {
        let specs: Vec<String> = match flag {
            Some(f) => f.split(',').map(str::to_string).collect(),
            None => self.finetune.masks.clone(),
        };
        let mut masks = Vec::new();
        for s in specs {
            let s = s.trim();
            let expanded = if s.eq_ignore_ascii_case("all") {
                FreezeMask::all()
            } else {
                vec![s.parse::<FreezeMask>()?]
            };
            for m in expanded {
                if !masks.contains(&m) {
                    masks.push(m);
                }
            }
        }
        if masks.is_empty() {
            return Err(CliError::Config("no freeze mask selected".into()));
        }
        Ok(masks)
    }
}

/// Run directory name of a fine-tuned model.
pub fn finetune_name(mask: FreezeMask) -> String {
    format!("ssl-{}", mask.ascii())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_key_reports_its_path() {
        let err = ExperimentConfig::from_toml("[pretrain]\nepoch = 5\n").unwrap_err();
        match err {
            CliError::UnknownKey { key } => assert_eq!(key, "pretrain.epoch"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nested_unknown_key_is_rejected() {
        let err = ExperimentConfig::from_toml("[data.synthetic]\nsamples = 5\n").unwrap_err();
        assert!(err.to_string().contains("samples"), "{err}");
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 7;
        cfg.finetune.masks = vec!["TFT".into()];
        cfg.data.dir = Some("elsewhere".into());
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn mask_flag_accepts_both_notations() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.masks(Some("•∘•,TFT")).unwrap(), vec!["TFT".parse().unwrap()]);
        assert_eq!(cfg.masks(Some("all")).unwrap().len(), 8);
        assert!(cfg.masks(Some("TXT")).is_err());
    }

    #[test]
    fn finetune_seeds_differ_per_mask() {
        let cfg = ExperimentConfig::default();
        let seeds: Vec<u64> = FreezeMask::all().into_iter().map(|m| cfg.finetune_run(m).seed).collect();
        let mut unique = seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), 8);
    }
}
