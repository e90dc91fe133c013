//! Flat key-value run configuration. Missing keys take the full-size profile
//! defaults; unknown keys are rejected by name.

use std::path::Path;

use quarts_tensor::LrSchedule;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{QuartsError, Result};
use crate::text::CatalogSpec;
use crate::train::LoopConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,

    // synthetic corpus
    pub items: usize,
    pub labeled_pairs: usize,
    pub log_pairs: usize,
    pub positive_rate: f64,
    pub hard_fraction: f64,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub min_count: usize,
    pub triples_per_item: usize,

    // model sizes
    pub embed: usize,
    pub hidden: usize,
    pub latent: usize,
    pub dssm_hidden: usize,
    pub dropout: f64,

    // optimization
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub ved_lr: f64,
    pub beta: f64,
    pub p: f64,
    pub clf_epochs: usize,
    pub ved_epochs: usize,
    pub kl_anneal_epochs: usize,
    pub e2e_epochs: usize,
    pub baseline_epochs: usize,
    pub freeze_generator: bool,

    // evaluation
    pub beam_size: usize,
    pub max_generate_len: usize,
    pub generation_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let catalog = CatalogSpec::desk_default(0);
        Self {
            seed: 0,
            precision: Precision::F64,
            items: catalog.items,
            labeled_pairs: catalog.labeled_pairs,
            log_pairs: catalog.log_pairs,
            positive_rate: catalog.positive_rate,
            hard_fraction: catalog.hard_fraction,
            train_fraction: 0.8,
            validation_fraction: 0.1,
            test_fraction: 0.1,
            min_count: 1,
            triples_per_item: 10,
            embed: 300,
            hidden: 300,
            latent: 64,
            dssm_hidden: 300,
            dropout: 0.1,
            batch_size: 128,
            lr: 1e-4,
            lr_decay: 0.8,
            lr_decay_every: 10,
            ved_lr: 1e-3,
            beta: 5.0,
            p: 0.3,
            clf_epochs: 20,
            ved_epochs: 10,
            kl_anneal_epochs: 5,
            e2e_epochs: 20,
            baseline_epochs: 20,
            freeze_generator: false,
            beam_size: 4,
            max_generate_len: 12,
            generation_samples: 500,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| QuartsError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| QuartsError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            QuartsError::Config(m) => QuartsError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(QuartsError::Config(m));
        let fractions = [self.train_fraction, self.validation_fraction, self.test_fraction];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return fail(format!("split fractions {fractions:?} must lie in [0,1] and sum to 1"));
        }
        if !(0.0..1.0).contains(&self.p) {
            return fail(format!("p = {} must lie in [0, 1)", self.p));
        }
        if self.beta < 1.0 {
            return fail(format!("beta = {} must be at least 1", self.beta));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout = {} must lie in [0, 1)", self.dropout));
        }
        if !(0.0..1.0).contains(&self.positive_rate) || !(0.0..=1.0).contains(&self.hard_fraction) {
            return fail("positive_rate must lie in [0,1) and hard_fraction in [0,1]".into());
        }
        for (name, v) in [
            ("embed", self.embed),
            ("hidden", self.hidden),
            ("latent", self.latent),
            ("dssm_hidden", self.dssm_hidden),
            ("batch_size", self.batch_size),
            ("lr_decay_every", self.lr_decay_every),
            ("beam_size", self.beam_size),
            ("max_generate_len", self.max_generate_len),
            ("triples_per_item", self.triples_per_item),
            ("min_count", self.min_count),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        for (name, v) in [("lr", self.lr), ("ved_lr", self.ved_lr), ("lr_decay", self.lr_decay)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} = {v} must be positive"));
            }
        }
        Ok(())
    }

    pub fn catalog(&self) -> CatalogSpec {
        CatalogSpec {
            items: self.items,
            labeled_pairs: self.labeled_pairs,
            log_pairs: self.log_pairs,
            positive_rate: self.positive_rate,
            hard_fraction: self.hard_fraction,
            ..CatalogSpec::desk_default(self.seed)
        }
    }

    pub fn split_ratios(&self) -> [f64; 3] {
        [self.train_fraction, self.validation_fraction, self.test_fraction]
    }

    fn schedule(&self, lr: f64) -> LrSchedule {
        LrSchedule {
            initial: lr,
            decay: self.lr_decay,
            every: self.lr_decay_every,
        }
    }

    pub fn classifier_loop(&self) -> LoopConfig {
        self.loop_config(self.clf_epochs, self.lr)
    }

    pub fn ved_loop(&self) -> LoopConfig {
        self.loop_config(self.ved_epochs, self.ved_lr)
    }

    pub fn e2e_loop(&self) -> LoopConfig {
        self.loop_config(self.e2e_epochs, self.lr)
    }

    pub fn baseline_loop(&self) -> LoopConfig {
        self.loop_config(self.baseline_epochs, self.lr)
    }

    fn loop_config(&self, epochs: usize, lr: f64) -> LoopConfig {
        LoopConfig {
            epochs,
            batch_size: self.batch_size,
            schedule: self.schedule(lr),
            beta: self.beta,
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
