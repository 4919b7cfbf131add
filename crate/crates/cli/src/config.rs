//! Experiment configuration: the full recipe for one bar of a figure, its
//! canonical hash, and the standard desk-scale suite grids.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use pvrbench_core::backbone::Layer;
use pvrbench_core::env::EnvId;
use pvrbench_core::imitation::{ControlPolicyConfig, NavPolicyConfig, TrainMode};
use pvrbench_core::pretrain::augment::AugmentationPolicy;
use pvrbench_core::pretrain::corpus::CorpusSource;
use pvrbench_core::{Error, Result};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// How the perception module is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Moco,
    Supervised,
    Random,
    FromScratch,
    GroundTruth,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Moco => "moco",
            Method::Supervised => "supervised",
            Method::Random => "random",
            Method::FromScratch => "from_scratch",
            Method::GroundTruth => "ground_truth",
        }
    }

    /// Whether this method pretrains (and caches) a staged backbone.
    pub fn has_backbone(self) -> bool {
        matches!(self, Method::Moco | Method::Supervised)
    }
}

/// Pretraining loop sizes (desk defaults).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainCfg {
    pub epochs: usize,
    pub batch_size: usize,
    pub queue_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub temperature: f32,
}

impl Default for PretrainCfg {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 32,
            queue_size: 256,
            learning_rate: 0.05,
            momentum: 0.99,
            temperature: 0.07,
        }
    }
}

/// Compression fine-tuning sizes (used when `compression` is set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionCfg {
    pub epochs: usize,
    pub batch_size: usize,
    pub queue_size: usize,
    pub learning_rate: f32,
}

impl Default for CompressionCfg {
    fn default() -> Self {
        Self { epochs: 3, batch_size: 16, queue_size: 128, learning_rate: 0.01 }
    }
}

/// The full perception recipe: method, pretraining data, augmentations,
/// layer taps, and freeze mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvrRecipe {
    pub method: Method,
    pub corpus: CorpusSource,
    pub corpus_size: usize,
    pub augmentation: AugmentationPolicy,
    pub layers: Vec<Layer>,
    pub compression: bool,
    pub mode: TrainMode,
    pub backbone_seed: u64,
    pub pretrain: PretrainCfg,
    pub compression_cfg: CompressionCfg,
}

impl Default for PvrRecipe {
    fn default() -> Self {
        Self {
            method: Method::Moco,
            corpus: CorpusSource::SyntheticOod,
            corpus_size: 512,
            augmentation: AugmentationPolicy::AugPlus,
            layers: vec![Layer::L5],
            compression: false,
            mode: TrainMode::Frozen,
            backbone_seed: 0,
            pretrain: PretrainCfg::default(),
            compression_cfg: CompressionCfg::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetCfg {
    pub n_traj: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCfg {
    /// Updates (nav) or epochs (control) between evaluation points.
    pub eval_every: usize,
    pub n_rollouts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub experiment_id: String,
    pub env_id: EnvId,
    pub pvr: PvrRecipe,
    pub dataset: DatasetCfg,
    pub nav_policy: Option<NavPolicyConfig>,
    pub control_policy: Option<ControlPolicyConfig>,
    pub eval: EvalCfg,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported config format version {}",
                self.format_version
            )));
        }
        if self.experiment_id.is_empty() {
            return Err(Error::InvalidConfig("empty experiment id".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("no seeds listed".into()));
        }
        if self.dataset.n_traj == 0 {
            return Err(Error::InvalidConfig("dataset needs at least one trajectory".into()));
        }
        match self.env_id {
            EnvId::Gridnav if self.nav_policy.is_none() => {
                return Err(Error::InvalidConfig("gridnav config needs nav_policy".into()))
            }
            EnvId::Armreach if self.control_policy.is_none() => {
                return Err(Error::InvalidConfig("armreach config needs control_policy".into()))
            }
            _ => {}
        }
        let p = &self.pvr;
        match p.method {
            Method::GroundTruth => {
                if p.mode != TrainMode::Frozen {
                    return Err(Error::InvalidConfig(
                        "ground-truth features are always frozen".into(),
                    ));
                }
            }
            Method::FromScratch => {
                if p.mode != TrainMode::FromScratch {
                    return Err(Error::InvalidConfig(
                        "from_scratch method requires from_scratch mode".into(),
                    ));
                }
            }
            Method::Random => {
                if p.mode != TrainMode::Frozen {
                    return Err(Error::InvalidConfig(
                        "random features run frozen; use from_scratch to train them".into(),
                    ));
                }
            }
            Method::Moco | Method::Supervised => {
                if p.mode == TrainMode::FromScratch {
                    return Err(Error::InvalidConfig(
                        "a pretrained backbone cannot run from scratch".into(),
                    ));
                }
                if p.layers.is_empty() {
                    return Err(Error::InvalidConfig("no tap layers selected".into()));
                }
                let needs_compression = p.layers.iter().any(|&l| l != Layer::L5);
                if needs_compression && !p.compression {
                    return Err(Error::InvalidConfig(
                        "L3/L4 taps require compression".into(),
                    ));
                }
                if p.method == Method::Supervised && p.corpus != CorpusSource::SyntheticOod {
                    return Err(Error::InvalidConfig(
                        "supervised pretraining needs the labeled synthetic corpus".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialized form (sorted keys, no whitespace).
    pub fn hash(&self) -> String {
        hash_value(&serde_json::to_value(self).expect("config serializes"))
    }

    /// Cache key for the pretrained perception artifact: every field that
    /// influences pretraining, excluding BC-side settings and freeze mode.
    pub fn recipe_hash(&self) -> String {
        let key = serde_json::json!({
            "env_id": self.env_id,
            "method": self.pvr.method,
            "corpus": self.pvr.corpus,
            "corpus_size": self.pvr.corpus_size,
            "augmentation": self.pvr.augmentation,
            "layers": self.pvr.layers,
            "compression": self.pvr.compression,
            "backbone_seed": self.pvr.backbone_seed,
            "pretrain": self.pvr.pretrain,
            "compression_cfg": self.pvr.compression_cfg,
        });
        hash_value(&key)
    }

    /// Cache key for the demonstration dataset.
    pub fn dataset_hash(&self) -> String {
        let key = serde_json::json!({
            "env_id": self.env_id,
            "n_traj": self.dataset.n_traj,
            "seed": self.dataset.seed,
        });
        hash_value(&key)
    }
}

/// Canonical JSON: objects with sorted keys, no whitespace.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_canonical(v, &mut out);
    out
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).unwrap());
                out.push(':');
                write_canonical(&map[*k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        other => out.push_str(&serde_json::to_string(other).unwrap()),
    }
}

pub fn hash_value(v: &Value) -> String {
    let mut h = Sha256::new();
    h.update(canonical_json(v).as_bytes());
    let mut s = String::with_capacity(64);
    for b in h.finalize() {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

pub const SUITE_SEEDS: [u64; 5] = [101, 202, 303, 404, 505];

fn desk_nav_policy() -> NavPolicyConfig {
    // short windows with many of them: trajectories average ~7 steps, so long
    // windows would be mostly masked padding
    NavPolicyConfig {
        mlp_hidden: 128,
        lstm_hidden: 128,
        windows_per_update: 64,
        window_len: 16,
        total_updates: 1200,
        learning_rate: 1e-3,
        ..Default::default()
    }
}

fn desk_nav_policy_from_scratch() -> NavPolicyConfig {
    // end-to-end encoder updates are far more expensive; smaller batches keep
    // the run inside the desk compute budget
    NavPolicyConfig {
        windows_per_update: 16,
        total_updates: 900,
        ..desk_nav_policy()
    }
}

fn desk_control_policy() -> ControlPolicyConfig {
    ControlPolicyConfig { batch_size: 128, epochs: 100, ..Default::default() }
}

fn desk_control_policy_from_scratch() -> ControlPolicyConfig {
    ControlPolicyConfig {
        batch_size: 64,
        epochs: 45,
        max_batches_per_epoch: Some(10),
        ..desk_control_policy()
    }
}

fn base_config(env_id: EnvId, experiment_id: String, pvr: PvrRecipe) -> ExperimentConfig {
    let from_scratch = pvr.method == Method::FromScratch;
    let (nav_policy, control_policy, dataset, eval) = match env_id {
        EnvId::Gridnav => (
            Some(if from_scratch { desk_nav_policy_from_scratch() } else { desk_nav_policy() }),
            None,
            DatasetCfg { n_traj: 300, seed: 7_000 },
            EvalCfg { eval_every: 150, n_rollouts: 50 },
        ),
        EnvId::Armreach => (
            None,
            Some(if from_scratch {
                desk_control_policy_from_scratch()
            } else {
                desk_control_policy()
            }),
            DatasetCfg { n_traj: 100, seed: 8_000 },
            EvalCfg { eval_every: if from_scratch { 15 } else { 20 }, n_rollouts: 50 },
        ),
    };
    ExperimentConfig {
        format_version: CONFIG_FORMAT_VERSION,
        experiment_id,
        env_id,
        pvr,
        dataset,
        nav_policy,
        control_policy,
        eval,
        seeds: SUITE_SEEDS.to_vec(),
    }
}

fn recipe_for(method: Method) -> PvrRecipe {
    let mode = match method {
        Method::FromScratch => TrainMode::FromScratch,
        _ => TrainMode::Frozen,
    };
    PvrRecipe { method, mode, ..Default::default() }
}

/// The desk-scale figure grids.
pub fn standard_suite(name: &str) -> Result<Vec<ExperimentConfig>> {
    let envs = [EnvId::Gridnav, EnvId::Armreach];
    let mut out = Vec::new();
    match name {
        "fig3" => {
            let methods = [
                Method::Supervised,
                Method::Moco,
                Method::Random,
                Method::FromScratch,
                Method::GroundTruth,
            ];
            for env in envs {
                for method in methods {
                    let id = format!("fig3-{}-{}", method.as_str(), env.as_str());
                    out.push(base_config(env, id, recipe_for(method)));
                }
            }
        }
        "fig4" => {
            for env in envs {
                for corpus in [CorpusSource::SyntheticOod, CorpusSource::EnvFrames] {
                    let tag = match corpus {
                        CorpusSource::SyntheticOod => "synthetic_ood",
                        CorpusSource::EnvFrames => "env_frames",
                    };
                    let id = format!("fig4-moco-{}-{}", tag, env.as_str());
                    let recipe = PvrRecipe { corpus, ..recipe_for(Method::Moco) };
                    out.push(base_config(env, id, recipe));
                }
            }
        }
        "fig5" => {
            for env in envs {
                for aug in [
                    AugmentationPolicy::CropOnly,
                    AugmentationPolicy::ColorOnly,
                    AugmentationPolicy::AugPlus,
                ] {
                    let id = format!("fig5-moco-{}-{}", aug.as_str(), env.as_str());
                    let recipe = PvrRecipe { augmentation: aug, ..recipe_for(Method::Moco) };
                    out.push(base_config(env, id, recipe));
                }
            }
        }
        "fig6" => {
            for env in envs {
                for layer in Layer::ALL {
                    let id = format!("fig6-moco-crop-{}-{}", layer, env.as_str());
                    let recipe = PvrRecipe {
                        augmentation: AugmentationPolicy::CropOnly,
                        layers: vec![layer],
                        compression: layer != Layer::L5,
                        ..recipe_for(Method::Moco)
                    };
                    out.push(base_config(env, id, recipe));
                }
            }
        }
        "fig7" => {
            for env in envs {
                for subset in layer_subsets() {
                    let tag: Vec<String> = subset.iter().map(|l| l.to_string()).collect();
                    let id = format!("fig7-moco-crop-{}-{}", tag.join("+"), env.as_str());
                    let compression = subset.iter().any(|&l| l != Layer::L5);
                    let recipe = PvrRecipe {
                        augmentation: AugmentationPolicy::CropOnly,
                        layers: subset,
                        compression,
                        ..recipe_for(Method::Moco)
                    };
                    out.push(base_config(env, id, recipe));
                }
                let id = format!("fig7-ground_truth-{}", env.as_str());
                out.push(base_config(env, id, recipe_for(Method::GroundTruth)));
            }
        }
        other => {
            return Err(Error::InvalidConfig(format!("unknown suite {other}")));
        }
    }
    for cfg in &out {
        cfg.validate()?;
    }
    Ok(out)
}

/// All 7 nonempty subsets of {L3, L4, L5}, ascending within each subset.
pub fn layer_subsets() -> Vec<Vec<Layer>> {
    let mut out = Vec::new();
    for bits in 1u8..8 {
        let mut subset = Vec::new();
        for (i, &l) in Layer::ALL.iter().enumerate() {
            if bits & (1 << i) != 0 {
                subset.push(l);
            }
        }
        out.push(subset);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_stable_under_key_order() {
        let a: Value =
            serde_json::from_str(r#"{"b": 1, "a": {"y": [1, 2], "x": null}}"#).unwrap();
        let b: Value =
            serde_json::from_str(r#"{"a": {"x": null, "y": [1, 2]}, "b": 1}"#).unwrap();
        assert_eq!(hash_value(&a), hash_value(&b));
        assert_eq!(canonical_json(&a), r#"{"a":{"x":null,"y":[1,2]},"b":1}"#);
    }

    #[test]
    fn fig7_subset_count() {
        let subsets = layer_subsets();
        assert_eq!(subsets.len(), 7);
        let configs = standard_suite("fig7").unwrap();
        // (7 subsets + ground truth) per env
        assert_eq!(configs.len(), 16);
    }

    #[test]
    fn fig5_policies_exact() {
        let configs = standard_suite("fig5").unwrap();
        let augs: Vec<AugmentationPolicy> =
            configs.iter().filter(|c| c.env_id == EnvId::Gridnav).map(|c| c.pvr.augmentation).collect();
        assert_eq!(
            augs,
            vec![
                AugmentationPolicy::CropOnly,
                AugmentationPolicy::ColorOnly,
                AugmentationPolicy::AugPlus
            ]
        );
    }

    #[test]
    fn fig6_layers_exact() {
        let configs = standard_suite("fig6").unwrap();
        let layers: Vec<Layer> = configs
            .iter()
            .filter(|c| c.env_id == EnvId::Armreach)
            .map(|c| c.pvr.layers[0])
            .collect();
        assert_eq!(layers, vec![Layer::L3, Layer::L4, Layer::L5]);
    }

    #[test]
    fn fig3_grid_and_validation() {
        let configs = standard_suite("fig3").unwrap();
        assert_eq!(configs.len(), 10);
        assert!(standard_suite("fig8").is_err());
        // config hash differs across methods but recipe hash is shared
        // between the two envs only when pretraining inputs match
        let h: Vec<String> = configs.iter().map(|c| c.hash()).collect();
        let mut unique = h.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), h.len());
    }

    #[test]
    fn recipe_hash_ignores_bc_side() {
        let suite = standard_suite("fig3").unwrap();
        let a = suite.iter().find(|c| c.experiment_id == "fig3-moco-gridnav").unwrap();
        let mut b = a.clone();
        b.seeds = vec![1];
        b.nav_policy.as_mut().unwrap().total_updates = 60;
        assert_eq!(a.recipe_hash(), b.recipe_hash());
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.pvr.augmentation = AugmentationPolicy::CropOnly;
        assert_ne!(a.recipe_hash(), c.recipe_hash());
    }
}
