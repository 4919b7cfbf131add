//! Executes experiment configs: builds or reuses cached corpora, pretrained
//! backbones, and demo datasets, trains one policy per seed, and appends the
//! evaluation reports to a lock-protected results store.

use std::fs;
use std::io::Write;
use std::os::unix::io::AsRawFd;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};

use pvrbench_core::backbone::{
    build_backbone, build_random_features, BackboneSpec, Layer, PretrainObjective, RandomVariant,
};
use pvrbench_core::checkpoint::{load_backbone, save_backbone};
use pvrbench_core::derive_seed;
use pvrbench_core::env::{collect_demos, DemoDataset, EnvId};
use pvrbench_core::evalharness::{run_control_protocol, run_nav_protocol, EvalReport};
use pvrbench_core::imitation::{
    append_log_csv, set_mode, ControlBc, NavBc, Perception, TrainMode, TrainedPolicy,
};
use pvrbench_core::pretrain::{
    collect_env_frames, finetune_compression, generate_synthetic_corpus, train_moco,
    train_supervised, ContrastiveConfig, CorpusSource, FinetuneConfig, ImageCorpus,
    SupervisedConfig,
};
use pvrbench_core::pvr::{assemble_pvr, FinetuneMode, Fusion, GroundTruthAdapter};
use pvrbench_core::{sha256_hex, Error, Result};

use crate::config::{hash_value, ExperimentConfig, Method};

/// Seed of the shared pretraining corpora; independent of run seeds so every
/// recipe with the same corpus settings reuses the same cached images.
const CORPUS_SEED: u64 = 9_000;
const SYNTHETIC_CLASSES: usize = 8;

pub fn fusion_for(env_id: EnvId) -> Fusion {
    match env_id {
        EnvId::Gridnav => Fusion::GoalConcat,
        EnvId::Armreach => Fusion::Flare3,
    }
}

pub fn random_variant_for(env_id: EnvId) -> RandomVariant {
    match env_id {
        EnvId::Gridnav => RandomVariant::Nav,
        EnvId::Armreach => RandomVariant::Control,
    }
}

fn cache_dir(root: &Path) -> PathBuf {
    root.join("cache")
}

pub fn results_path(root: &Path) -> PathBuf {
    root.join("results").join("records.jsonl")
}

fn corpus_key(cfg: &ExperimentConfig) -> String {
    let env: Option<EnvId> =
        (cfg.pvr.corpus == CorpusSource::EnvFrames).then_some(cfg.env_id);
    hash_value(&serde_json::json!({
        "source": cfg.pvr.corpus,
        "size": cfg.pvr.corpus_size,
        "env": env,
        "seed": CORPUS_SEED,
    }))
}

/// Loads the pretraining corpus from cache, generating and saving it first if
/// absent.
pub fn ensure_corpus(cfg: &ExperimentConfig, root: &Path) -> Result<ImageCorpus> {
    let dir = cache_dir(root).join(format!("corpus-{}", &corpus_key(cfg)[..16]));
    if dir.join("manifest.json").exists() {
        return ImageCorpus::load(&dir);
    }
    let n = cfg.pvr.corpus_size;
    let mut corpus = match cfg.pvr.corpus {
        CorpusSource::SyntheticOod => generate_synthetic_corpus(n, SYNTHETIC_CLASSES, CORPUS_SEED)?,
        CorpusSource::EnvFrames => match cfg.env_id {
            // GridNav expert episodes are short; one trajectory per frame
            // guarantees enough material before truncation.
            EnvId::Gridnav => collect_env_frames(EnvId::Gridnav, n, 1, CORPUS_SEED)?,
            EnvId::Armreach => {
                collect_env_frames(EnvId::Armreach, n / 60 + 1, 4, CORPUS_SEED)?
            }
        },
    };
    if corpus.frames.len() < n {
        return Err(Error::InvalidConfig(format!(
            "corpus source produced {} frames, need {n}",
            corpus.frames.len()
        )));
    }
    corpus.frames.truncate(n);
    if let Some(labels) = corpus.labels.as_mut() {
        labels.truncate(n);
    }
    corpus.save(&dir)?;
    Ok(corpus)
}

/// Pretrains (or reuses) the staged backbone for a MoCo or supervised recipe
/// and returns its cache directory. The checkpoint is stored unfrozen; the
/// caller freezes per run mode.
pub fn ensure_pretrained_backbone(
    cfg: &ExperimentConfig,
    root: &Path,
    force: bool,
) -> Result<PathBuf> {
    debug_assert!(cfg.pvr.method.has_backbone());
    let dir = cache_dir(root).join(format!("pvr-{}", &cfg.recipe_hash()[..16]));
    if dir.join("manifest.json").exists() && !force {
        return Ok(dir);
    }
    let corpus = ensure_corpus(cfg, root)?;
    let spec = BackboneSpec { seed: cfg.pvr.backbone_seed, ..Default::default() };
    let mut backbone = build_backbone(&spec)?;
    let p = &cfg.pvr.pretrain;
    let objective = match cfg.pvr.method {
        Method::Moco => {
            let mc = ContrastiveConfig {
                queue_size: p.queue_size,
                momentum: p.momentum,
                temperature: p.temperature,
                batch_size: p.batch_size,
                epochs: p.epochs,
                learning_rate: p.learning_rate,
                seed: derive_seed(cfg.pvr.backbone_seed, "pretrain-moco"),
            };
            train_moco(&mut backbone, &corpus, cfg.pvr.augmentation, &mc)?;
            PretrainObjective::Contrastive
        }
        Method::Supervised => {
            let sc = SupervisedConfig {
                batch_size: p.batch_size,
                epochs: p.epochs,
                learning_rate: p.learning_rate,
                seed: derive_seed(cfg.pvr.backbone_seed, "pretrain-supervised"),
                ..Default::default()
            };
            train_supervised(&mut backbone, &corpus, &sc)?;
            PretrainObjective::Supervised
        }
        _ => unreachable!("only pretrained methods reach here"),
    };
    if cfg.pvr.compression {
        for &layer in &cfg.pvr.layers {
            if layer != Layer::L5 {
                backbone.attach_compression(layer)?;
            }
        }
        let cc = &cfg.pvr.compression_cfg;
        let fc = FinetuneConfig {
            batch_size: cc.batch_size,
            epochs: cc.epochs,
            learning_rate: cc.learning_rate,
            queue_size: cc.queue_size,
            momentum: p.momentum,
            temperature: p.temperature,
            aug: cfg.pvr.augmentation,
            seed: derive_seed(cfg.pvr.backbone_seed, "compression"),
            ..Default::default()
        };
        finetune_compression(&mut backbone, &corpus, objective, &fc)?;
    }
    save_backbone(&dir, &backbone)?;
    Ok(dir)
}

/// Collects (or reuses) the demonstration dataset and returns its directory.
pub fn ensure_dataset(cfg: &ExperimentConfig, root: &Path) -> Result<PathBuf> {
    let dir = cache_dir(root).join(format!("data-{}", &cfg.dataset_hash()[..16]));
    if dir.join("manifest.json").exists() {
        return Ok(dir);
    }
    let ds = collect_demos(cfg.env_id, cfg.dataset.n_traj, cfg.dataset.seed)?;
    ds.save(&dir)?;
    Ok(dir)
}

/// SHA-256 over the dataset's manifest and trajectory files in order.
pub fn dataset_checksum(dir: &Path) -> Result<String> {
    let mut bytes = fs::read(dir.join("manifest.json"))?;
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("traj_"))
        .collect();
    names.sort();
    for n in names {
        bytes.extend(fs::read(dir.join(n))?);
    }
    Ok(sha256_hex(&bytes))
}

/// Builds the perception module for one (config, seed) run.
pub fn build_perception(cfg: &ExperimentConfig, root: &Path, seed: u64) -> Result<Perception> {
    match cfg.pvr.method {
        Method::GroundTruth => Ok(Perception::GroundTruth(GroundTruthAdapter { env_id: cfg.env_id })),
        Method::Random => {
            let mut rf = build_random_features(random_variant_for(cfg.env_id), cfg.pvr.backbone_seed);
            rf.freeze();
            Ok(Perception::Random(rf))
        }
        Method::FromScratch => {
            // fresh weights per seed: the whole encoder trains with the policy
            let rf = build_random_features(
                random_variant_for(cfg.env_id),
                derive_seed(seed, "from-scratch"),
            );
            Ok(Perception::Random(rf))
        }
        Method::Moco | Method::Supervised => {
            let dir = ensure_pretrained_backbone(cfg, root, false)?;
            let mut backbone = load_backbone(&dir)?;
            let fm = match cfg.pvr.mode {
                TrainMode::Frozen => {
                    backbone.freeze();
                    FinetuneMode::Frozen
                }
                TrainMode::Finetune => FinetuneMode::Finetune,
                TrainMode::FromScratch => {
                    return Err(Error::InvalidConfig(
                        "pretrained backbone cannot run from scratch".into(),
                    ))
                }
            };
            let pvr = assemble_pvr(backbone, &cfg.pvr.layers, fusion_for(cfg.env_id), fm)?;
            Ok(Perception::Pvr(pvr))
        }
    }
}

/// One line of the append-only results store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub experiment_id: String,
    pub env_id: EnvId,
    pub method: Method,
    pub mode: TrainMode,
    pub seed: u64,
    pub report: EvalReport,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub encoder_checksum_pre: Option<String>,
    pub encoder_checksum_post: Option<String>,
    pub dataset_checksum: String,
    pub policy_checksum: String,
    pub policy_dir: String,
}

pub fn read_records(root: &Path) -> Result<Vec<ResultRecord>> {
    let path = results_path(root);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for line in fs::read_to_string(path)?.lines() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line)?);
    }
    Ok(out)
}

/// Appends one record under an exclusive advisory file lock, so concurrent
/// runs never interleave partial lines.
pub fn append_record(root: &Path, record: &ResultRecord) -> Result<()> {
    let path = results_path(root);
    fs::create_dir_all(path.parent().unwrap())?;
    let mut f = fs::OpenOptions::new().create(true).append(true).open(&path)?;
    let rc = unsafe { libc::flock(f.as_raw_fd(), libc::LOCK_EX) };
    if rc != 0 {
        return Err(Error::Io(std::io::Error::last_os_error()));
    }
    let line = serde_json::to_string(record)?;
    let res = writeln!(f, "{line}").map_err(Error::Io);
    unsafe { libc::flock(f.as_raw_fd(), libc::LOCK_UN) };
    res
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(SystemTime::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn policy_checksum(policy: &TrainedPolicy) -> String {
    use pvrbench_core::imitation::PolicyNet;
    let tensors = match &policy.net {
        PolicyNet::Nav(n) => n.export_tensors(),
        PolicyNet::Control(c) => c.export_tensors(),
    };
    let mut bytes = Vec::new();
    for t in tensors {
        bytes.extend(t.name.as_bytes());
        for &s in &t.shape {
            bytes.extend((s as u64).to_le_bytes());
        }
        for v in t.data {
            bytes.extend(v.to_le_bytes());
        }
    }
    sha256_hex(&bytes)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub report: EvalReport,
    /// True when a prior record satisfied this (config, seed) pair.
    pub reused: bool,
}

/// Runs every seed of one experiment. Seeds already present in the results
/// store are skipped unless `force` is set.
pub fn run_experiment(cfg: &ExperimentConfig, root: &Path, force: bool) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    let config_hash = cfg.hash();
    let data_dir = ensure_dataset(cfg, root)?;
    let data_sum = dataset_checksum(&data_dir)?;
    let dataset = DemoDataset::load(&data_dir)?;
    if cfg.pvr.method.has_backbone() {
        ensure_pretrained_backbone(cfg, root, false)?;
    }
    let existing = read_records(root)?;
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        if !force {
            if let Some(r) =
                existing.iter().find(|r| r.config_hash == config_hash && r.seed == seed)
            {
                out.push(RunOutcome { seed, report: r.report.clone(), reused: true });
                continue;
            }
        }
        let started = unix_now();
        let perception = build_perception(cfg, root, seed)?;
        let setup = set_mode(perception, cfg.pvr.mode)?;
        let (report, policy) = match cfg.env_id {
            EnvId::Gridnav => {
                let pc = cfg.nav_policy.clone().unwrap();
                let mut bc = NavBc::new(&dataset, setup, &pc, seed)?;
                let report =
                    run_nav_protocol(&mut bc, &dataset, cfg.eval.eval_every, cfg.eval.n_rollouts, seed)?;
                (report, bc.finish())
            }
            EnvId::Armreach => {
                let pc = cfg.control_policy.clone().unwrap();
                let mut bc = ControlBc::new(&dataset, setup, &pc, seed)?;
                let report =
                    run_control_protocol(&mut bc, &dataset, cfg.eval.eval_every, cfg.eval.n_rollouts, seed)?;
                (report, bc.finish())
            }
        };
        let run_dir = root.join("runs").join(&cfg.experiment_id).join(format!("seed{seed}"));
        let policy_dir = run_dir.join("policy");
        policy.save(&policy_dir)?;
        append_log_csv(&run_dir.join("log.csv"), &policy.log)?;
        fs::write(run_dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
        let record = ResultRecord {
            config_hash: config_hash.clone(),
            experiment_id: cfg.experiment_id.clone(),
            env_id: cfg.env_id,
            method: cfg.pvr.method,
            mode: cfg.pvr.mode,
            seed,
            report: report.clone(),
            started_unix: started,
            finished_unix: unix_now(),
            encoder_checksum_pre: policy.pre_checksum.clone(),
            encoder_checksum_post: policy.post_checksum.clone(),
            dataset_checksum: data_sum.clone(),
            policy_checksum: policy_checksum(&policy),
            policy_dir: run_dir.to_string_lossy().into_owned(),
        };
        append_record(root, &record)?;
        out.push(RunOutcome { seed, report, reused: false });
    }
    Ok(out)
}
