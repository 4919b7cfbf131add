//! End-to-end acceptance gate: ten pass/fail criteria covering the frozen
//! contract, expert oracles, ground-truth BC sanity, the fig3 ordering,
//! protocol arithmetic, fusion algebra, the contrastive oracle, the
//! compression contract, determinism, and suite/figure emission.
//!
//! Heavy artifacts (pretrained encoders, datasets, run records) persist under
//! the target tmpdir, so reruns reuse finished (config, seed) pairs.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pvrbench_cli::config::{
    layer_subsets, standard_suite, DatasetCfg, EvalCfg, ExperimentConfig, Method, SUITE_SEEDS,
};
use pvrbench_cli::figure::{collect_entries, emit_figure};
use pvrbench_cli::runner::{dataset_checksum, read_records, run_experiment, ResultRecord};
use pvrbench_core::backbone::{build_backbone, BackboneSpec, Layer, PretrainObjective};
use pvrbench_core::derive_seed;
use pvrbench_core::env::armreach::{ArmReach, HORIZON};
use pvrbench_core::env::{arm_expert, gridnav_expert, EnvId, GridNav};
use pvrbench_core::evalharness::{
    aggregate_seeds, control_best3_score, nav_last6_score, rescale_return,
};
use pvrbench_core::imitation::{NavPolicyConfig, TrainMode};
use pvrbench_core::pretrain::contrastive::contrastive_loss;
use pvrbench_core::pretrain::corpus::{generate_synthetic_corpus, CorpusSource};
use pvrbench_core::pretrain::finetune::{finetune_compression, FinetuneConfig};
use pvrbench_core::pretrain::moco::{train_moco, ContrastiveConfig};
use pvrbench_core::pretrain::AugmentationPolicy;
use pvrbench_core::pvr::{flare_fuse, goal_concat};

struct Gate {
    results: Vec<(usize, &'static str, bool, String)>,
}

impl Gate {
    fn new() -> Self {
        Self { results: Vec::new() }
    }

    fn record(&mut self, n: usize, name: &'static str, outcome: Result<String, String>) {
        let (ok, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.results.push((n, name, ok, detail));
    }

    fn finish(mut self) {
        self.results.sort_by_key(|r| r.0);
        let mut failed = 0;
        for (n, name, ok, detail) in &self.results {
            let verdict = if *ok { "PASS" } else { "FAIL" };
            println!("criterion {n} ({name}): {verdict} - {detail}");
            if !ok {
                failed += 1;
            }
        }
        assert_eq!(failed, 0, "{failed} acceptance criteria failed");
    }
}

fn root() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

// criterion 2: expert oracles

fn gridnav_expert_oracle() -> Result<String, String> {
    let env = GridNav;
    for i in 0..100u64 {
        let seed = derive_seed(24_000, &format!("expert-maze-{i}"));
        let (mut state, _cur, _goal) = env.reset(seed);
        let optimal = pvrbench_core::env::gridnav::shortest_plan(
            &state.maze,
            state.agent,
            state.heading,
            state.goal,
        )
        .ok_or_else(|| format!("episode {i}: no path from reset"))?
        .len();
        let mut taken = 0usize;
        loop {
            let action = gridnav_expert(&state).map_err(|e| format!("episode {i}: {e}"))?;
            taken += 1;
            let (_f, done, success) =
                env.step(&mut state, action).map_err(|e| format!("episode {i}: {e}"))?;
            if done {
                if !success {
                    return Err(format!("episode {i}: expert failed"));
                }
                break;
            }
        }
        if taken != optimal {
            return Err(format!("episode {i}: expert used {taken} steps, BFS oracle {optimal}"));
        }
    }
    Ok("gridnav expert: 100/100 success at BFS-optimal length".into())
}

fn armreach_expert_oracle() -> Result<String, String> {
    let env = ArmReach;
    let mut total = 0.0f64;
    for i in 0..100u64 {
        let seed = derive_seed(24_000, &format!("expert-arm-{i}"));
        let (mut state, _frame) = env.reset(seed);
        let mut ret = 0.0f64;
        loop {
            let action = arm_expert(&state);
            let (_f, reward, done) =
                env.step(&mut state, action).map_err(|e| format!("episode {i}: {e}"))?;
            ret += reward as f64;
            if done {
                break;
            }
        }
        total += rescale_return(ret, HORIZON as f64).map_err(|e| e.to_string())?;
    }
    let mean = total / 100.0;
    if mean >= 80.0 {
        Ok(format!("armreach expert mean rescaled return {mean:.2} >= 80 over 100 seeds"))
    } else {
        Err(format!("armreach expert mean rescaled return {mean:.2} < 80"))
    }
}

// criterion 3: ground-truth BC sanity

fn fig3_config(id: &str) -> ExperimentConfig {
    standard_suite("fig3").unwrap().into_iter().find(|c| c.experiment_id == id).unwrap()
}

fn gt_sanity(root: &Path) -> Result<String, String> {
    let mut nav = fig3_config("fig3-ground_truth-gridnav");
    nav.experiment_id = "accept-gt-gridnav".into();
    nav.dataset = DatasetCfg { n_traj: 1_000, seed: 7_000 };
    nav.nav_policy = Some(NavPolicyConfig {
        mlp_hidden: 256,
        lstm_hidden: 256,
        windows_per_update: 64,
        window_len: 16,
        total_updates: 3_000,
        learning_rate: 1e-3,
        ..Default::default()
    });
    nav.eval = EvalCfg { eval_every: 375, n_rollouts: 50 };
    nav.seeds = vec![101, 202, 303];

    let mut arm = fig3_config("fig3-ground_truth-armreach");
    arm.experiment_id = "accept-gt-armreach".into();
    arm.seeds = vec![101, 202, 303];

    let mut lines = Vec::new();
    for (cfg, bar) in [(&nav, 90.0), (&arm, 70.0)] {
        let outcomes = run_experiment(cfg, root, false).map_err(|e| e.to_string())?;
        for o in &outcomes {
            if o.report.score < bar {
                return Err(format!(
                    "{} seed {}: score {:.2} < {bar}",
                    cfg.experiment_id, o.seed, o.report.score
                ));
            }
        }
        let scores: Vec<String> =
            outcomes.iter().map(|o| format!("{:.1}", o.report.score)).collect();
        lines.push(format!("{} [{}] all >= {bar}", cfg.env_id.as_str(), scores.join(", ")));
    }
    Ok(lines.join("; "))
}

// criterion 4: fig3 qualitative ordering (also produces the records that
// criteria 1 and 10 inspect)

fn run_fig3(root: &Path) -> Result<Vec<ExperimentConfig>, String> {
    let configs = standard_suite("fig3").map_err(|e| e.to_string())?;
    for cfg in &configs {
        run_experiment(cfg, root, false)
            .map_err(|e| format!("{}: {e}", cfg.experiment_id))?;
    }
    Ok(configs)
}

fn mean_ci(records: &[ResultRecord], cfg: &ExperimentConfig) -> Result<(f64, f64), String> {
    let hash = cfg.hash();
    let mut per_seed = Vec::new();
    for &seed in &cfg.seeds {
        let r = records
            .iter()
            .rev()
            .find(|r| r.config_hash == hash && r.seed == seed)
            .ok_or_else(|| format!("missing record {} seed {seed}", cfg.experiment_id))?;
        per_seed.push(r.report.score);
    }
    let agg = aggregate_seeds(&per_seed).map_err(|e| e.to_string())?;
    Ok((agg.mean, agg.ci_half_width.unwrap_or(0.0)))
}

fn fig3_ordering(root: &Path, configs: &[ExperimentConfig]) -> Result<String, String> {
    let records = read_records(root).map_err(|e| e.to_string())?;
    let find = |id: &str| configs.iter().find(|c| c.experiment_id == id).unwrap();
    let mut lines = Vec::new();
    for env in ["gridnav", "armreach"] {
        let (moco, moco_ci) = mean_ci(&records, find(&format!("fig3-moco-{env}")))?;
        let (random, random_ci) = mean_ci(&records, find(&format!("fig3-random-{env}")))?;
        let (scratch, scratch_ci) = mean_ci(&records, find(&format!("fig3-from_scratch-{env}")))?;
        if moco <= random || moco <= scratch {
            return Err(format!(
                "{env}: moco {moco:.2} not above random {random:.2} and from_scratch {scratch:.2}"
            ));
        }
        if env == "gridnav" {
            let sep_random = moco - moco_ci > random + random_ci;
            let sep_scratch = moco - moco_ci > scratch + scratch_ci;
            if !sep_random || !sep_scratch {
                return Err(format!(
                    "gridnav CI overlap: moco {moco:.2}+-{moco_ci:.2} vs random \
                     {random:.2}+-{random_ci:.2}, from_scratch {scratch:.2}+-{scratch_ci:.2}"
                ));
            }
        }
        lines.push(format!(
            "{env}: moco {moco:.1} > random {random:.1}, from_scratch {scratch:.1}"
        ));
    }
    Ok(lines.join("; "))
}

// criterion 1: frozen-weight contract over the fig3 records

fn frozen_contract(root: &Path, configs: &[ExperimentConfig]) -> Result<String, String> {
    let records = read_records(root).map_err(|e| e.to_string())?;
    let mut checked = 0usize;
    for cfg in configs {
        if cfg.pvr.mode != TrainMode::Frozen || !cfg.pvr.method.has_backbone() {
            continue;
        }
        let hash = cfg.hash();
        for &seed in &cfg.seeds {
            let r = records
                .iter()
                .rev()
                .find(|r| r.config_hash == hash && r.seed == seed)
                .ok_or_else(|| format!("missing record {} seed {seed}", cfg.experiment_id))?;
            match (&r.encoder_checksum_pre, &r.encoder_checksum_post) {
                (Some(pre), Some(post)) if pre == post => checked += 1,
                (pre, post) => {
                    return Err(format!(
                        "{} seed {seed}: pre {pre:?} != post {post:?}",
                        cfg.experiment_id
                    ))
                }
            }
        }
    }
    if checked == 0 {
        return Err("no frozen encoder runs found".into());
    }
    Ok(format!("encoder SHA-256 pre == post on all {checked} frozen fig3 runs"))
}

// criterion 5: protocol arithmetic

fn protocol_arithmetic() -> Result<String, String> {
    let per_eval: Vec<f64> =
        [40.0, 42.0, 44.0, 46.0, 48.0, 50.0].iter().map(|s| 100.0 * s / 50.0).collect();
    let nav = nav_last6_score(&per_eval).map_err(|e| e.to_string())?;
    if nav != 90.0 {
        return Err(format!("nav last-6 on [40..50]/50 gave {nav}, want 90"));
    }
    if nav_last6_score(&per_eval[..5]).is_ok() {
        return Err("nav protocol accepted 5 eval points".into());
    }

    let best3 = control_best3_score(&[10.0, 50.0, 40.0, 60.0, 55.0]).map_err(|e| e.to_string())?;
    if best3 != 55.0 {
        return Err(format!("control best-3 gave {best3}, want 55"));
    }
    let equal = control_best3_score(&[42.0; 4]).map_err(|e| e.to_string())?;
    if equal != 42.0 {
        return Err(format!("control best-3 on equal scores gave {equal}, want 42"));
    }

    if rescale_return(0.0, 250.0).unwrap() != 0.0
        || rescale_return(250.0, 250.0).unwrap() != 100.0
        || rescale_return(125.0, 250.0).unwrap() != 50.0
    {
        return Err("rescale_return arithmetic wrong".into());
    }
    if rescale_return(300.0, 250.0).is_ok() {
        return Err("rescale_return accepted r > r_max".into());
    }

    let flat = aggregate_seeds(&[50.0; 5]).map_err(|e| e.to_string())?;
    if flat.mean != 50.0 || flat.ci_half_width != Some(0.0) {
        return Err(format!("aggregate of constant scores gave {flat:?}"));
    }
    let wide = aggregate_seeds(&[0.0, 100.0]).map_err(|e| e.to_string())?;
    let ci = wide.ci_half_width.unwrap();
    // t_{0.975,1} = 12.706; CI = 12.706 * (70.711 / sqrt(2))
    if wide.mean != 50.0 || (ci - 635.3).abs() > 0.1 {
        return Err(format!("aggregate of [0,100] gave mean {} ci {ci}", wide.mean));
    }
    Ok("last-6, best-3, rescale and aggregation match hand-computed values".into())
}

// criterion 6: flare / fusion algebra

fn fusion_algebra() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(6, "fusion-property"));
    for trial in 0..1_000 {
        let d = rng.gen_range(1..=128usize);
        let za: Vec<f32> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let zb: Vec<f32> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let zc: Vec<f32> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();

        let fused = flare_fuse(&za, &zb, &zc).map_err(|e| e.to_string())?;
        if fused.len() != 3 * d {
            return Err(format!("trial {trial}: flare length {} != {}", fused.len(), 3 * d));
        }
        for j in 0..d {
            // concatenation law: [z_t || z_t - z_t-1 || z_t-1 - z_t-2]
            if fused[j] != zc[j]
                || fused[d + j] != zc[j] - zb[j]
                || fused[2 * d + j] != zb[j] - za[j]
            {
                return Err(format!("trial {trial}: flare concatenation law violated at {j}"));
            }
        }
        let still = flare_fuse(&za, &za, &za).map_err(|e| e.to_string())?;
        if still[..d] != za[..] || still[d..].iter().any(|&v| v != 0.0) {
            return Err(format!("trial {trial}: zero-difference case violated"));
        }

        let gc = goal_concat(&za, &zb).map_err(|e| e.to_string())?;
        if gc.len() != 2 * d || gc[..d] != za[..] || gc[d..] != zb[..] {
            return Err(format!("trial {trial}: goal-concat law violated"));
        }
    }
    let spot = flare_fuse(&[1.0], &[3.0], &[6.0]).unwrap();
    if spot != vec![6.0, 3.0, 2.0] {
        return Err(format!("flare (1),(3),(6) gave {spot:?}, want [6,3,2]"));
    }
    Ok("flare and goal-concat laws hold on 1000 random vectors".into())
}

// criterion 7: contrastive closed-form oracle + momentum law

fn contrastive_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(7, "contrastive-oracle"));
    let mut max_rel = 0.0f64;
    for trial in 0..1_000 {
        let d = rng.gen_range(2..=64usize);
        let k = rng.gen_range(1..=32usize);
        let tau = rng.gen_range(0.05..1.0f32);
        let unit = |rng: &mut ChaCha8Rng| -> Vec<f32> {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            v.iter().map(|x| (x / n) as f32).collect()
        };
        let q = unit(&mut rng);
        let k_pos = unit(&mut rng);
        let rows: Vec<Vec<f32>> = (0..k).map(|_| unit(&mut rng)).collect();
        let queue =
            Array2::from_shape_fn((k, d), |(i, j)| rows[i][j]);

        let got = contrastive_loss(&q, &k_pos, &queue, tau).map_err(|e| e.to_string())?;

        // independent closed form: direct softmax in f64, no log-sum-exp
        let dot = |a: &[f32], b: &[f32]| -> f64 {
            a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
        };
        let pos = (dot(&q, &k_pos) / tau as f64).exp();
        let neg: f64 = rows.iter().map(|r| (dot(&q, r) / tau as f64).exp()).sum();
        let want = -(pos / (pos + neg)).ln();

        let rel = (got - want).abs() / want.abs().max(1e-12);
        max_rel = max_rel.max(rel);
        if rel > 1e-6 {
            return Err(format!("trial {trial}: loss {got} vs oracle {want}, rel err {rel:.2e}"));
        }
    }

    // ln 2 spot check: orthogonal positive, one orthogonal negative, tau 1
    let queue = Array2::from_shape_vec((1, 2), vec![0.0, 1.0]).unwrap();
    let l = contrastive_loss(&[1.0, 0.0], &[0.0, 1.0], &queue, 1.0).unwrap();
    if (l - std::f64::consts::LN_2).abs() > 1e-12 {
        return Err(format!("orthogonal two-way case gave {l}, want ln 2"));
    }

    // momentum convex-combination law on a toy encoder: key params at 0,
    // query params at 1, m = 0.999 -> every key param becomes (1 - m)
    let spec = BackboneSpec { stage_channels: vec![4, 4, 4, 4, 4], seed: 1, ..Default::default() };
    let mut key = build_backbone(&spec).map_err(|e| e.to_string())?;
    let mut query = build_backbone(&spec).map_err(|e| e.to_string())?;
    for p in key.all_params_mut() {
        p.value.fill(0.0);
    }
    for p in query.all_params_mut() {
        p.value.fill(1.0);
    }
    let m = 0.999f32;
    key.momentum_merge(&query, m);
    let want = m * 0.0 + (1.0 - m) * 1.0;
    for p in key.all_params_mut() {
        if p.value.iter().any(|&v| v != want) {
            return Err(format!("momentum merge deviates from convex combination {want}"));
        }
    }
    Ok(format!("closed-form match on 1000 tuples (max rel err {max_rel:.2e}); momentum law exact"))
}

// criterion 8: compression contract

fn compression_contract() -> Result<String, String> {
    let corpus = generate_synthetic_corpus(96, 4, derive_seed(8, "corpus"))
        .map_err(|e| e.to_string())?;
    let spec =
        BackboneSpec { stage_channels: vec![8, 8, 16, 16, 32], seed: 11, ..Default::default() };
    let mut bb = build_backbone(&spec).map_err(|e| e.to_string())?;
    let cfg = ContrastiveConfig { queue_size: 64, batch_size: 16, epochs: 2, ..Default::default() };
    train_moco(&mut bb, &corpus, AugmentationPolicy::CropOnly, &cfg).map_err(|e| e.to_string())?;
    bb.attach_compression(Layer::L3).map_err(|e| e.to_string())?;
    bb.attach_compression(Layer::L4).map_err(|e| e.to_string())?;
    let stages_before = bb.stage_checksum();

    let ft = FinetuneConfig { batch_size: 16, epochs: 4, queue_size: 64, seed: 8, ..Default::default() };
    let report = finetune_compression(&mut bb, &corpus, PretrainObjective::Contrastive, &ft)
        .map_err(|e| e.to_string())?;

    let (d3, d4, d5) = (bb.embed_dim(Layer::L3), bb.embed_dim(Layer::L4), bb.embed_dim(Layer::L5));
    if d3 != d5 || d4 != d5 {
        return Err(format!("pooled dims unequal after compression: {d3}/{d4}/{d5}"));
    }
    if bb.stage_checksum() != stages_before {
        return Err("original stage checksums changed during fine-tuning".into());
    }
    let first = report.objective_epoch_losses.first().copied().unwrap_or(f64::NAN);
    let last = report.objective_epoch_losses.last().copied().unwrap_or(f64::NAN);
    if !(last < first) {
        return Err(format!("compressed contrastive loss did not decrease: {first} -> {last}"));
    }
    Ok(format!(
        "dims {d3}=={d4}=={d5}, stages untouched, objective {first:.4} -> {last:.4}"
    ))
}

// criterion 9: determinism

fn tiny_config() -> ExperimentConfig {
    let mut cfg = fig3_config("fig3-ground_truth-gridnav");
    cfg.experiment_id = "accept-determinism".into();
    cfg.dataset = DatasetCfg { n_traj: 3, seed: 42 };
    cfg.nav_policy = Some(NavPolicyConfig {
        mlp_hidden: 16,
        lstm_hidden: 16,
        windows_per_update: 2,
        window_len: 8,
        total_updates: 12,
        ..Default::default()
    });
    cfg.eval = EvalCfg { eval_every: 2, n_rollouts: 2 };
    cfg.seeds = vec![5];
    cfg
}

fn determinism() -> Result<String, String> {
    let cfg = tiny_config();
    let mut sums = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        run_experiment(&cfg, tmp.path(), false).map_err(|e| e.to_string())?;
        let data_dir = pvrbench_cli::runner::ensure_dataset(&cfg, tmp.path())
            .map_err(|e| e.to_string())?;
        let run_dir = tmp.path().join("runs").join(&cfg.experiment_id).join("seed5");
        let log = std::fs::read(run_dir.join("log.csv")).map_err(|e| e.to_string())?;
        let report = std::fs::read(run_dir.join("report.json")).map_err(|e| e.to_string())?;
        sums.push((dataset_checksum(&data_dir).map_err(|e| e.to_string())?, log, report));
    }
    if sums[0].0 != sums[1].0 {
        return Err("dataset bytes differ across reruns".into());
    }
    if sums[0].1 != sums[1].1 {
        return Err("loss curves differ across reruns".into());
    }
    if sums[0].2 != sums[1].2 {
        return Err("eval reports differ across reruns".into());
    }
    Ok("rerun reproduced dataset, loss curve and eval report byte-identically".into())
}

// criterion 10: suite grids + figure emission

fn suite_grids() -> Result<String, String> {
    let fig3 = standard_suite("fig3").map_err(|e| e.to_string())?;
    if fig3.len() != 10 {
        return Err(format!("fig3 has {} configs, want 10", fig3.len()));
    }
    let ids: BTreeSet<&str> = fig3.iter().map(|c| c.experiment_id.as_str()).collect();
    for env in ["gridnav", "armreach"] {
        for m in ["supervised", "moco", "random", "from_scratch", "ground_truth"] {
            let id = format!("fig3-{m}-{env}");
            if !ids.contains(id.as_str()) {
                return Err(format!("fig3 missing {id}"));
            }
        }
    }
    for cfg in &fig3 {
        if cfg.seeds != SUITE_SEEDS {
            return Err(format!("{}: seeds deviate from the suite's five", cfg.experiment_id));
        }
        cfg.validate().map_err(|e| format!("{}: {e}", cfg.experiment_id))?;
    }

    let fig4 = standard_suite("fig4").map_err(|e| e.to_string())?;
    let ood = fig4.iter().filter(|c| c.pvr.corpus == CorpusSource::SyntheticOod).count();
    let frames = fig4.iter().filter(|c| c.pvr.corpus == CorpusSource::EnvFrames).count();
    if fig4.len() != 4 || ood != 2 || frames != 2 {
        return Err("fig4 grid is not {synthetic_ood, env_frames} x envs".into());
    }
    let fig5 = standard_suite("fig5").map_err(|e| e.to_string())?;
    if fig5.len() != 6 {
        return Err(format!("fig5 has {} configs, want 6", fig5.len()));
    }
    let fig6 = standard_suite("fig6").map_err(|e| e.to_string())?;
    if fig6.len() != 6
        || !fig6.iter().all(|c| c.pvr.compression == (c.pvr.layers != vec![Layer::L5]))
    {
        return Err("fig6 layer/compression grid wrong".into());
    }

    let subsets = layer_subsets();
    if subsets.len() != 7 {
        return Err(format!("{} layer subsets, want 7", subsets.len()));
    }
    let fig7 = standard_suite("fig7").map_err(|e| e.to_string())?;
    if fig7.len() != 16 {
        return Err(format!("fig7 has {} configs, want 16 (7 subsets + GT per env)", fig7.len()));
    }
    for env in [EnvId::Gridnav, EnvId::Armreach] {
        let layer_sets: BTreeSet<Vec<Layer>> = fig7
            .iter()
            .filter(|c| c.env_id == env && c.pvr.method == Method::Moco)
            .map(|c| c.pvr.layers.clone())
            .collect();
        let want: BTreeSet<Vec<Layer>> = subsets.iter().cloned().collect();
        if layer_sets != want {
            return Err(format!("fig7 {} layer subsets incomplete", env.as_str()));
        }
        if !fig7
            .iter()
            .any(|c| c.env_id == env && c.pvr.method == Method::GroundTruth)
        {
            return Err(format!("fig7 {} missing ground truth", env.as_str()));
        }
    }
    Ok("fig3-fig7 grids exact (fig7 = 7 layer subsets + ground truth per env)".into())
}

fn figure_emission(root: &Path, configs: &[ExperimentConfig]) -> Result<String, String> {
    let records = read_records(root).map_err(|e| e.to_string())?;
    let entries = collect_entries(configs, &records).map_err(|e| e.to_string())?;
    let out = root.join("figures");
    let read_pair = |dir: &Path| -> Result<(Vec<u8>, Vec<u8>), String> {
        Ok((
            std::fs::read(dir.join("fig3.png")).map_err(|e| e.to_string())?,
            std::fs::read(dir.join("fig3.txt")).map_err(|e| e.to_string())?,
        ))
    };
    emit_figure("fig3", &entries, &out).map_err(|e| e.to_string())?;
    let first = read_pair(&out)?;
    emit_figure("fig3", &entries, &out).map_err(|e| e.to_string())?;
    let second = read_pair(&out)?;
    if first != second {
        return Err("re-emission changed figure bytes".into());
    }
    Ok("fig3 figure and table re-emit byte-identically from stored records".into())
}

#[test]
fn acceptance_gate() {
    let root = root();
    let mut gate = Gate::new();

    gate.record(2, "expert oracles", (|| {
        let mut s = gridnav_expert_oracle()?;
        let _ = write!(s, "; {}", armreach_expert_oracle()?);
        Ok(s)
    })());
    gate.record(5, "protocol arithmetic", protocol_arithmetic());
    gate.record(6, "flare/fusion algebra", fusion_algebra());
    gate.record(7, "contrastive oracle", contrastive_oracle());
    gate.record(8, "compression contract", compression_contract());
    gate.record(9, "determinism", determinism());
    gate.record(10, "suite grids + figures", (|| {
        let s = suite_grids()?;
        Ok(s)
    })());
    gate.record(3, "ground-truth BC sanity", gt_sanity(&root));

    match run_fig3(&root) {
        Ok(configs) => {
            gate.record(4, "fig3 ordering", fig3_ordering(&root, &configs));
            gate.record(1, "frozen-weight suite", frozen_contract(&root, &configs));
            // figure emission folds into criterion 10's detail line
            if let Err(e) = figure_emission(&root, &configs) {
                gate.record(10, "figure emission", Err(e));
            }
        }
        Err(e) => {
            gate.record(4, "fig3 ordering", Err(format!("suite run failed: {e}")));
            gate.record(1, "frozen-weight suite", Err("suite run failed".into()));
        }
    }

    gate.finish();
}
