//! Evaluation: greedy rollouts, the last-6 navigation protocol, the best-3
//! control protocol, return rescaling, and multi-seed aggregation with 95%
//! confidence intervals.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::env::armreach::HORIZON;
use crate::env::gridnav::{NavAction, MAX_STEPS};
use crate::env::{ArmReach, EnvId, GridNav};
use crate::imitation::{ControlBc, ControlPolicy, NavBc, NavPolicy, Perception};
use crate::pvr::{ground_truth_features, EnvState};
use crate::{derive_seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    NavLast6,
    ControlBest3,
}

/// The outcome of one protocolized evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub env_id: EnvId,
    pub protocol: Protocol,
    /// Score per evaluation point, each already in [0, 100].
    pub per_eval: Vec<f64>,
    pub score: f64,
    /// Rollouts per evaluation point.
    pub n_rollouts: usize,
    pub seed: u64,
}

/// Multi-seed summary: mean and 95% t-interval half-width.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateResult {
    pub mean: f64,
    /// `None` when fewer than two seeds make the interval undefined.
    pub ci_half_width: Option<f64>,
    pub n_seeds: usize,
    pub per_seed: Vec<f64>,
}

/// Greedy lockstep rollouts on GridNav; one success flag per seed.
pub fn rollout_nav_batch(
    policy: &NavPolicy,
    perception: &Perception,
    seeds: &[u64],
) -> Result<Vec<bool>> {
    let env = GridNav;
    let b = seeds.len();
    let mut states = Vec::with_capacity(b);
    let mut cur = Vec::with_capacity(b);
    let mut goal = Vec::with_capacity(b);
    for &s in seeds {
        let (st, c, g) = env.reset(s);
        states.push(st);
        cur.push(c);
        goal.push(g);
    }
    let goal_z = if perception.is_gt() {
        None
    } else {
        Some(perception.embed_frames_eval(&goal.iter().collect::<Vec<_>>())?)
    };

    let mut lstm_state = policy.zero_state(b);
    let mut done = vec![false; b];
    let mut success = vec![false; b];
    for _ in 0..=MAX_STEPS {
        let x = if let Some(goal_z) = &goal_z {
            let z = perception.embed_frames_eval(&cur.iter().collect::<Vec<_>>())?;
            let fd = z.ncols();
            let mut x = Array2::zeros((b, 2 * fd));
            for i in 0..b {
                x.slice_mut(ndarray::s![i, 0..fd]).assign(&z.row(i));
                x.slice_mut(ndarray::s![i, fd..]).assign(&goal_z.row(i));
            }
            x
        } else {
            let d = perception.frame_dim();
            let mut x = Array2::zeros((b, d));
            for i in 0..b {
                let f = ground_truth_features(&EnvState::Gridnav(&states[i]));
                x.row_mut(i).assign(&ndarray::ArrayView1::from(&f[..]));
            }
            x
        };
        let acts = policy.act_step(&x, &mut lstm_state);
        for i in 0..b {
            if done[i] {
                continue;
            }
            let (frame, d, s) = env.step(&mut states[i], NavAction::from_index(acts[i]))?;
            cur[i] = frame;
            if d {
                done[i] = true;
                success[i] = s;
            }
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }
    Ok(success)
}

/// Greedy lockstep rollouts on ArmReach; one raw return per seed.
pub fn rollout_control_batch(
    policy: &ControlPolicy,
    perception: &Perception,
    seeds: &[u64],
) -> Result<Vec<f32>> {
    let env = ArmReach;
    let b = seeds.len();
    let mut states = Vec::with_capacity(b);
    let mut cur = Vec::with_capacity(b);
    for &s in seeds {
        let (st, c) = env.reset(s);
        states.push(st);
        cur.push(c);
    }
    let mut returns = vec![0.0f32; b];
    // embedding history for flare fusion; first steps repeat the initial frame
    let mut z_hist: Option<(Array2<f32>, Array2<f32>)> = None;
    for step in 0..HORIZON {
        let x = if perception.is_gt() {
            let d = perception.frame_dim();
            let mut x = Array2::zeros((b, d));
            for i in 0..b {
                let f = ground_truth_features(&EnvState::Armreach(&states[i]));
                x.row_mut(i).assign(&ndarray::ArrayView1::from(&f[..]));
            }
            x
        } else {
            let z_t = perception.embed_frames_eval(&cur.iter().collect::<Vec<_>>())?;
            let (z_t2, z_t1) = match z_hist.take() {
                Some(pair) => pair,
                None => (z_t.clone(), z_t.clone()),
            };
            let fd = z_t.ncols();
            let mut x = Array2::zeros((b, 3 * fd));
            for i in 0..b {
                for j in 0..fd {
                    x[[i, j]] = z_t[[i, j]];
                    x[[i, fd + j]] = z_t[[i, j]] - z_t1[[i, j]];
                    x[[i, 2 * fd + j]] = z_t1[[i, j]] - z_t2[[i, j]];
                }
            }
            z_hist = Some((z_t1, z_t));
            x
        };
        let acts = policy.act(&x);
        for i in 0..b {
            let a = [acts[[i, 0]], acts[[i, 1]]];
            let (frame, reward, _done) = env.step(&mut states[i], a)?;
            cur[i] = frame;
            returns[i] += reward;
        }
        let _ = step;
    }
    Ok(returns)
}

/// Mean of the final six evaluation scores (each in [0, 100]).
pub fn nav_last6_score(per_eval: &[f64]) -> Result<f64> {
    if per_eval.len() < 6 {
        return Err(Error::InvalidProtocol(format!(
            "nav protocol needs at least 6 evaluation points, got {}",
            per_eval.len()
        )));
    }
    let tail = &per_eval[per_eval.len() - 6..];
    Ok(tail.iter().sum::<f64>() / 6.0)
}

/// Mean of the three best evaluation scores; ties resolve to the earliest
/// evaluations.
pub fn control_best3_score(per_eval: &[f64]) -> Result<f64> {
    if per_eval.len() < 3 {
        return Err(Error::InvalidProtocol(format!(
            "control protocol needs at least 3 evaluation points, got {}",
            per_eval.len()
        )));
    }
    let mut idx: Vec<usize> = (0..per_eval.len()).collect();
    idx.sort_by(|&a, &b| {
        per_eval[b].partial_cmp(&per_eval[a]).unwrap().then(a.cmp(&b))
    });
    Ok(idx[..3].iter().map(|&i| per_eval[i]).sum::<f64>() / 3.0)
}

/// Linear rescale of a raw return into [0, 100].
pub fn rescale_return(r: f64, r_max: f64) -> Result<f64> {
    if r_max <= 0.0 {
        return Err(Error::InvalidInput("r_max must be positive".into()));
    }
    if r < 0.0 || r > r_max {
        return Err(Error::InvalidInput(format!("return {r} outside [0, {r_max}]")));
    }
    Ok(100.0 * r / r_max)
}

/// Interleaves navigation BC updates with evaluations every `eval_every`
/// updates and applies the last-6 protocol.
pub fn run_nav_protocol(
    bc: &mut NavBc,
    dataset: &crate::env::demos::DemoDataset,
    eval_every: usize,
    n_rollouts: usize,
    seed: u64,
) -> Result<EvalReport> {
    if eval_every == 0 {
        return Err(Error::InvalidProtocol("eval_every must be positive".into()));
    }
    let points = bc.cfg.total_updates / eval_every;
    if points < 6 {
        return Err(Error::InvalidProtocol(format!(
            "nav protocol needs at least 6 evaluation points, got {points}"
        )));
    }
    let mut per_eval = Vec::with_capacity(points);
    for point in 0..points {
        for _ in 0..eval_every {
            bc.update(dataset)?;
        }
        let seeds: Vec<u64> = (0..n_rollouts)
            .map(|i| derive_seed(seed, &format!("nav-eval-{point}-{i}")))
            .collect();
        let wins = rollout_nav_batch(&bc.policy, &bc.perception, &seeds)?;
        let rate = wins.iter().filter(|&&w| w).count() as f64 / n_rollouts as f64;
        per_eval.push(100.0 * rate);
    }
    let score = nav_last6_score(&per_eval)?;
    Ok(EvalReport {
        env_id: EnvId::Gridnav,
        protocol: Protocol::NavLast6,
        per_eval,
        score,
        n_rollouts,
        seed,
    })
}

/// Interleaves control BC epochs with evaluations every `eval_every_epochs`
/// and applies the best-3 protocol over rescaled returns.
pub fn run_control_protocol(
    bc: &mut ControlBc,
    dataset: &crate::env::demos::DemoDataset,
    eval_every_epochs: usize,
    n_rollouts: usize,
    seed: u64,
) -> Result<EvalReport> {
    if eval_every_epochs == 0 {
        return Err(Error::InvalidProtocol("eval cadence must be positive".into()));
    }
    let points = bc.cfg.epochs / eval_every_epochs;
    if points < 3 {
        return Err(Error::InvalidProtocol(format!(
            "control protocol needs at least 3 evaluation points, got {points}"
        )));
    }
    let mut per_eval = Vec::with_capacity(points);
    for point in 0..points {
        for _ in 0..eval_every_epochs {
            bc.train_epoch(dataset)?;
        }
        let seeds: Vec<u64> = (0..n_rollouts)
            .map(|i| derive_seed(seed, &format!("control-eval-{point}-{i}")))
            .collect();
        let returns = rollout_control_batch(&bc.policy, &bc.perception, &seeds)?;
        let mean_rescaled = returns
            .iter()
            .map(|&r| rescale_return(r as f64, HORIZON as f64))
            .sum::<Result<f64>>()?
            / n_rollouts as f64;
        per_eval.push(mean_rescaled);
    }
    let score = control_best3_score(&per_eval)?;
    Ok(EvalReport {
        env_id: EnvId::Armreach,
        protocol: Protocol::ControlBest3,
        per_eval,
        score,
        n_rollouts,
        seed,
    })
}

/// Mean and 95% two-sided t-interval half-width over per-seed scores.
pub fn aggregate_seeds(per_seed: &[f64]) -> Result<AggregateResult> {
    let n = per_seed.len();
    if n == 0 {
        return Err(Error::InvalidInput("no seed scores to aggregate".into()));
    }
    let mean = per_seed.iter().sum::<f64>() / n as f64;
    let ci_half_width = if n < 2 {
        None
    } else {
        let var = per_seed.iter().map(|&s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).unwrap().inverse_cdf(0.975);
        Some(t * var.sqrt() / (n as f64).sqrt())
    };
    Ok(AggregateResult { mean, ci_half_width, n_seeds: n, per_seed: per_seed.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::demos::collect_demos;
    use crate::imitation::{
        set_mode, ControlPolicyConfig, NavPolicyConfig, Perception, TrainMode,
    };
    use crate::pvr::GroundTruthAdapter;

    #[test]
    fn nav_last6_arithmetic() {
        // per-50 successes [40, 42, 44, 46, 48, 50] -> 270/300 = 90.0
        let per_eval: Vec<f64> =
            [40.0, 42.0, 44.0, 46.0, 48.0, 50.0].iter().map(|s| 100.0 * s / 50.0).collect();
        assert!((nav_last6_score(&per_eval).unwrap() - 90.0).abs() < 1e-12);
        assert!(nav_last6_score(&per_eval[..5]).is_err());
        // earlier points are ignored
        let mut longer = vec![0.0, 0.0];
        longer.extend_from_slice(&per_eval);
        assert!((nav_last6_score(&longer).unwrap() - 90.0).abs() < 1e-12);
    }

    #[test]
    fn control_best3_arithmetic() {
        let scores = [10.0, 50.0, 40.0, 60.0, 55.0];
        assert!((control_best3_score(&scores).unwrap() - 55.0).abs() < 1e-12);
        let equal = [42.0; 4];
        assert!((control_best3_score(&equal).unwrap() - 42.0).abs() < 1e-12);
        assert!(control_best3_score(&scores[..2]).is_err());
    }

    #[test]
    fn protocols_are_monotone() {
        let base = [20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0];
        let nav0 = nav_last6_score(&base).unwrap();
        let best0 = control_best3_score(&base).unwrap();
        for i in 0..base.len() {
            let mut up = base;
            up[i] += 5.0;
            assert!(nav_last6_score(&up).unwrap() >= nav0);
            assert!(control_best3_score(&up).unwrap() >= best0);
        }
    }

    #[test]
    fn rescale_bounds() {
        assert_eq!(rescale_return(0.0, 250.0).unwrap(), 0.0);
        assert_eq!(rescale_return(250.0, 250.0).unwrap(), 100.0);
        assert_eq!(rescale_return(125.0, 250.0).unwrap(), 50.0);
        assert!(rescale_return(300.0, 250.0).is_err());
        assert!(rescale_return(-1.0, 250.0).is_err());
    }

    #[test]
    fn aggregate_matches_t_table() {
        let flat = [50.0; 5];
        let a = aggregate_seeds(&flat).unwrap();
        assert_eq!(a.mean, 50.0);
        assert!(a.ci_half_width.unwrap().abs() < 1e-12);

        // t_{0.975,1} = 12.706; s = 70.711; CI = 12.706 * 50 = 635.3
        let two = [0.0, 100.0];
        let a = aggregate_seeds(&two).unwrap();
        assert_eq!(a.mean, 50.0);
        assert!((a.ci_half_width.unwrap() - 635.3).abs() < 0.1);

        assert!(aggregate_seeds(&[7.0]).unwrap().ci_half_width.is_none());
        let spread = [10.0, 20.0, 90.0];
        let a = aggregate_seeds(&spread).unwrap();
        assert!(a.mean >= 10.0 && a.mean <= 90.0);
    }

    fn gt_nav_policy() -> (NavPolicy, Perception) {
        let perception =
            Perception::GroundTruth(GroundTruthAdapter { env_id: EnvId::Gridnav });
        let cfg = NavPolicyConfig { mlp_hidden: 16, lstm_hidden: 16, ..Default::default() };
        let policy = NavPolicy::build(&perception, &cfg);
        (policy, perception)
    }

    #[test]
    fn rollouts_deterministic_and_below_expert() {
        let (policy, perception) = gt_nav_policy();
        let seeds: Vec<u64> = (0..20).collect();
        let a = rollout_nav_batch(&policy, &perception, &seeds).unwrap();
        let b = rollout_nav_batch(&policy, &perception, &seeds).unwrap();
        assert_eq!(a, b);
        // an untrained policy stays strictly below the expert's 100%
        let rate = a.iter().filter(|&&w| w).count() as f64 / a.len() as f64;
        assert!(rate < 1.0);
    }

    #[test]
    fn nav_protocol_end_to_end() {
        let ds = collect_demos(EnvId::Gridnav, 3, 31).unwrap();
        let setup = set_mode(
            Perception::GroundTruth(GroundTruthAdapter { env_id: EnvId::Gridnav }),
            TrainMode::Frozen,
        )
        .unwrap();
        let cfg = NavPolicyConfig {
            mlp_hidden: 16,
            lstm_hidden: 16,
            windows_per_update: 4,
            window_len: 8,
            total_updates: 12,
            ..Default::default()
        };
        let mut bc = NavBc::new(&ds, setup, &cfg, 1).unwrap();
        let report = run_nav_protocol(&mut bc, &ds, 2, 3, 7).unwrap();
        assert_eq!(report.per_eval.len(), 6);
        assert!(report.score >= 0.0 && report.score <= 100.0);
        assert_eq!(report.n_rollouts, 3);
        assert_eq!(report.protocol, Protocol::NavLast6);
    }

    #[test]
    fn control_protocol_end_to_end() {
        let ds = collect_demos(EnvId::Armreach, 1, 32).unwrap();
        let setup = set_mode(
            Perception::GroundTruth(GroundTruthAdapter { env_id: EnvId::Armreach }),
            TrainMode::Frozen,
        )
        .unwrap();
        let cfg = ControlPolicyConfig { hidden: 16, batch_size: 64, epochs: 6, ..Default::default() };
        let mut bc = ControlBc::new(&ds, setup, &cfg, 2).unwrap();
        let report = run_control_protocol(&mut bc, &ds, 2, 2, 9).unwrap();
        assert_eq!(report.per_eval.len(), 3);
        assert!(report.score >= 0.0 && report.score <= 100.0);
        assert_eq!(report.protocol, Protocol::ControlBest3);
        // cadence: 6 epochs evaluated every 2 -> trainer finished all epochs
        assert_eq!(bc.epochs_done, 6);
    }
}
