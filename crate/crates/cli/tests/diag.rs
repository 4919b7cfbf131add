use pvrbench_core::derive_seed;
use pvrbench_core::env::{GridNav, NavAction};
use pvrbench_core::imitation::{PolicyNet, TrainedPolicy};

#[test]
#[ignore]
fn nav_failure_modes() {
    let dir = std::env::var("POLICY_DIR").unwrap();
    let tp = TrainedPolicy::load(std::path::Path::new(&dir), None).unwrap();
    let policy = match &tp.net {
        PolicyNet::Nav(n) => n,
        _ => panic!(),
    };
    let env = GridNav;
    let (mut early_stop, mut timeout_hit, mut timeout_miss, mut ok, mut opt_len_sum) =
        (0, 0, 0, 0, 0usize);
    let mut stop_steps = Vec::new();
    for i in 0..200u64 {
        let seed = derive_seed(12345, &format!("diag-{i}"));
        let (mut state, _cur, _goal) = env.reset(seed);
        let plan = pvrbench_core::env::gridnav::shortest_plan(
            &state.maze,
            state.agent,
            state.heading,
            state.goal,
        )
        .map(|p| p.len())
        .unwrap_or(0);
        opt_len_sum += plan;
        let mut st = policy.zero_state(1);
        let mut steps = 0;
        loop {
            let gt = env.ground_truth(&state);
            let x = ndarray::Array2::from_shape_vec((1, gt.len()), gt).unwrap();
            let a = policy.act_step(&x, &mut st)[0];
            let action = NavAction::from_index(a);
            steps += 1;
            let (_f, done, success) = env.step(&mut state, action).unwrap();
            if done {
                if success {
                    ok += 1;
                } else if matches!(action, NavAction::Stop) && steps < 100 {
                    early_stop += 1;
                    stop_steps.push((steps, plan));
                } else if state.reached_goal {
                    timeout_hit += 1;
                } else {
                    timeout_miss += 1;
                }
                break;
            }
        }
    }
    println!("ok={ok} early_stop={early_stop} timeout_reached={timeout_hit} timeout_missed={timeout_miss}");
    println!("mean_opt_len={:.1}", opt_len_sum as f64 / 200.0);
    println!("early stops (step, opt_len): {:?}", &stop_steps[..stop_steps.len().min(20)]);

    // failure anatomy: per-maze fail counts, expert agreement, loop detection
    let mut per_maze_fail = [0usize; 5];
    let mut per_maze_n = [0usize; 5];
    let (mut agree, mut total) = (0usize, 0usize);
    let mut loops = 0usize;
    for i in 0..200u64 {
        let seed = derive_seed(12345, &format!("diag-{i}"));
        let (mut state, _c, _g) = env.reset(seed);
        let maze_id = state.maze.id;
        per_maze_n[maze_id] += 1;
        let mut st = policy.zero_state(1);
        let mut visited = std::collections::HashMap::new();
        let mut looped = false;
        let mut succ = false;
        loop {
            let gt = env.ground_truth(&state);
            let x = ndarray::Array2::from_shape_vec((1, gt.len()), gt).unwrap();
            let a = policy.act_step(&x, &mut st)[0];
            if let Ok(e) = pvrbench_core::env::gridnav_expert(&state) {
                total += 1;
                if e.index() == a {
                    agree += 1;
                }
            }
            let key = (state.agent, state.heading.index());
            let c = visited.entry(key).or_insert(0usize);
            *c += 1;
            if *c > 6 {
                looped = true;
            }
            let (_f, done, success) = env.step(&mut state, NavAction::from_index(a)).unwrap();
            if done {
                succ = success;
                break;
            }
        }
        if !succ {
            per_maze_fail[maze_id] += 1;
            if looped {
                loops += 1;
            }
        }
    }
    println!("per-maze fail/n: {:?}", per_maze_fail.iter().zip(per_maze_n).collect::<Vec<_>>());
    println!("expert agreement: {:.3}", agree as f64 / total as f64);
    println!("failures with >6x revisit loops: {loops}");
}

#[test]
#[ignore]
fn feature_probe() {
    use ndarray::Array2;
    use pvrbench_core::backbone::{build_random_features, Layer, RandomVariant};
    use pvrbench_core::frame::frames_to_batch;

    let env = GridNav;
    let n = 600usize;
    let mut frames = Vec::new();
    let mut targets = Vec::new(); // agent x, agent y (normalized)
    for i in 0..n {
        let seed = derive_seed(5555, &format!("probe-{i}"));
        let (state, cur, _goal) = env.reset(seed);
        frames.push(cur);
        targets.push([state.agent.0 as f64 / 8.0, state.agent.1 as f64 / 8.0]);
    }
    let x = frames_to_batch(&frames.iter().collect::<Vec<_>>());

    let mut feats: Vec<(String, Array2<f32>)> = Vec::new();
    if let Ok(dir) = std::env::var("BB_DIR") {
        let bb = pvrbench_core::checkpoint::load_backbone(std::path::Path::new(&dir)).unwrap();
        feats.push(("moco-l5".into(), bb.embed_batch(&x, Layer::L5).unwrap()));
    }
    let rf = build_random_features(RandomVariant::Nav, 0);
    feats.push(("random-nav".into(), rf.embed_batch_eval(&x)));

    for (name, f) in feats {
        let d = f.ncols();
        // mean pairwise cosine on the first 200 rows
        let m = 200usize.min(n);
        let mut cos_sum = 0.0f64;
        let mut cnt = 0usize;
        let norms: Vec<f64> = (0..m)
            .map(|i| f.row(i).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt().max(1e-9))
            .collect();
        for i in 0..m {
            for j in (i + 1)..m {
                let dot: f64 =
                    f.row(i).iter().zip(f.row(j)).map(|(&a, &b)| a as f64 * b as f64).sum();
                cos_sum += dot / (norms[i] * norms[j]);
                cnt += 1;
            }
        }
        // ridge probe to agent position, half train / half test
        let half = n / 2;
        let dd = d + 1;
        let mut xtx = vec![vec![0.0f64; dd]; dd];
        let mut xty = vec![[0.0f64; 2]; dd];
        let row_aug = |i: usize| -> Vec<f64> {
            let mut r: Vec<f64> = f.row(i).iter().map(|&v| v as f64).collect();
            r.push(1.0);
            r
        };
        for i in 0..half {
            let r = row_aug(i);
            for a in 0..dd {
                for b in 0..dd {
                    xtx[a][b] += r[a] * r[b];
                }
                for t in 0..2 {
                    xty[a][t] += r[a] * targets[i][t];
                }
            }
        }
        for a in 0..dd {
            xtx[a][a] += 1e-3;
        }
        // gaussian elimination for each target
        let mut w = vec![[0.0f64; 2]; dd];
        {
            let mut m2: Vec<Vec<f64>> =
                (0..dd).map(|a| { let mut r = xtx[a].clone(); r.push(xty[a][0]); r.push(xty[a][1]); r }).collect();
            for col in 0..dd {
                let piv = (col..dd).max_by(|&a, &b| m2[a][col].abs().partial_cmp(&m2[b][col].abs()).unwrap()).unwrap();
                m2.swap(col, piv);
                let p = m2[col][col];
                for j in col..dd + 2 {
                    m2[col][j] /= p;
                }
                for r2 in 0..dd {
                    if r2 != col {
                        let fac = m2[r2][col];
                        for j in col..dd + 2 {
                            m2[r2][j] -= fac * m2[col][j];
                        }
                    }
                }
            }
            for a in 0..dd {
                w[a] = [m2[a][dd], m2[a][dd + 1]];
            }
        }
        let mut sse = [0.0f64; 2];
        let mut sst = [0.0f64; 2];
        let mean_t: Vec<f64> = (0..2)
            .map(|t| (half..n).map(|i| targets[i][t]).sum::<f64>() / (n - half) as f64)
            .collect();
        for i in half..n {
            let r = row_aug(i);
            for t in 0..2 {
                let pred: f64 = r.iter().zip(&w).map(|(&v, wt)| v * wt[t]).sum();
                sse[t] += (pred - targets[i][t]).powi(2);
                sst[t] += (targets[i][t] - mean_t[t]).powi(2);
            }
        }
        println!(
            "{name}: d={d} mean_cos={:.3} probe R2 agent_x={:.3} agent_y={:.3}",
            cos_sum / cnt as f64,
            1.0 - sse[0] / sst[0],
            1.0 - sse[1] / sst[1]
        );
    }
}

#[test]
#[ignore]
fn pretrain_diag() {
    use pvrbench_core::backbone::Layer;
    use pvrbench_core::frame::frames_to_batch;

    // 1-NN position probe on cached encoders: embed 500 views, and for each
    // of the last 100 find the nearest (cosine) among the first 400; report
    // mean Manhattan distance between the matched agent cells.
    let env = GridNav;
    let mut frames = Vec::new();
    let mut pos = Vec::new();
    for i in 0..500u64 {
        let seed = derive_seed(8888, &format!("nn-{i}"));
        let (state, cur, _goal) = env.reset(seed);
        frames.push(cur);
        pos.push((state.maze.id, state.agent, state.heading.index()));
    }
    let x = frames_to_batch(&frames.iter().collect::<Vec<_>>());
    for dir in std::env::var("BB_DIRS").unwrap_or_default().split(',').filter(|s| !s.is_empty()) {
        let bb = pvrbench_core::checkpoint::load_backbone(std::path::Path::new(dir)).unwrap();
        let f = bb.embed_batch(&x, Layer::L5).unwrap();
        let mut dist_sum = 0.0f64;
        let mut same_maze = 0usize;
        let mut same_heading = 0usize;
        for i in 400..500 {
            let (mut best, mut best_cos) = (0usize, f64::NEG_INFINITY);
            let ni: f64 = f.row(i).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            for j in 0..400 {
                let dot: f64 =
                    f.row(i).iter().zip(f.row(j)).map(|(&a, &b)| a as f64 * b as f64).sum();
                let nj: f64 = f.row(j).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
                let c = dot / (ni * nj).max(1e-12);
                if c > best_cos {
                    best_cos = c;
                    best = j;
                }
            }
            let (mi, (ax, ay), hi) = pos[i];
            let (mj, (bx, by), hj) = pos[best];
            dist_sum += (ax as f64 - bx as f64).abs() + (ay as f64 - by as f64).abs();
            same_maze += (mi == mj) as usize;
            same_heading += (hi == hj) as usize;
        }
        println!(
            "{dir}: 1nn manhattan {:.2}, same maze {}/100, same heading {}/100",
            dist_sum / 100.0,
            same_maze,
            same_heading
        );
    }

    // desk moco pretraining loss trajectory on the synthetic corpus
    if std::env::var("MOCO_LOSS").is_ok() {
        use pvrbench_core::backbone::{build_backbone, BackboneSpec};
        use pvrbench_core::pretrain::corpus::generate_synthetic_corpus;
        use pvrbench_core::pretrain::moco::{train_moco, ContrastiveConfig};
        use pvrbench_core::pretrain::AugmentationPolicy;
        let corpus = generate_synthetic_corpus(512, 8, 9000).unwrap();
        let mut bb = build_backbone(&BackboneSpec::default()).unwrap();
        let cfg = ContrastiveConfig {
            queue_size: 256,
            momentum: 0.99,
            temperature: 0.07,
            batch_size: 32,
            epochs: 12,
            learning_rate: 0.05,
            seed: derive_seed(0, "pretrain-moco"),
        };
        let report = train_moco(&mut bb, &corpus, AugmentationPolicy::AugPlus, &cfg).unwrap();
        println!("moco epoch losses: {:?}", report.epoch_losses.iter().map(|l| (l * 100.0).round() / 100.0).collect::<Vec<_>>());
    }
}
