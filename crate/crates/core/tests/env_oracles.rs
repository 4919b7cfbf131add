//! Independent oracles for the scripted experts.

use pvrbench_core::env::gridnav::{gridnav_expert, GridNav, Heading, GRID_N};
use pvrbench_core::env::NavAction;

/// Optimal step count to the goal via Bellman-Ford relaxation over the
/// (cell, heading) graph. Deliberately a different algorithm and code path
/// from the expert's planner.
fn relaxation_distance(
    is_wall: &dyn Fn(isize, isize) -> bool,
    from: (usize, usize),
    heading: Heading,
    goal: (usize, usize),
) -> Option<usize> {
    const INF: usize = usize::MAX / 2;
    let idx = |x: usize, y: usize, h: usize| (y * GRID_N + x) * 4 + h;
    let mut dist = vec![INF; GRID_N * GRID_N * 4];
    dist[idx(from.0, from.1, heading.index())] = 0;
    loop {
        let mut changed = false;
        for y in 0..GRID_N {
            for x in 0..GRID_N {
                if is_wall(x as isize, y as isize) {
                    continue;
                }
                for h in Heading::ALL {
                    let d = dist[idx(x, y, h.index())];
                    if d >= INF {
                        continue;
                    }
                    let mut relax = |x2: usize, y2: usize, h2: Heading| {
                        let t = &mut dist[idx(x2, y2, h2.index())];
                        if d + 1 < *t {
                            *t = d + 1;
                            changed = true;
                        }
                    };
                    let (dx, dy) = h.delta();
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if !is_wall(nx, ny) {
                        relax(nx as usize, ny as usize, h);
                    }
                    relax(x, y, h.left());
                    relax(x, y, h.right());
                }
            }
        }
        if !changed {
            break;
        }
    }
    Heading::ALL
        .iter()
        .map(|h| dist[idx(goal.0, goal.1, h.index())])
        .min()
        .filter(|&d| d < INF)
}

#[test]
fn expert_is_bfs_optimal() {
    let env = GridNav;
    let mut checked = 0;
    for seed in 0..100u64 {
        let (mut state, _, _) = env.reset(seed);
        let maze = state.maze.clone();
        let oracle = relaxation_distance(
            &|x, y| maze.is_wall(x, y),
            state.agent,
            state.heading,
            state.goal,
        )
        .expect("pool mazes are connected");
        let mut steps = 0;
        loop {
            let action = gridnav_expert(&state).unwrap();
            let (_, done, success) = env.step(&mut state, action).unwrap();
            steps += 1;
            if done {
                assert!(success, "seed {seed}: expert failed");
                assert_eq!(action, NavAction::Stop);
                break;
            }
        }
        // moves plus the terminal stop
        assert_eq!(steps, oracle + 1, "seed {seed}: suboptimal episode");
        checked += 1;
    }
    assert_eq!(checked, 100);
}
