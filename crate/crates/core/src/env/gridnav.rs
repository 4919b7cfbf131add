//! Goal-image grid navigation: the agent sees its egocentric surroundings and
//! a render of the goal pose, and must reach the goal cell with discrete
//! motions. A fixed pool of mazes plays the role of a small scene set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::frame::ImageFrame;
use crate::{derive_seed, Error, Result};

use super::FRAME_SIZE;

/// Maze side length (cells), border included.
pub const GRID_N: usize = 9;
/// Number of distinct mazes in the fixed pool.
pub const MAZE_POOL: usize = 5;
/// Episode step limit.
pub const MAX_STEPS: usize = 100;
/// Cells visible ahead of (and beside) the agent in the egocentric render.
const VIEW_DEPTH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    pub fn index(self) -> usize {
        match self {
            Heading::North => 0,
            Heading::East => 1,
            Heading::South => 2,
            Heading::West => 3,
        }
    }

    fn from_index(i: usize) -> Heading {
        Heading::ALL[i % 4]
    }

    pub fn left(self) -> Heading {
        Heading::from_index(self.index() + 3)
    }

    pub fn right(self) -> Heading {
        Heading::from_index(self.index() + 1)
    }

    /// (dx, dy) of one forward step; y grows downward.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Heading::North => (0, -1),
            Heading::East => (1, 0),
            Heading::South => (0, 1),
            Heading::West => (-1, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NavAction {
    Forward,
    Left,
    Right,
    Stop,
}

impl NavAction {
    pub const ALL: [NavAction; 4] = [NavAction::Forward, NavAction::Left, NavAction::Right, NavAction::Stop];

    pub fn index(self) -> usize {
        match self {
            NavAction::Forward => 0,
            NavAction::Left => 1,
            NavAction::Right => 2,
            NavAction::Stop => 3,
        }
    }

    pub fn from_index(i: usize) -> NavAction {
        NavAction::ALL[i % 4]
    }
}

/// Occupancy grid; border cells are always walls. Free cells are connected by
/// construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Maze {
    pub id: usize,
    walls: [[bool; GRID_N]; GRID_N],
}

impl Maze {
    /// Deterministically generates pool maze `id`: border walls plus sparse
    /// interior walls, re-sampled until the free cells are connected.
    pub fn from_pool(id: usize) -> Maze {
        let id = id % MAZE_POOL;
        for nonce in 0.. {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(id as u64, &format!("maze-{nonce}")));
            let mut walls = [[false; GRID_N]; GRID_N];
            for i in 0..GRID_N {
                walls[0][i] = true;
                walls[GRID_N - 1][i] = true;
                walls[i][0] = true;
                walls[i][GRID_N - 1] = true;
            }
            let n_interior = 1 + id % 2;
            for _ in 0..n_interior {
                let x = rng.gen_range(1..GRID_N - 1);
                let y = rng.gen_range(1..GRID_N - 1);
                walls[y][x] = true;
            }
            let maze = Maze { id, walls };
            if maze.free_cells_connected() {
                return maze;
            }
        }
        unreachable!()
    }

    pub fn is_wall(&self, x: isize, y: isize) -> bool {
        if x < 0 || y < 0 || x as usize >= GRID_N || y as usize >= GRID_N {
            return true;
        }
        self.walls[y as usize][x as usize]
    }

    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for y in 1..GRID_N - 1 {
            for x in 1..GRID_N - 1 {
                if !self.walls[y][x] {
                    v.push((x, y));
                }
            }
        }
        v
    }

    fn free_cells_connected(&self) -> bool {
        let free = self.free_cells();
        if free.len() < 8 {
            return false;
        }
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![free[0]];
        seen.insert(free[0]);
        while let Some((x, y)) = stack.pop() {
            for (dx, dy) in [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)] {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if !self.is_wall(nx, ny) && seen.insert((nx as usize, ny as usize)) {
                    stack.push((nx as usize, ny as usize));
                }
            }
        }
        seen.len() == free.len()
    }
}

#[derive(Debug, Clone)]
pub struct GridNavState {
    pub maze: Maze,
    pub agent: (usize, usize),
    pub heading: Heading,
    pub goal: (usize, usize),
    pub steps: usize,
    pub done: bool,
    pub reached_goal: bool,
}

/// The environment handle; episodes are created by [`GridNav::reset`].
#[derive(Debug, Clone, Default)]
pub struct GridNav;

impl GridNav {
    /// Starts an episode. The maze comes from the fixed pool (`seed % 5`);
    /// agent pose and goal cell are sampled from the seed.
    pub fn reset(&self, seed: u64) -> (GridNavState, ImageFrame, ImageFrame) {
        let maze = Maze::from_pool((seed % MAZE_POOL as u64) as usize);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "gridnav-reset"));
        let free = maze.free_cells();
        let agent = free[rng.gen_range(0..free.len())];
        let heading = Heading::ALL[rng.gen_range(0..4)];
        let goal = loop {
            let g = free[rng.gen_range(0..free.len())];
            if g != agent {
                break g;
            }
        };
        let state = GridNavState {
            maze,
            agent,
            heading,
            goal,
            steps: 0,
            done: false,
            reached_goal: false,
        };
        let cur = render_view(&state.maze, state.agent, state.heading, state.goal);
        let goal_frame = goal_view(&state.maze, state.goal);
        (state, cur, goal_frame)
    }

    /// Applies one action. Returns (current frame, done, success).
    pub fn step(
        &self,
        state: &mut GridNavState,
        action: NavAction,
    ) -> Result<(ImageFrame, bool, bool)> {
        if state.done {
            return Err(Error::EpisodeFinished);
        }
        state.steps += 1;
        match action {
            NavAction::Forward => {
                let (dx, dy) = state.heading.delta();
                let (nx, ny) = (state.agent.0 as isize + dx, state.agent.1 as isize + dy);
                if !state.maze.is_wall(nx, ny) {
                    state.agent = (nx as usize, ny as usize);
                }
            }
            NavAction::Left => state.heading = state.heading.left(),
            NavAction::Right => state.heading = state.heading.right(),
            NavAction::Stop => state.done = true,
        }
        if state.agent == state.goal {
            state.reached_goal = true;
        }
        if state.steps >= MAX_STEPS {
            state.done = true;
        }
        let success = state.done && state.reached_goal;
        let frame = render_view(&state.maze, state.agent, state.heading, state.goal);
        Ok((frame, state.done, success))
    }

    /// Ground-truth features: agent x/y, heading one-hot, goal x/y, maze id,
    /// positions normalized to [-1, 1].
    pub fn ground_truth(&self, state: &GridNavState) -> Vec<f32> {
        let norm = |v: usize| (v as f32 / (GRID_N - 1) as f32) * 2.0 - 1.0;
        let mut f = vec![norm(state.agent.0), norm(state.agent.1)];
        let mut one_hot = [0.0f32; 4];
        one_hot[state.heading.index()] = 1.0;
        f.extend_from_slice(&one_hot);
        f.push(norm(state.goal.0));
        f.push(norm(state.goal.1));
        f.push((state.maze.id as f32 / (MAZE_POOL - 1) as f32) * 2.0 - 1.0);
        f
    }
}

/// Next expert action along a shortest path in (cell, heading) space; `Stop`
/// when on the goal.
pub fn gridnav_expert(state: &GridNavState) -> Result<NavAction> {
    if state.agent == state.goal {
        return Ok(NavAction::Stop);
    }
    let plan = shortest_plan(&state.maze, state.agent, state.heading, state.goal)
        .ok_or(Error::NoPath)?;
    Ok(plan[0])
}

/// BFS over (cell, heading) with moves forward/left/right, expanded in that
/// order so tie-breaking is deterministic. Returns the action sequence to
/// reach the goal cell (any heading), excluding the final `Stop`.
pub fn shortest_plan(
    maze: &Maze,
    from: (usize, usize),
    heading: Heading,
    goal: (usize, usize),
) -> Option<Vec<NavAction>> {
    use std::collections::VecDeque;
    let idx = |c: (usize, usize), h: Heading| (c.1 * GRID_N + c.0) * 4 + h.index();
    let mut prev: Vec<Option<(usize, NavAction)>> = vec![None; GRID_N * GRID_N * 4];
    let mut seen = vec![false; GRID_N * GRID_N * 4];
    let start = idx(from, heading);
    seen[start] = true;
    let mut q = VecDeque::new();
    q.push_back((from, heading));
    while let Some((cell, h)) = q.pop_front() {
        if cell == goal {
            let mut actions = Vec::new();
            let mut cur = idx(cell, h);
            while cur != start {
                let (p, a) = prev[cur].unwrap();
                actions.push(a);
                cur = p;
            }
            actions.reverse();
            return Some(actions);
        }
        let mut succs = Vec::with_capacity(3);
        let (dx, dy) = h.delta();
        let (nx, ny) = (cell.0 as isize + dx, cell.1 as isize + dy);
        if !maze.is_wall(nx, ny) {
            succs.push(((nx as usize, ny as usize), h, NavAction::Forward));
        }
        succs.push((cell, h.left(), NavAction::Left));
        succs.push((cell, h.right(), NavAction::Right));
        for (ncell, nh, act) in succs {
            let ni = idx(ncell, nh);
            if !seen[ni] {
                seen[ni] = true;
                prev[ni] = Some((idx(cell, h), act));
                q.push_back((ncell, nh));
            }
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// Deterministic per-cell floor signature so views pin down locations.
fn cell_color(maze_id: usize, x: isize, y: isize) -> [u8; 3] {
    let h = derive_seed((maze_id as u64) << 32 | ((x as u64 & 0xffff) << 16) | (y as u64 & 0xffff), "cell");
    [
        60 + (h & 0x7f) as u8,
        60 + ((h >> 8) & 0x7f) as u8,
        60 + ((h >> 16) & 0x7f) as u8,
    ]
}

fn wall_color(maze_id: usize, x: isize, y: isize) -> [u8; 3] {
    let h = derive_seed((maze_id as u64) << 32 | ((x as u64 & 0xffff) << 16) | (y as u64 & 0xffff), "wall");
    let v = 18 + (h & 0x1f) as u8;
    [v, v, v + 8]
}

/// Egocentric top-down render: a VIEW_DEPTH×VIEW_DEPTH window of cells with
/// the agent at the bottom-center, rotated so "up" is the agent's heading.
/// The goal cell, when inside the window, carries a bright marker.
pub fn render_view(
    maze: &Maze,
    agent: (usize, usize),
    heading: Heading,
    goal: (usize, usize),
) -> ImageFrame {
    let mut img = ImageFrame::new(FRAME_SIZE, FRAME_SIZE);
    let half = (VIEW_DEPTH as isize - 1) / 2; // lateral range
    for row in 0..VIEW_DEPTH as isize {
        // row 0 = farthest ahead; agent sits at row VIEW_DEPTH-1.
        let ahead = (VIEW_DEPTH as isize - 1) - row;
        for col in 0..VIEW_DEPTH as isize {
            let lateral = col - half;
            // rotate (lateral, ahead) from agent frame into world frame
            let (dx, dy) = match heading {
                Heading::North => (lateral, -ahead),
                Heading::South => (-lateral, ahead),
                Heading::East => (ahead, lateral),
                Heading::West => (-ahead, -lateral),
            };
            let wx = agent.0 as isize + dx;
            let wy = agent.1 as isize + dy;
            let out_of_bounds =
                wx < 0 || wy < 0 || wx as usize >= GRID_N || wy as usize >= GRID_N;
            let base = if out_of_bounds {
                [0, 0, 0]
            } else if maze.is_wall(wx, wy) {
                wall_color(maze.id, wx, wy)
            } else {
                cell_color(maze.id, wx, wy)
            };
            let x0 = (col as usize * FRAME_SIZE) / VIEW_DEPTH;
            let x1 = ((col as usize + 1) * FRAME_SIZE) / VIEW_DEPTH;
            let y0 = (row as usize * FRAME_SIZE) / VIEW_DEPTH;
            let y1 = ((row as usize + 1) * FRAME_SIZE) / VIEW_DEPTH;
            for py in y0..y1 {
                for px in x0..x1 {
                    img.set(py, px, base);
                }
            }
            if !out_of_bounds && (wx as usize, wy as usize) == goal {
                // goal marker: bright center patch
                let cx = (x0 + x1) / 2;
                let cy = (y0 + y1) / 2;
                for py in cy.saturating_sub(3)..(cy + 3).min(FRAME_SIZE) {
                    for px in cx.saturating_sub(3)..(cx + 3).min(FRAME_SIZE) {
                        img.set(py, px, [255, 40, 220]);
                    }
                }
            }
        }
    }
    img
}

/// Render of the goal pose: the egocentric view from the goal cell with a
/// fixed (north) heading.
pub fn goal_view(maze: &Maze, goal: (usize, usize)) -> ImageFrame {
    render_view(maze, goal, Heading::North, goal)
}
