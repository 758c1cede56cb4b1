use std::time::{Duration, Instant};

use rand::Rng;

use super::{connect, PlannerError, PlannerResult};
use crate::env2d::{sample_uniform, Config2D, ProblemInstance};

#[derive(Clone, Debug, PartialEq)]
pub struct RrtStarConfig {
    /// Maximum extension length; `None` means `0.1·side`.
    pub range: Option<f64>,
    /// Near-radius constant; `None` means `2·side`.
    pub gamma: Option<f64>,
    pub goal_bias: f64,
    pub delta: f64,
    pub max_iterations: usize,
    pub max_time: Option<Duration>,
    /// Stop as soon as a solution at most this long is found.
    pub target_cost: Option<f64>,
}

impl Default for RrtStarConfig {
    fn default() -> Self {
        Self {
            range: None,
            gamma: None,
            goal_bias: 0.05,
            delta: crate::env2d::DEFAULT_DELTA,
            max_iterations: 20_000,
            max_time: Some(Duration::from_secs(5)),
            target_cost: None,
        }
    }
}

/// Uniform grid over the workspace for exact radius and nearest queries.
struct Grid {
    cell: f64,
    dim: usize,
    buckets: Vec<Vec<usize>>,
}

impl Grid {
    fn new(side: f64, cell: f64) -> Self {
        let dim = ((side / cell).ceil() as usize).clamp(1, 512);
        let cell = side / dim as f64;
        Self { cell, dim, buckets: vec![Vec::new(); dim * dim] }
    }

    fn coord(&self, v: f64) -> usize {
        ((v / self.cell).floor().max(0.0) as usize).min(self.dim - 1)
    }

    fn insert(&mut self, q: Config2D, id: usize) {
        let (cx, cy) = (self.coord(q.x), self.coord(q.y));
        self.buckets[cy * self.dim + cx].push(id);
    }

    fn ring(&self, cx: usize, cy: usize, r: usize, mut f: impl FnMut(usize)) {
        let (cx, cy, r, dim) = (cx as i64, cy as i64, r as i64, self.dim as i64);
        for y in (cy - r).max(0)..=(cy + r).min(dim - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(dim - 1) {
                if (x - cx).abs() == r || (y - cy).abs() == r {
                    for &id in &self.buckets[(y * dim + x) as usize] {
                        f(id);
                    }
                }
            }
        }
    }

    /// Exact nearest with lowest-index ties.
    fn nearest(&self, nodes: &[Config2D], q: Config2D) -> usize {
        let (cx, cy) = (self.coord(q.x), self.coord(q.y));
        let mut best: Option<(f64, usize)> = None;
        for r in 0..=self.dim {
            self.ring(cx, cy, r, |id| {
                let d = nodes[id].distance_sq(q);
                if best.is_none_or(|(bd, bi)| d < bd || (d == bd && id < bi)) {
                    best = Some((d, id));
                }
            });
            // Any node in ring r+1 or beyond is at least r·cell away.
            if let Some((bd, _)) = best {
                let bound = r as f64 * self.cell;
                if bound * bound > bd {
                    break;
                }
            }
        }
        best.expect("nearest on an empty grid").1
    }

    fn within(&self, nodes: &[Config2D], q: Config2D, radius: f64) -> Vec<usize> {
        let (cx, cy) = (self.coord(q.x), self.coord(q.y));
        let reach = (radius / self.cell).ceil() as usize;
        let r2 = radius * radius;
        let mut out = Vec::new();
        for r in 0..=reach {
            self.ring(cx, cy, r, |id| {
                if nodes[id].distance_sq(q) <= r2 {
                    out.push(id);
                }
            });
        }
        out.sort_unstable();
        out
    }
}

struct StarTree {
    nodes: Vec<Config2D>,
    parent: Vec<Option<usize>>,
    cost: Vec<f64>,
    children: Vec<Vec<usize>>,
}

impl StarTree {
    fn reparent(&mut self, node: usize, new_parent: usize, new_cost: f64) {
        if let Some(old) = self.parent[node] {
            self.children[old].retain(|&c| c != node);
        }
        self.parent[node] = Some(new_parent);
        self.children[new_parent].push(node);
        let delta = new_cost - self.cost[node];
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            self.cost[n] += delta;
            stack.extend(self.children[n].iter().copied());
        }
    }

    fn path_to(&self, mut i: usize) -> Vec<Config2D> {
        let mut out = vec![self.nodes[i]];
        while let Some(p) = self.parent[i] {
            out.push(self.nodes[p]);
            i = p;
        }
        out.reverse();
        out
    }
}

fn steer(from: Config2D, to: Config2D, range: f64) -> Config2D {
    let d = from.distance(to);
    if d <= range {
        to
    } else {
        from.lerp(to, range / d)
    }
}

/// Anytime RRT*: bounded extension, cost-minimizing parent choice and rewiring within
/// `min(γ·sqrt(ln n / n), range)`, goal bias. Returns the best path found within budget.
pub fn rrt_star_plan<R: Rng + ?Sized>(
    problem: &ProblemInstance,
    config: &RrtStarConfig,
    rng: &mut R,
) -> Result<PlannerResult, PlannerError> {
    let clock = Instant::now();
    let world = &problem.world;
    if !world.is_state_valid(problem.start) {
        return Err(PlannerError::InvalidStart);
    }
    let side = world.side;
    let range = config.range.unwrap_or(0.1 * side);
    let gamma = config.gamma.unwrap_or(2.0 * side);
    if !(range > 0.0) || !(config.delta > 0.0) || !(0.0..=1.0).contains(&config.goal_bias) {
        return Err(PlannerError::Domain("range and delta must be positive, goal bias in [0, 1]".into()));
    }
    let mut tree = StarTree { nodes: vec![problem.start], parent: vec![None], cost: vec![0.0], children: vec![Vec::new()] };
    let mut grid = Grid::new(side, range);
    grid.insert(problem.start, 0);
    let mut goal_nodes: Vec<usize> = Vec::new();
    let mut samples = 0usize;
    let best_goal = |tree: &StarTree, goal_nodes: &[usize]| {
        goal_nodes.iter().copied().min_by(|&a, &b| tree.cost[a].total_cmp(&tree.cost[b]).then(a.cmp(&b)))
    };
    let out_of_time = |clock: &Instant| config.max_time.is_some_and(|t| clock.elapsed() >= t);
    for _ in 0..config.max_iterations {
        if out_of_time(&clock) {
            break;
        }
        if let (Some(target), Some(b)) = (config.target_cost, best_goal(&tree, &goal_nodes)) {
            // Bounds the returned path, which may end with a final hop to the goal.
            if tree.cost[b] + tree.nodes[b].distance(problem.goal) <= target {
                break;
            }
        }
        samples += 1;
        let q_rand = if rng.random::<f64>() < config.goal_bias { problem.goal } else { sample_uniform(world, rng) };
        let nearest = grid.nearest(&tree.nodes, q_rand);
        let q_new = steer(tree.nodes[nearest], q_rand, range);
        if !connect(world, tree.nodes[nearest], q_new, config.delta) {
            continue;
        }
        let n = tree.nodes.len() as f64 + 1.0;
        let radius = (gamma * (n.ln() / n).sqrt()).min(range);
        let near = grid.within(&tree.nodes, q_new, radius);
        let mut parent = nearest;
        let mut cost = tree.cost[nearest] + tree.nodes[nearest].distance(q_new);
        let mut edge_ok: Vec<bool> = Vec::with_capacity(near.len());
        for &k in &near {
            let ok = k == nearest || connect(world, tree.nodes[k], q_new, config.delta);
            edge_ok.push(ok);
            let c = tree.cost[k] + tree.nodes[k].distance(q_new);
            if ok && c < cost {
                parent = k;
                cost = c;
            }
        }
        let id = tree.nodes.len();
        tree.nodes.push(q_new);
        tree.parent.push(Some(parent));
        tree.cost.push(cost);
        tree.children.push(Vec::new());
        tree.children[parent].push(id);
        grid.insert(q_new, id);
        for (&k, &ok) in near.iter().zip(&edge_ok) {
            if k == parent || !ok {
                continue;
            }
            let c = cost + q_new.distance(tree.nodes[k]);
            if c < tree.cost[k] {
                tree.reparent(k, id, c);
            }
        }
        if problem.in_goal(q_new) {
            goal_nodes.push(id);
        }
    }
    let path = best_goal(&tree, &goal_nodes).map(|b| {
        let mut p = tree.path_to(b);
        if tree.nodes[b] != problem.goal && connect(world, tree.nodes[b], problem.goal, config.delta) {
            p.push(problem.goal);
        }
        p
    });
    Ok(PlannerResult {
        success: path.is_some(),
        path,
        vertices: tree.nodes.len(),
        samples_drawn: samples,
        wall_time: clock.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env2d::seeded_rng;
    use crate::planners::tree::nearest_linear;

    #[test]
    fn grid_nearest_matches_linear_scan() {
        let mut rng = seeded_rng(3);
        let mut nodes = Vec::new();
        let mut grid = Grid::new(1.0, 0.1);
        for i in 0..500 {
            let q = Config2D::new(rng.random(), rng.random());
            nodes.push(q);
            grid.insert(q, i);
        }
        // duplicates exercise the tie rule
        nodes.push(nodes[17]);
        grid.insert(nodes[17], 500);
        for _ in 0..2000 {
            let q = Config2D::new(rng.random_range(-0.1..1.1), rng.random_range(-0.1..1.1));
            assert_eq!(grid.nearest(&nodes, q), nearest_linear(&nodes, q).unwrap());
        }
    }

    #[test]
    fn grid_radius_query_matches_filter() {
        let mut rng = seeded_rng(4);
        let mut nodes = Vec::new();
        let mut grid = Grid::new(1.0, 0.1);
        for i in 0..400 {
            let q = Config2D::new(rng.random(), rng.random());
            nodes.push(q);
            grid.insert(q, i);
        }
        for _ in 0..200 {
            let q = Config2D::new(rng.random(), rng.random());
            let r = rng.random_range(0.0..0.1);
            let expect: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].distance_sq(q) <= r * r).collect();
            assert_eq!(grid.within(&nodes, q, r), expect);
        }
    }
}
