use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{seeded_rng, Config2D, EnvError, Obstacle};

/// Parameters of the random obstacle generator. Sizes are fractions of the side length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub side: f64,
    /// Inclusive range of obstacle counts.
    pub obstacle_count: (usize, usize),
    pub size_range: (f64, f64),
    pub min_free_fraction: f64,
    pub max_attempts: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            side: 1.0,
            obstacle_count: (8, 14),
            size_range: (0.05, 0.25),
            min_free_fraction: 0.3,
            max_attempts: 100,
        }
    }
}

impl WorldConfig {
    pub fn empty(side: f64) -> Self {
        Self { side, obstacle_count: (0, 0), ..Self::default() }
    }
}

/// A square workspace `[0, side]²` with obstacles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub side: f64,
    pub obstacles: Vec<Obstacle>,
    pub seed: u64,
}

/// Grid resolution used for the free-space estimate during generation.
const FREE_GRID: usize = 128;

/// Deterministic in `seed`: regenerates until the free fraction reaches the configured minimum.
pub fn generate_world(seed: u64, config: &WorldConfig) -> Result<World, EnvError> {
    if !(config.side > 0.0) {
        return Err(EnvError::Config(format!("side must be positive, got {}", config.side)));
    }
    let (lo, hi) = config.obstacle_count;
    let (smin, smax) = config.size_range;
    if lo > hi || !(smin > 0.0) || smin > smax {
        return Err(EnvError::Config("invalid obstacle count or size range".into()));
    }
    let s = config.side;
    let mut rng = seeded_rng(seed);
    for _ in 0..config.max_attempts {
        let count = rng.random_range(lo..=hi);
        let mut obstacles = Vec::with_capacity(count);
        for _ in 0..count {
            let size = |rng: &mut rand_chacha::ChaCha8Rng| f32_grid(rng.random_range(smin..=smax) * s);
            // Centers inside the workspace keep every obstacle overlapping it.
            let cx = f32_grid(rng.random_range(0.0..s));
            let cy = f32_grid(rng.random_range(0.0..s));
            let ob = if rng.random_bool(0.5) {
                let (w, h) = (size(&mut rng), size(&mut rng));
                Obstacle::Rect { x: f32_grid(cx - w / 2.0), y: f32_grid(cy - h / 2.0), w, h }
            } else {
                Obstacle::Circle { cx, cy, r: f32_grid(size(&mut rng) / 2.0) }
            };
            obstacles.push(ob);
        }
        let world = World { side: s, obstacles, seed };
        if world.free_fraction(FREE_GRID) >= config.min_free_fraction {
            return Ok(world);
        }
    }
    Err(EnvError::Generation { attempts: config.max_attempts })
}

/// Generated geometry is snapped to single precision so it serializes losslessly.
fn f32_grid(v: f64) -> f64 {
    v as f32 as f64
}

impl World {
    pub fn empty(side: f64) -> Self {
        Self { side, obstacles: Vec::new(), seed: 0 }
    }

    pub fn in_bounds(&self, q: Config2D) -> bool {
        q.x >= 0.0 && q.x <= self.side && q.y >= 0.0 && q.y <= self.side
    }

    /// Inside the workspace and strictly outside every obstacle.
    pub fn is_state_valid(&self, q: Config2D) -> bool {
        q.is_finite() && self.in_bounds(q) && !self.obstacles.iter().any(|o| o.contains(q))
    }

    /// Checks interpolated states along `ab` at a spacing of at most `delta`,
    /// both endpoints included.
    ///
    /// The segment is split into `2^k` pieces for the smallest sufficient `k`, so
    /// the checked points for a smaller `delta` are a superset of those for a larger one.
    /// Endpoints are put in a canonical order first, making the check symmetric.
    pub fn is_edge_valid(&self, a: Config2D, b: Config2D, delta: f64) -> bool {
        debug_assert!(delta > 0.0);
        let (a, b) = if (a.x, a.y) <= (b.x, b.y) { (a, b) } else { (b, a) };
        if !self.is_state_valid(a) || !self.is_state_valid(b) {
            return false;
        }
        let len = a.distance(b);
        let mut pieces: u64 = 1;
        while len / pieces as f64 > delta && pieces < 1 << 40 {
            pieces <<= 1;
        }
        (1..pieces).all(|i| self.is_state_valid(a.lerp(b, i as f64 / pieces as f64)))
    }

    /// Exact test that the whole closed segment lies in free space.
    pub fn is_segment_free_exact(&self, a: Config2D, b: Config2D) -> bool {
        a.is_finite()
            && b.is_finite()
            && self.in_bounds(a)
            && self.in_bounds(b)
            && !self.obstacles.iter().any(|o| o.intersects_segment(a, b))
    }

    /// Fraction of a `grid x grid` lattice of cell centers that is collision-free.
    pub fn free_fraction(&self, grid: usize) -> f64 {
        let cs = self.side / grid as f64;
        let mut free = 0usize;
        for i in 0..grid {
            for j in 0..grid {
                let q = Config2D::new((j as f64 + 0.5) * cs, (i as f64 + 0.5) * cs);
                if !self.obstacles.iter().any(|o| o.contains(q)) {
                    free += 1;
                }
            }
        }
        free as f64 / (grid * grid) as f64
    }
}

/// Uniform draw from the workspace; validity is left to the caller.
pub fn sample_uniform<R: Rng + ?Sized>(world: &World, rng: &mut R) -> Config2D {
    Config2D::new(rng.random_range(0.0..=world.side), rng.random_range(0.0..=world.side))
}

/// A start/goal query on a world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub world: World,
    pub start: Config2D,
    pub goal: Config2D,
    pub goal_radius: f64,
}

impl ProblemInstance {
    pub fn new(world: World, start: Config2D, goal: Config2D, goal_radius: f64) -> Result<Self, EnvError> {
        if !world.is_state_valid(start) {
            return Err(EnvError::InvalidState { what: "start", x: start.x, y: start.y });
        }
        if !world.is_state_valid(goal) {
            return Err(EnvError::InvalidState { what: "goal", x: goal.x, y: goal.y });
        }
        if !(goal_radius >= 0.0) {
            return Err(EnvError::Config(format!("goal radius must be nonnegative, got {goal_radius}")));
        }
        Ok(Self { world, start, goal, goal_radius })
    }

    pub fn in_goal(&self, q: Config2D) -> bool {
        q.distance(self.goal) <= self.goal_radius
    }
}

/// Minimum start-goal separation as a fraction of the side.
pub const MIN_SEPARATION: f64 = 0.4;
const MAX_REJECTIONS: usize = 1000;

/// Rejection-samples valid, well-separated endpoints. Coordinates are snapped to `f32`.
pub fn random_problem<R: Rng + ?Sized>(world: &World, rng: &mut R, goal_radius: f64) -> Result<ProblemInstance, EnvError> {
    let min_sep = MIN_SEPARATION * world.side;
    let snap = |q: Config2D| Config2D::new(f32_grid(q.x), f32_grid(q.y));
    for _ in 0..MAX_REJECTIONS {
        let start = snap(sample_uniform(world, rng));
        let goal = snap(sample_uniform(world, rng));
        if world.is_state_valid(start) && world.is_state_valid(goal) && start.distance(goal) >= min_sep {
            return ProblemInstance::new(world.clone(), start, goal, goal_radius);
        }
    }
    Err(EnvError::InfeasibleProblem { rejections: MAX_REJECTIONS })
}
