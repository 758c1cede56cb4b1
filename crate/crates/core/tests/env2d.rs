//! Worlds, costmaps and validity checks against independent geometric oracles.

use proptest::prelude::*;
use rand::Rng;
use vqmpt::env2d::*;

/// Point-in-obstacle oracle written directly from the shape definitions.
fn inside(o: &Obstacle, x: f64, y: f64) -> bool {
    match *o {
        Obstacle::Rect { x: rx, y: ry, w, h } => rx <= x && x <= rx + w && ry <= y && y <= ry + h,
        Obstacle::Circle { cx, cy, r } => (x - cx).hypot(y - cy) <= r,
    }
}

/// Closed segment vs closed obstacle, by separating axes (rectangles)
/// and the clamped projection of the center (circles).
fn segment_hits(o: &Obstacle, a: Config2D, b: Config2D) -> bool {
    match *o {
        Obstacle::Rect { x, y, w, h } => {
            let (cx, cy, hx, hy) = (x + w / 2.0, y + h / 2.0, w / 2.0, h / 2.0);
            let (mx, my) = ((a.x + b.x) / 2.0 - cx, (a.y + b.y) / 2.0 - cy);
            let (dx, dy) = ((b.x - a.x) / 2.0, (b.y - a.y) / 2.0);
            if mx.abs() > hx + dx.abs() || my.abs() > hy + dy.abs() {
                return false;
            }
            // Axis normal to the segment.
            (mx * dy - my * dx).abs() <= hx * dy.abs() + hy * dx.abs()
        }
        Obstacle::Circle { cx, cy, r } => {
            let (vx, vy) = (b.x - a.x, b.y - a.y);
            let len2 = vx * vx + vy * vy;
            let t = if len2 == 0.0 { 0.0 } else { (((cx - a.x) * vx + (cy - a.y) * vy) / len2).clamp(0.0, 1.0) };
            (a.x + t * vx - cx).hypot(a.y + t * vy - cy) <= r
        }
    }
}

fn world(seed: u64) -> World {
    generate_world(seed, &WorldConfig::default()).unwrap()
}

#[test]
fn generated_worlds_keep_enough_free_space() {
    let mut rng = seeded_rng(9);
    for seed in 0..1000 {
        let w = world(seed);
        let m = 10_000;
        let free = (0..m)
            .filter(|_| {
                let (x, y) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
                !w.obstacles.iter().any(|o| inside(o, x, y))
            })
            .count() as f64
            / m as f64;
        // 4.5 sigma of the Monte Carlo estimate at p = 0.3.
        assert!(free >= 0.3 - 4.5 * (0.21f64 / m as f64).sqrt(), "seed {seed}: free fraction {free}");
    }
}

#[test]
fn generation_is_deterministic() {
    for seed in [0, 1, 77, u64::MAX] {
        assert_eq!(world(seed), world(seed));
        assert_eq!(render_costmap(&world(seed), 64).unwrap(), render_costmap(&world(seed), 64).unwrap());
    }
    assert!(generate_world(3, &WorldConfig::empty(1.0)).unwrap().obstacles.is_empty());
}

#[test]
fn costmap_matches_cell_center_oracle() {
    for seed in 0..50 {
        let w = world(seed);
        let cm = render_costmap(&w, 64).unwrap();
        for i in 0..64 {
            for j in 0..64 {
                let (x, y) = ((j as f64 + 0.5) / 64.0, (i as f64 + 0.5) / 64.0);
                let expect = w.obstacles.iter().any(|o| inside(o, x, y)) as u8;
                assert_eq!(cm.get(i, j), expect, "seed {seed} cell ({i},{j})");
            }
        }
    }
}

#[test]
fn state_validity_matches_fine_raster() {
    let n = 1024;
    let cs = 1.0 / n as f64;
    for seed in 0..3 {
        let w = world(seed);
        for i in 0..n {
            for j in 0..n {
                let (x, y) = ((j as f64 + 0.5) * cs, (i as f64 + 0.5) * cs);
                let raster = !w.obstacles.iter().any(|o| inside(o, x, y));
                if w.is_state_valid(Config2D::new(x, y)) != raster {
                    // Only allowed within one cell of a boundary.
                    let near = [(-cs, 0.0), (cs, 0.0), (0.0, -cs), (0.0, cs)]
                        .iter()
                        .any(|(dx, dy)| w.obstacles.iter().any(|o| inside(o, x + dx, y + dy)) == raster);
                    assert!(near, "seed {seed}: mismatch away from a boundary at ({x}, {y})");
                }
            }
        }
    }
    assert!(!World::empty(1.0).is_state_valid(Config2D::new(1.1, 0.5)));
    let w = World { side: 1.0, obstacles: vec![Obstacle::Rect { x: 0.2, y: 0.2, w: 0.2, h: 0.2 }], seed: 0 };
    assert!(!w.is_state_valid(Config2D::new(0.3, 0.3)));
    assert!(!w.is_state_valid(Config2D::new(0.2, 0.3)), "boundary counts as collision");
}

#[test]
fn exact_segment_test_matches_independent_oracle() {
    let mut rng = seeded_rng(4);
    for k in 0..10_000 {
        let w = world(k / 100);
        let a = Config2D::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let b = Config2D::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let oracle = !w.obstacles.iter().any(|o| segment_hits(o, a, b));
        assert_eq!(w.is_segment_free_exact(a, b), oracle, "edge {a:?} -> {b:?}");
    }
}

#[test]
fn discretized_edges_agree_with_exact_geometry() {
    let mut rng = seeded_rng(5);
    let delta = 0.5 / 64.0;
    let mut disagree = 0;
    for k in 0..10_000 {
        let w = world(k / 100);
        let a = Config2D::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let b = Config2D::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let exact = !w.obstacles.iter().any(|o| segment_hits(o, a, b));
        let sampled = w.is_edge_valid(a, b, delta);
        if exact {
            assert!(sampled, "a free segment must pass every sampled check");
        } else if sampled {
            disagree += 1;
        }
    }
    // Misses need a chord shorter than delta, which is rare.
    assert!(disagree <= 50, "{disagree} blocked edges passed the sampled check");
}

#[test]
fn edge_basics() {
    let w = World { side: 1.0, obstacles: vec![Obstacle::Rect { x: 0.4, y: 0.0, w: 0.2, h: 1.0 }], seed: 0 };
    let q = Config2D::new(0.1, 0.1);
    assert!(w.is_edge_valid(q, q, 0.01));
    assert!(!w.is_edge_valid(Config2D::new(0.1, 0.5), Config2D::new(0.9, 0.5), 0.1));
}

#[test]
fn uniform_sampling_moments() {
    let w = World::empty(1.0);
    let mut rng = seeded_rng(6);
    let m = 100_000;
    let (mut sx, mut sy) = (0.0, 0.0);
    for _ in 0..m {
        let q = sample_uniform(&w, &mut rng);
        assert!(w.in_bounds(q));
        sx += q.x;
        sy += q.y;
    }
    let tol = 3.0 * (1.0f64 / 12.0).sqrt() / (m as f64).sqrt();
    assert!((sx / m as f64 - 0.5).abs() < tol);
    assert!((sy / m as f64 - 0.5).abs() < tol);
}

#[test]
fn random_problems_satisfy_invariants() {
    let mut rng = seeded_rng(7);
    for k in 0..500 {
        let w = world(k);
        let p = random_problem(&w, &mut rng, 0.02).unwrap();
        assert!(w.is_state_valid(p.start) && w.is_state_valid(p.goal));
        assert!(p.start.distance(p.goal) >= 0.4);
    }
    let blocked = World { side: 1.0, obstacles: vec![Obstacle::Rect { x: 0.0, y: 0.0, w: 1.0, h: 1.0 }], seed: 0 };
    assert!(matches!(random_problem(&blocked, &mut rng, 0.02), Err(EnvError::InfeasibleProblem { .. })));
}

fn arb_point() -> impl Strategy<Value = Config2D> {
    (0.0..1.0f64, 0.0..1.0f64).prop_map(|(x, y)| Config2D::new(x, y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn edge_check_is_symmetric(seed in 0u64..50, a in arb_point(), b in arb_point(), delta in 0.001..0.2f64) {
        let w = world(seed);
        prop_assert_eq!(w.is_edge_valid(a, b, delta), w.is_edge_valid(b, a, delta));
    }

    #[test]
    fn shrinking_delta_never_validates(seed in 0u64..50, a in arb_point(), b in arb_point(), delta in 0.001..0.2f64, f in 0.05..1.0f64) {
        let w = world(seed);
        if w.is_edge_valid(a, b, delta * f) {
            prop_assert!(w.is_edge_valid(a, b, delta));
        }
    }

    #[test]
    fn valid_edges_have_valid_endpoints(seed in 0u64..50, a in arb_point(), b in arb_point()) {
        let w = world(seed);
        if w.is_edge_valid(a, b, 0.01) {
            prop_assert!(w.is_state_valid(a) && w.is_state_valid(b));
        }
    }
}
