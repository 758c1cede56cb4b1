//! Planner soundness, convergence and path utilities.

use proptest::prelude::*;
use rand::Rng;
use vqmpt::env2d::*;
use vqmpt::planners::*;

fn corridor() -> World {
    // A wall with a single gap near the top.
    World {
        side: 1.0,
        obstacles: vec![
            Obstacle::Rect { x: 0.45, y: 0.0, w: 0.1, h: 0.8 },
            Obstacle::Circle { cx: 0.25, cy: 0.3, r: 0.1 },
            Obstacle::Circle { cx: 0.75, cy: 0.6, r: 0.1 },
        ],
        seed: 0,
    }
}

fn check_result(p: &ProblemInstance, r: &PlannerResult) {
    assert!(r.vertices <= r.samples_drawn + 2);
    assert_eq!(r.success, r.path.is_some());
    if let Some(path) = &r.path {
        assert!(path.len() >= 2);
        assert_eq!(path[0], p.start);
        assert!(p.in_goal(*path.last().unwrap()));
        assert!(path_is_valid_exact(&p.world, path), "invalid path {path:?}");
    }
}

#[test]
fn nearest_matches_linear_scan() {
    let mut rng = seeded_rng(1);
    let w = World::empty(1.0);
    let mut tree = Tree::new(sample_uniform(&w, &mut rng));
    for i in 1..1000 {
        let q = sample_uniform(&w, &mut rng);
        tree.add(q, rng.random_range(0..i));
    }
    for _ in 0..10_000 {
        let q = sample_uniform(&w, &mut rng);
        let mut best = 0;
        for (i, n) in tree.nodes().iter().enumerate() {
            if n.distance_sq(q) < tree.nodes()[best].distance_sq(q) {
                best = i;
            }
        }
        assert_eq!(tree.nearest(q), best);
    }
}

#[test]
fn empty_world_connects_immediately() {
    let w = World::empty(1.0);
    let p = ProblemInstance::new(w.clone(), Config2D::new(0.1, 0.1), Config2D::new(0.9, 0.8), 0.02).unwrap();
    for seed in 0..10 {
        let mut s = UniformSampler::new(&w, seed);
        let r = vqmpt_plan(&p, &mut s, &VqmptConfig::default(), &mut seeded_rng(seed)).unwrap();
        assert!(r.success);
        assert_eq!(r.path.unwrap(), vec![p.start, p.goal]);
    }
}

#[test]
fn zero_iterations_fail_with_root_only() {
    let p = ProblemInstance::new(World::empty(1.0), Config2D::new(0.1, 0.1), Config2D::new(0.9, 0.8), 0.02).unwrap();
    let mut s = UniformSampler::new(&p.world, 0);
    let cfg = VqmptConfig { iterations: 0, ..VqmptConfig::default() };
    let r = vqmpt_plan(&p, &mut s, &cfg, &mut seeded_rng(0)).unwrap();
    assert!(!r.success);
    assert_eq!(r.vertices, 1);
}

#[test]
fn invalid_start_is_rejected() {
    let w = corridor();
    let p = ProblemInstance { world: w.clone(), start: Config2D::new(0.5, 0.5), goal: Config2D::new(0.9, 0.9), goal_radius: 0.02 };
    let mut s = UniformSampler::new(&w, 0);
    assert_eq!(vqmpt_plan(&p, &mut s, &VqmptConfig::default(), &mut seeded_rng(0)), Err(PlannerError::InvalidStart));
    assert_eq!(rrt_star_plan(&p, &RrtStarConfig::default(), &mut seeded_rng(0)).unwrap_err(), PlannerError::InvalidStart);
}

#[test]
fn corridor_runs_are_sound() {
    let w = corridor();
    let p = ProblemInstance::new(w.clone(), Config2D::new(0.1, 0.1), Config2D::new(0.9, 0.1), 0.02).unwrap();
    let mut successes = 0;
    for seed in 0..100 {
        let mut s = UniformSampler::new(&w, seed);
        let r = vqmpt_plan(&p, &mut s, &VqmptConfig::default(), &mut seeded_rng(seed + 1000)).unwrap();
        check_result(&p, &r);
        successes += r.success as usize;
    }
    assert!(successes > 50, "only {successes} of 100 runs succeeded");
}

#[test]
fn planners_are_deterministic() {
    let w = corridor();
    let p = ProblemInstance::new(w.clone(), Config2D::new(0.1, 0.1), Config2D::new(0.9, 0.1), 0.02).unwrap();
    let run = || {
        let mut s = UniformSampler::new(&w, 5);
        let mut r = vqmpt_plan(&p, &mut s, &VqmptConfig::default(), &mut seeded_rng(6)).unwrap();
        r.wall_time = 0.0;
        r
    };
    assert_eq!(run(), run());
    let cfg = RrtStarConfig { max_time: None, max_iterations: 3000, ..RrtStarConfig::default() };
    let star = || {
        let mut r = rrt_star_plan(&p, &cfg, &mut seeded_rng(7)).unwrap();
        r.wall_time = 0.0;
        r
    };
    assert_eq!(star(), star());
}

#[test]
fn random_world_queries_are_sound() {
    let mut rng = seeded_rng(3);
    for k in 0..100 {
        let w = generate_world(k, &WorldConfig::default()).unwrap();
        let p = random_problem(&w, &mut rng, 0.02).unwrap();
        let mut s = UniformSampler::new(&w, k);
        check_result(&p, &vqmpt_plan(&p, &mut s, &VqmptConfig::default(), &mut rng).unwrap());
        let cfg = RrtStarConfig { max_time: None, max_iterations: 1500, ..RrtStarConfig::default() };
        check_result(&p, &rrt_star_plan(&p, &cfg, &mut rng).unwrap());
    }
}

#[test]
fn rrt_star_converges_in_empty_world() {
    let w = World::empty(1.0);
    let p = ProblemInstance::new(w, Config2D::new(0.1, 0.2), Config2D::new(0.85, 0.9), 0.02).unwrap();
    let straight = p.start.distance(p.goal);
    for seed in 0..10 {
        let cfg = RrtStarConfig { max_time: None, max_iterations: 100_000, target_cost: Some(1.05 * straight), ..RrtStarConfig::default() };
        let r = rrt_star_plan(&p, &cfg, &mut seeded_rng(seed)).unwrap();
        let path = r.path.expect("empty world is solvable");
        assert!(path_length(&path) <= 1.05 * straight + 1e-12, "seed {seed}: {}", path_length(&path));
    }
}

#[test]
fn rrt_star_without_time_fails() {
    let p = ProblemInstance::new(corridor(), Config2D::new(0.1, 0.1), Config2D::new(0.9, 0.1), 0.02).unwrap();
    let cfg = RrtStarConfig { max_time: Some(std::time::Duration::ZERO), ..RrtStarConfig::default() };
    assert!(!rrt_star_plan(&p, &cfg, &mut seeded_rng(0)).unwrap().success);
}

#[test]
fn simplify_never_lengthens() {
    let mut rng = seeded_rng(4);
    let mut checked = 0;
    for k in 0..200 {
        if checked == 100 {
            break;
        }
        let w = generate_world(k, &WorldConfig::default()).unwrap();
        let p = random_problem(&w, &mut rng, 0.02).unwrap();
        let cfg = RrtStarConfig { max_time: None, max_iterations: 800, ..RrtStarConfig::default() };
        let Some(path) = rrt_star_plan(&p, &cfg, &mut rng).unwrap().path else { continue };
        let short = simplify(&w, &path, 0.01, &mut rng, 2 * path.len());
        assert!(short.len() <= path.len());
        assert!(path_length(&short) <= path_length(&path) + 1e-12);
        assert!(path_is_valid_exact(&w, &short));
        assert_eq!(short.first(), path.first());
        assert_eq!(short.last(), path.last());
        checked += 1;
    }
    assert_eq!(checked, 100);
    let two = vec![Config2D::new(0.1, 0.1), Config2D::new(0.2, 0.3)];
    assert_eq!(simplify(&World::empty(1.0), &two, 0.01, &mut rng, 10), two);
}

#[test]
fn negative_epsilon_is_a_domain_error() {
    let a = vec![Config2D::new(0.0, 0.0), Config2D::new(1.0, 0.0)];
    assert!(matches!(termination_met(&a, &a, -0.1), Err(PlannerError::Domain(_))));
}

fn arb_path() -> impl Strategy<Value = Vec<Config2D>> {
    prop::collection::vec((0.0..1.0f64, 0.0..1.0f64).prop_map(|(x, y)| Config2D::new(x, y)), 2..8)
}

proptest! {
    #[test]
    fn length_is_reversal_invariant(path in arb_path()) {
        let mut rev = path.clone();
        rev.reverse();
        prop_assert!((path_length(&path) - path_length(&rev)).abs() <= 1e-12);
    }

    #[test]
    fn termination_boundary_counts(path in arb_path(), eps in 0.0..2.0f64) {
        prop_assert!(termination_met(&path, &path, eps).unwrap());
        prop_assert!(termination_met(&path, &path, 0.0).unwrap());
    }

    #[test]
    fn termination_is_monotone_in_epsilon(c in arb_path(), r in arb_path(), e1 in 0.0..2.0f64, e2 in 0.0..2.0f64) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        if termination_met(&c, &r, lo).unwrap() {
            prop_assert!(termination_met(&c, &r, hi).unwrap());
        }
    }

    #[test]
    fn termination_matches_direct_inequality(c in arb_path(), r in arb_path(), eps in 0.0..2.0f64) {
        let lc: f64 = c.windows(2).map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y)).sum();
        let lr: f64 = r.windows(2).map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y)).sum();
        prop_assert_eq!(termination_met(&c, &r, eps).unwrap(), lc <= (1.0 + eps) * lr);
    }

    #[test]
    fn csv_round_trip_is_exact(path in arb_path()) {
        let mut buf = Vec::new();
        write_path_csv(&path, &mut buf).unwrap();
        let back = read_path_csv(&buf[..]).unwrap();
        prop_assert_eq!(back.len(), path.len());
        for (a, b) in back.iter().zip(&path) {
            prop_assert!((a.x - b.x).abs() <= 1e-8 && (a.y - b.y).abs() <= 1e-8);
        }
    }
}
