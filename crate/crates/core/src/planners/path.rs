use std::io::{self, BufRead, Write};

use rand::Rng;

use super::{PlannerError, Trajectory};
use crate::env2d::{Config2D, World};

/// Edge test used by every planner: the exact segment test together with the
/// `delta`-discretized check, so accepted edges are valid under both.
pub fn connect(world: &World, a: Config2D, b: Config2D, delta: f64) -> bool {
    world.is_segment_free_exact(a, b) && world.is_edge_valid(a, b, delta)
}

/// Sum of consecutive Euclidean distances.
pub fn path_length(path: &[Config2D]) -> f64 {
    path.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Stop rule for optimizing planners: `len(candidate) ≤ (1 + ε)·len(reference)`.
pub fn termination_met(candidate: &[Config2D], reference: &[Config2D], epsilon: f64) -> Result<bool, PlannerError> {
    if !(epsilon >= 0.0) {
        return Err(PlannerError::Domain(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    Ok(path_length(candidate) <= (1.0 + epsilon) * path_length(reference))
}

/// Every waypoint and every edge is free under the exact geometry test.
pub fn path_is_valid_exact(world: &World, path: &[Config2D]) -> bool {
    !path.is_empty()
        && path.iter().all(|&q| world.is_state_valid(q))
        && path.windows(2).all(|w| world.is_segment_free_exact(w[0], w[1]))
}

/// Shortcutting: `passes` random attempts to join waypoints `i < j` directly, then one
/// greedy sweep that jumps to the farthest connectable waypoint.
pub fn simplify<R: Rng + ?Sized>(world: &World, path: &[Config2D], delta: f64, rng: &mut R, passes: usize) -> Trajectory {
    let mut out = path.to_vec();
    for _ in 0..passes {
        if out.len() < 3 {
            break;
        }
        let i = rng.random_range(0..out.len() - 2);
        let j = rng.random_range(i + 2..out.len());
        if connect(world, out[i], out[j], delta) {
            out.drain(i + 1..j);
        }
    }
    if out.len() < 3 {
        return out;
    }
    let mut greedy = vec![out[0]];
    let mut i = 0;
    while i + 1 < out.len() {
        let mut j = out.len() - 1;
        while j > i + 1 && !connect(world, out[i], out[j], delta) {
            j -= 1;
        }
        greedy.push(out[j]);
        i = j;
    }
    greedy
}

/// Formats `v` with 9 significant digits in plain decimal notation.
fn sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (8 - mag).max(0) as usize;
    format!("{v:.decimals$}")
}

pub const PATH_CSV_HEADER: &str = "x,y";

pub fn write_path_csv<W: Write>(path: &[Config2D], mut out: W) -> io::Result<()> {
    writeln!(out, "{PATH_CSV_HEADER}")?;
    for q in path {
        writeln!(out, "{},{}", sig9(q.x), sig9(q.y))?;
    }
    Ok(())
}

pub fn read_path_csv<R: BufRead>(input: R) -> io::Result<Trajectory> {
    let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
    let mut lines = input.lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim) != Some(PATH_CSV_HEADER) {
        return Err(bad("missing x,y header".into()));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (x, y) = line.split_once(',').ok_or_else(|| bad(format!("bad row {line:?}")))?;
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("bad number {s:?}: {e}")));
        out.push(Config2D::new(parse(x)?, parse(y)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env2d::seeded_rng;

    #[test]
    fn three_four_five() {
        assert_eq!(path_length(&[Config2D::new(0.0, 0.0), Config2D::new(3.0, 4.0)]), 5.0);
    }

    #[test]
    fn repeated_waypoint_adds_nothing() {
        let a = Config2D::new(0.0, 0.0);
        let b = Config2D::new(3.0, 4.0);
        assert_eq!(path_length(&[a, a, b, b]), 5.0);
    }

    #[test]
    fn termination_rule() {
        let r = [Config2D::new(0.0, 0.0), Config2D::new(1.0, 0.0)];
        let c = [Config2D::new(0.0, 0.0), Config2D::new(1.4, 0.0)];
        assert!(termination_met(&r, &r, 0.0).unwrap());
        assert!(termination_met(&c, &r, 0.5).unwrap());
        assert!(!termination_met(&c, &r, 0.1).unwrap());
        assert!(termination_met(&c, &r, 0.4).unwrap());
        assert!(termination_met(&c, &r, -0.1).is_err());
    }

    #[test]
    fn collinear_path_collapses() {
        let w = World::empty(1.0);
        let p = [Config2D::new(0.0, 0.0), Config2D::new(0.5, 0.5), Config2D::new(1.0, 1.0)];
        let s = simplify(&w, &p, 0.01, &mut seeded_rng(0), 0);
        assert_eq!(s, vec![p[0], p[2]]);
        let two = [p[0], p[2]];
        assert_eq!(simplify(&w, &two, 0.01, &mut seeded_rng(0), 4), two.to_vec());
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(sig9(0.123456789123), "0.123456789");
        assert_eq!(sig9(12.5), "12.5000000");
        assert_eq!(sig9(0.0), "0");
    }

    #[test]
    fn csv_round_trip() {
        let p = vec![Config2D::new(0.25, 0.5), Config2D::new(0.75, 0.125)];
        let mut buf = Vec::new();
        write_path_csv(&p, &mut buf).unwrap();
        assert!(buf.starts_with(b"x,y\n"));
        assert_eq!(read_path_csv(&buf[..]).unwrap(), p);
        assert!(read_path_csv(&b"a,b\n1,2\n"[..]).is_err());
    }
}
