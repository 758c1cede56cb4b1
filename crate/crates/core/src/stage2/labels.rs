use crate::env2d::Config2D;
use crate::numerics::NumericsError;
use crate::stage1::{Codebook, Stage1Model};

/// Waypoint spacing used when densifying a demonstration, as a fraction of the side.
pub const LABEL_SPACING: f64 = 0.05;

/// Resamples a polyline so consecutive points are at most `spacing` apart, keeping every vertex.
pub fn densify(path: &[Config2D], spacing: f64) -> Vec<Config2D> {
    let Some(&first) = path.first() else { return Vec::new() };
    let mut out = vec![first];
    for w in path.windows(2) {
        let pieces = (w[0].distance(w[1]) / spacing).ceil().max(1.0) as usize;
        for i in 1..pieces {
            out.push(w[0].lerp(w[1], i as f64 / pieces as f64));
        }
        out.push(w[1]);
    }
    out
}

pub fn dedup_consecutive(indices: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(indices.len());
    for &i in indices {
        if out.last() != Some(&i) {
            out.push(i);
        }
    }
    out
}

/// Keeps at most `cap` entries spread evenly over the sequence, first and last included.
fn subsample(seq: &[usize], cap: usize) -> Vec<usize> {
    if seq.len() <= cap {
        return seq.to_vec();
    }
    if cap == 1 {
        return vec![seq[0]];
    }
    (0..cap).map(|k| seq[k * (seq.len() - 1) / (cap - 1)]).collect()
}

/// Labels from per-step codes: collapse repeats, cap at `max_len − 1` codes, append the goal class.
pub fn labels_from_indices(raw: &[usize], goal: usize, max_len: usize) -> Vec<usize> {
    let mut seq = dedup_consecutive(&subsample(&dedup_consecutive(raw), max_len.saturating_sub(1).max(1)));
    seq.push(goal);
    seq
}

/// Code-index targets for one demonstration.
pub fn ground_truth_indices(stage1: &Stage1Model, codebook: &Codebook, demo: &[Config2D], max_len: usize) -> Result<Vec<usize>, NumericsError> {
    let dense = densify(demo, LABEL_SPACING * stage1.config.side);
    let (raw, _) = stage1.transduce(codebook, &dense)?;
    Ok(labels_from_indices(&raw, codebook.size(), max_len))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapse_and_append() {
        assert_eq!(labels_from_indices(&[5, 5, 2, 2, 2, 7], 32, 12), vec![5, 2, 7, 32]);
        assert_eq!(labels_from_indices(&[4], 32, 12), vec![4, 32]);
    }

    #[test]
    fn cap_keeps_ends_and_has_no_repeats() {
        let raw: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let l = labels_from_indices(&raw, 32, 5);
        assert!(l.len() <= 5);
        assert_eq!(*l.last().unwrap(), 32);
        assert_eq!(l[0], 0);
        assert!(l.windows(2).all(|w| w[0] != w[1]));
    }

    #[test]
    fn densify_spacing() {
        let p = [Config2D::new(0.0, 0.0), Config2D::new(1.0, 0.0), Config2D::new(1.0, 0.3)];
        let d = densify(&p, 0.1);
        assert_eq!(d.first(), p.first());
        assert_eq!(d.last(), p.last());
        assert!(d.windows(2).all(|w| w[0].distance(w[1]) <= 0.1 + 1e-12));
        assert!(d.contains(&p[1]));
    }
}
