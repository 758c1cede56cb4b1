use std::cmp::Ordering;

use crate::numerics::NumericsError;

/// Next-class log-probabilities over `classes()` classes; the last class ends a sequence.
pub trait NextTokenModel {
    fn classes(&self) -> usize;
    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>, NumericsError>;
}

/// A scored complete sequence ending with the goal class.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub sequence: Vec<usize>,
    pub score: f64,
}

/// Higher score first, then the lexicographically smaller sequence.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.sequence.cmp(&b.sequence))
}

/// Length-capped beam search maximizing the summed log-probability of the sequence.
///
/// All one-step extensions of the live hypotheses, goal completions included, are ranked
/// together and the best `width` kept; those that emitted the goal class are finished.
/// A hypothesis with `max_len − 1` codes can only be completed with the goal class.
pub fn beam_search<M: NextTokenModel + ?Sized>(model: &M, width: usize, max_len: usize) -> Result<Hypothesis, NumericsError> {
    if width == 0 || max_len == 0 {
        return Err(NumericsError::Config("beam width and max length must be positive".into()));
    }
    let goal = model.classes() - 1;
    let mut live = vec![Hypothesis { sequence: Vec::new(), score: 0.0 }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() {
        let mut pool = Vec::new();
        for h in &live {
            let lp = model.log_probs(&h.sequence)?;
            let forced = h.sequence.len() + 1 >= max_len;
            for (c, &l) in lp.iter().enumerate() {
                if forced && c != goal {
                    continue;
                }
                let mut sequence = h.sequence.clone();
                sequence.push(c);
                pool.push(Hypothesis { sequence, score: h.score + l });
            }
        }
        pool.sort_by(rank);
        pool.truncate(width);
        live.clear();
        for h in pool {
            if h.sequence.last() == Some(&goal) {
                finished.push(h);
            } else {
                live.push(h);
            }
        }
    }
    finished.sort_by(rank);
    Ok(finished.swap_remove(0))
}

/// Exhaustive argmax over every sequence of at most `max_len − 1` codes followed by the goal.
pub fn brute_force_best<M: NextTokenModel + ?Sized>(model: &M, max_len: usize) -> Result<Hypothesis, NumericsError> {
    let goal = model.classes() - 1;
    let mut best: Option<Hypothesis> = None;
    let mut stack = vec![(Vec::<usize>::new(), 0.0f64)];
    while let Some((prefix, score)) = stack.pop() {
        let lp = model.log_probs(&prefix)?;
        let mut done = prefix.clone();
        done.push(goal);
        let cand = Hypothesis { sequence: done, score: score + lp[goal] };
        if best.as_ref().is_none_or(|b| rank(&cand, b) == Ordering::Less) {
            best = Some(cand);
        }
        if prefix.len() + 1 < max_len {
            for (c, &l) in lp.iter().enumerate().take(goal) {
                let mut next = prefix.clone();
                next.push(c);
                stack.push((next, score + l));
            }
        }
    }
    Ok(best.expect("at least the goal-only sequence"))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed table keyed on prefix length only.
    struct ByDepth(Vec<Vec<f64>>);

    impl NextTokenModel for ByDepth {
        fn classes(&self) -> usize {
            self.0[0].len()
        }
        fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>, NumericsError> {
            Ok(self.0[prefix.len().min(self.0.len() - 1)].iter().map(|p: &f64| p.ln()).collect())
        }
    }

    #[test]
    fn greedy_stops_at_likely_goal() {
        let m = ByDepth(vec![vec![0.3, 0.1, 0.6]]);
        assert_eq!(beam_search(&m, 1, 5).unwrap().sequence, vec![2]);
    }

    #[test]
    fn length_cap_forces_goal() {
        // The goal only becomes likely after two codes.
        let m = ByDepth(vec![vec![0.9, 0.09, 0.01], vec![0.9, 0.09, 0.01], vec![0.1, 0.1, 0.8]]);
        assert_eq!(beam_search(&m, 2, 3).unwrap().sequence, vec![0, 0, 2]);
        assert_eq!(brute_force_best(&m, 3).unwrap().sequence, vec![0, 0, 2]);
        // With room for a single code the cap forces an early goal.
        assert_eq!(beam_search(&m, 3, 2).unwrap().sequence, vec![2]);
        assert_eq!(brute_force_best(&m, 2).unwrap().sequence, vec![2]);
    }

    #[test]
    fn wider_beam_finds_better_sequence() {
        // Greedy takes class 0 first, but class 1 then goal scores higher overall.
        struct Trap;
        impl NextTokenModel for Trap {
            fn classes(&self) -> usize {
                3
            }
            fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>, NumericsError> {
                let p = match prefix {
                    [] => [0.5f64, 0.4, 0.1],
                    [0] => [0.34, 0.33, 0.33],
                    [1] => [0.0, 0.0, 1.0],
                    _ => [0.0, 0.0, 1.0],
                };
                Ok(p.iter().map(|v| v.ln()).collect())
            }
        }
        assert_eq!(beam_search(&Trap, 1, 4).unwrap().sequence, vec![0, 0, 2]);
        assert_eq!(beam_search(&Trap, 3, 4).unwrap().sequence, vec![1, 2]);
        assert_eq!(brute_force_best(&Trap, 4).unwrap().sequence, vec![1, 2]);
    }
}
