use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng::SeedStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Both,
    PastOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingPolicy {
    /// Spacing between candidate frames.
    pub interval: usize,
    pub max_candidates: usize,
    /// Frames returned, target included.
    pub sample_size: usize,
    pub direction: Direction,
    /// Optional cap on `|frame - target|`.
    pub max_distance: Option<usize>,
    pub seed: u64,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self {
            interval: 3,
            max_candidates: 100,
            sample_size: 11,
            direction: Direction::Both,
            max_distance: None,
            seed: 0,
        }
    }
}

impl SamplingPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.sample_size == 0 || self.interval == 0 {
            return Err(Error::Config(
                "sample_size and interval must be at least 1".into(),
            ));
        }
        if self.max_candidates + 1 < self.sample_size {
            return Err(Error::Config(format!(
                "max_candidates ({}) must be at least sample_size - 1 ({})",
                self.max_candidates,
                self.sample_size - 1
            )));
        }
        Ok(())
    }
}

/// Equidistant candidates around `target`, alternating after/before
/// (`t + i, t - i, t + 2i, ...`) and continuing on one side once the other is
/// exhausted, capped at `max_candidates`.
pub fn candidate_frames(len: usize, target: usize, policy: &SamplingPolicy) -> Vec<usize> {
    let reach = policy.max_distance.unwrap_or(usize::MAX);
    let step = policy.interval;
    let after: Vec<usize> = if policy.direction == Direction::Both {
        (1..)
            .map(|k| k * step)
            .take_while(|&d| d <= reach && target + d < len)
            .map(|d| target + d)
            .collect()
    } else {
        Vec::new()
    };
    let before: Vec<usize> = (1..)
        .map(|k| k * step)
        .take_while(|&d| d <= reach && d <= target)
        .map(|d| target - d)
        .collect();
    let mut out = Vec::with_capacity(after.len() + before.len());
    let (mut a, mut b) = (after.into_iter(), before.into_iter());
    loop {
        match (a.next(), b.next()) {
            (None, None) => break,
            (x, y) => out.extend(x.into_iter().chain(y)),
        }
    }
    out.truncate(policy.max_candidates);
    out
}

/// Target plus up to `sample_size - 1` candidates drawn uniformly without
/// replacement, sorted ascending.
pub fn sample_frames(len: usize, target: usize, policy: &SamplingPolicy) -> Result<Vec<usize>> {
    policy.validate()?;
    if target >= len {
        return Err(Error::FrameOutOfRange {
            frame: target,
            frames: len,
        });
    }
    let candidates = candidate_frames(len, target, policy);
    let take = (policy.sample_size - 1).min(candidates.len());
    let mut rng = SeedStream::new(policy.seed).rng("frame-sampling");
    let mut out: Vec<usize> = index::sample(&mut rng, candidates.len(), take)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    out.push(target);
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn long_video_defaults() {
        let p = SamplingPolicy::default();
        let c = candidate_frames(1000, 500, &p);
        assert_eq!(c.len(), 100);
        let mut expected: Vec<usize> = (1..=50).flat_map(|k| [500 + 3 * k, 500 - 3 * k]).collect();
        assert_eq!(c, expected);
        expected.sort_unstable();
        let s = sample_frames(1000, 500, &p).unwrap();
        assert_eq!(s.len(), 11);
        assert!(s.contains(&500));
        assert!(s.iter().all(|f| *f == 500 || expected.binary_search(f).is_ok()));
    }

    #[test]
    fn exhausted_side_is_filled_from_the_other() {
        let p = SamplingPolicy::default();
        assert_eq!(candidate_frames(7, 0, &p), vec![3, 6]);
        assert_eq!(sample_frames(7, 0, &p).unwrap(), vec![0, 3, 6]);
        let p = SamplingPolicy {
            max_candidates: 5,
            ..SamplingPolicy::default()
        };
        assert_eq!(candidate_frames(30, 4, &p), vec![7, 1, 10, 13, 16]);
    }

    #[test]
    fn past_only_and_distance_cap() {
        let p = SamplingPolicy {
            direction: Direction::PastOnly,
            sample_size: 3,
            ..SamplingPolicy::default()
        };
        assert_eq!(candidate_frames(40, 10, &p), vec![7, 4, 1]);
        for seed in 0..20 {
            let s = sample_frames(40, 10, &SamplingPolicy { seed, ..p.clone() }).unwrap();
            assert_eq!(s.len(), 3);
            assert!(s.iter().all(|f| [10, 7, 4, 1].contains(f)));
        }
        let capped = SamplingPolicy {
            max_distance: Some(6),
            ..SamplingPolicy::default()
        };
        assert_eq!(candidate_frames(40, 10, &capped), vec![13, 7, 16, 4]);
    }

    #[test]
    fn errors_and_determinism() {
        let p = SamplingPolicy::default();
        assert!(matches!(
            sample_frames(5, 5, &p),
            Err(Error::FrameOutOfRange { frame: 5, frames: 5 })
        ));
        let bad = SamplingPolicy {
            max_candidates: 3,
            ..SamplingPolicy::default()
        };
        assert!(sample_frames(100, 50, &bad).is_err());
        assert_eq!(
            sample_frames(300, 150, &p).unwrap(),
            sample_frames(300, 150, &p).unwrap()
        );
        let other = SamplingPolicy { seed: 1, ..p.clone() };
        assert_ne!(
            sample_frames(300, 150, &p).unwrap(),
            sample_frames(300, 150, &other).unwrap()
        );
    }
}
