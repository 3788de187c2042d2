//! Temporal sampling: the uniform sampling augmentation, the interpolating
//! random-crop baseline, deterministic evaluation sampling, and circular
//! padding.

use super::{DatasetSpec, SkeletonSequence};
use crate::error::{Error, Result};
use crate::tensor::Rand;
use rand::Rng;

/// Split `[0, t)` into `n` substrings and draw one frame from each:
/// substring i covers `[floor(i*t/n), floor((i+1)*t/n))`; an empty substring
/// contributes `clamp(floor(i*t/n), 0, t-1)`. Indices come out sorted.
pub fn uniform_sample_indices(t: usize, n: usize, rng: &mut Rand) -> Vec<usize> {
    assert!(t > 0 && n > 0, "uniform_sample needs t > 0 and n > 0");
    (0..n)
        .map(|i| {
            let lo = i * t / n;
            let hi = (i + 1) * t / n;
            if hi > lo {
                rng.gen_range(lo..hi)
            } else {
                lo.min(t - 1)
            }
        })
        .collect()
}

/// Deterministic evaluation counterpart: the middle frame of each substring.
pub fn center_sample_indices(t: usize, n: usize) -> Vec<usize> {
    assert!(t > 0 && n > 0, "center_sample needs t > 0 and n > 0");
    (0..n)
        .map(|i| {
            let lo = i * t / n;
            let hi = (i + 1) * t / n;
            if hi > lo {
                (lo + hi - 1) / 2
            } else {
                lo.min(t - 1)
            }
        })
        .collect()
}

/// Baseline augmentation: crop a contiguous window of ratio U[0.5, 1.0] of
/// the clip, then resample it to `n` fractional positions with align-corners
/// spacing `j * (len-1) / (n-1)`; `n == 1` takes the window midpoint. Draw
/// order is ratio first, then start offset.
pub fn random_crop_positions(t: usize, n: usize, rng: &mut Rand) -> Vec<f64> {
    assert!(t > 0 && n > 0, "random_crop needs t > 0 and n > 0");
    let ratio: f64 = rng.gen_range(0.5..=1.0);
    let len = ((t as f64 * ratio).round() as usize).clamp(1, t);
    let start = rng.gen_range(0..=t - len) as f64;
    (0..n)
        .map(|j| {
            if n == 1 {
                start + (len - 1) as f64 / 2.0
            } else {
                start + j as f64 * (len - 1) as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Gather whole frames by index.
pub fn gather_frames(
    seq: &SkeletonSequence,
    spec: &DatasetSpec,
    indices: &[usize],
) -> SkeletonSequence {
    let frame = spec.num_joints * spec.channels;
    let mut coords = Vec::with_capacity(seq.persons * indices.len() * frame);
    for m in 0..seq.persons {
        for &t in indices {
            debug_assert!(t < seq.frames);
            let base = (m * seq.frames + t) * frame;
            coords.extend_from_slice(&seq.coords[base..base + frame]);
        }
    }
    SkeletonSequence {
        label: seq.label,
        persons: seq.persons,
        frames: indices.len(),
        coords,
    }
}

/// Linearly interpolate whole frames at fractional positions.
pub fn interp_frames(
    seq: &SkeletonSequence,
    spec: &DatasetSpec,
    positions: &[f64],
) -> SkeletonSequence {
    let frame = spec.num_joints * spec.channels;
    let mut coords = Vec::with_capacity(seq.persons * positions.len() * frame);
    for m in 0..seq.persons {
        for &p in positions {
            let t0 = p.floor() as usize;
            let t0 = t0.min(seq.frames - 1);
            let t1 = (t0 + 1).min(seq.frames - 1);
            let w = (p - t0 as f64) as f32;
            let b0 = (m * seq.frames + t0) * frame;
            let b1 = (m * seq.frames + t1) * frame;
            for k in 0..frame {
                coords.push(seq.coords[b0 + k] * (1.0 - w) + seq.coords[b1 + k] * w);
            }
        }
    }
    SkeletonSequence {
        label: seq.label,
        persons: seq.persons,
        frames: positions.len(),
        coords,
    }
}

/// Normalize clip length to `maxlen` by circular repetition (`t mod T`); a
/// clip longer than `maxlen` is truncated with a warning.
pub fn pad_circular(
    seq: &SkeletonSequence,
    spec: &DatasetSpec,
    maxlen: usize,
) -> Result<SkeletonSequence> {
    if maxlen == 0 {
        return Err(Error::config("pad_circular maxlen must be positive"));
    }
    if seq.frames > maxlen {
        log::warn!(
            "clip with {} frames truncated to maxlen {}",
            seq.frames,
            maxlen
        );
    }
    let indices: Vec<usize> = (0..maxlen).map(|t| t % seq.frames).collect();
    Ok(gather_frames(seq, spec, &indices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::chain_parents;
    use crate::tensor::rng_from_seed;
    use std::collections::HashSet;

    fn spec(v: usize) -> DatasetSpec {
        DatasetSpec {
            n_classes: 2,
            num_joints: v,
            channels: 2,
            max_persons: 1,
            class_names: None,
            parents: Some(chain_parents(v)),
        }
    }

    #[test]
    fn short_clip_upsampling_is_forced() {
        // t=3, n=6: substrings [0,0) [0,1) [1,1) [1,2) [2,2) [2,3)
        let mut rng = rng_from_seed(0);
        for _ in 0..20 {
            assert_eq!(uniform_sample_indices(3, 6, &mut rng), vec![0, 0, 1, 1, 2, 2]);
        }
        assert_eq!(center_sample_indices(3, 6), vec![0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn uniform_indices_stay_in_their_substring() {
        let mut rng = rng_from_seed(1);
        for &(t, n) in &[(100usize, 16usize), (17, 16), (16, 16), (5, 13)] {
            for _ in 0..50 {
                let idx = uniform_sample_indices(t, n, &mut rng);
                assert_eq!(idx.len(), n);
                for (i, &ti) in idx.iter().enumerate() {
                    let lo = i * t / n;
                    let hi = (i + 1) * t / n;
                    assert!(ti < t);
                    if hi > lo {
                        assert!(ti >= lo && ti < hi, "t={t} n={n} slot {i} got {ti}");
                    } else {
                        assert_eq!(ti, lo.min(t - 1));
                    }
                }
                // sorted because substrings are disjoint and increasing
                assert!(idx.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }

    #[test]
    fn center_sampling_is_deterministic_midpoint() {
        let idx = center_sample_indices(100, 10);
        assert_eq!(idx, vec![4, 14, 24, 34, 44, 54, 64, 74, 84, 94]);
    }

    #[test]
    fn crop_positions_bounds_and_order() {
        let mut rng = rng_from_seed(2);
        for _ in 0..200 {
            let pos = random_crop_positions(30, 8, &mut rng);
            assert_eq!(pos.len(), 8);
            assert!(pos.windows(2).all(|w| w[0] <= w[1]));
            assert!(pos[0] >= 0.0 && *pos.last().unwrap() <= 29.0);
        }
        let single = random_crop_positions(30, 1, &mut rng);
        assert!(single[0] >= 0.0 && single[0] <= 29.0);
    }

    #[test]
    fn uniform_covers_more_distinct_clips_than_crop() {
        // With t = 2n every substring has width 2, so uniform sampling can
        // produce 2^8 = 256 distinct index tuples; a crop is pinned down by
        // (length, start) giving at most 45. Empirically over 10k draws the
        // uniform scheme must show strictly more variety.
        let (t, n, draws) = (16usize, 8usize, 10_000usize);
        let mut rng = rng_from_seed(3);
        let mut uniform_seen: HashSet<Vec<usize>> = HashSet::new();
        for _ in 0..draws {
            uniform_seen.insert(uniform_sample_indices(t, n, &mut rng));
        }
        let mut crop_seen: HashSet<Vec<i64>> = HashSet::new();
        for _ in 0..draws {
            let pos = random_crop_positions(t, n, &mut rng);
            // discretize to thousandths so float noise cannot inflate the count
            crop_seen.insert(pos.iter().map(|p| (p * 1000.0).round() as i64).collect());
        }
        assert!(crop_seen.len() <= 45, "crop clips: {}", crop_seen.len());
        assert!(
            uniform_seen.len() > crop_seen.len() * 4,
            "uniform {} vs crop {}",
            uniform_seen.len(),
            crop_seen.len()
        );
    }

    #[test]
    fn gather_and_interp_agree_on_integer_positions() {
        let sp = spec(2);
        let seq = SkeletonSequence::new(
            0,
            1,
            3,
            vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 5.0, 5.0],
        );
        let g = gather_frames(&seq, &sp, &[0, 2, 2]);
        let i = interp_frames(&seq, &sp, &[0.0, 2.0, 2.0]);
        assert_eq!(g.coords, i.coords);
        assert_eq!(g.frames, 3);
    }

    #[test]
    fn interp_blends_midway() {
        let sp = spec(1);
        let seq = SkeletonSequence::new(0, 1, 2, vec![0.0, 0.0, 4.0, 8.0]);
        let i = interp_frames(&seq, &sp, &[0.5]);
        assert_eq!(i.coords, vec![2.0, 4.0]);
    }

    #[test]
    fn circular_pad_wraps_and_truncates() {
        let sp = spec(1);
        let seq = SkeletonSequence::new(0, 1, 2, vec![1.0, 1.0, 2.0, 2.0]);
        let padded = pad_circular(&seq, &sp, 5).unwrap();
        assert_eq!(padded.frames, 5);
        assert_eq!(padded.coords, vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 1.0, 1.0]);
        let cut = pad_circular(&padded, &sp, 2).unwrap();
        assert_eq!(cut.coords, seq.coords);
    }
}
