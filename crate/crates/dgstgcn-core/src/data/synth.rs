//! Synthetic skeleton dataset: a joint chain carrying a class-specific
//! traveling wave.
//!
//! Every class oscillates with a distinct temporal frequency while sharing
//! the same spatial waveform, and each sample draws a random global phase.
//! A single frame therefore looks the same for every class (a sinusoid over
//! the chain at some random phase) — only the motion across frames separates
//! them, which is exactly what a temporal model has to pick up.

use super::{Dataset, DatasetSpec, SkeletonSequence};
use crate::error::{Error, Result};
use crate::tensor::{derive_seed, rng_from_seed};
use rand::Rng;
use std::f64::consts::TAU;

/// Chain topology: joint 0 is the root, joint v hangs off v-1.
pub fn chain_parents(num_joints: usize) -> Vec<usize> {
    (0..num_joints).map(|v| v.saturating_sub(1)).collect()
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub n_samples: usize,
    pub num_joints: usize,
    pub channels: usize,
    /// Nominal clip length; actual lengths jitter around it.
    pub frames: usize,
    pub max_persons: usize,
    /// Std of the additive Gaussian coordinate noise.
    pub noise: f64,
    /// Clip lengths are drawn from frames * U[1-j, 1+j].
    pub length_jitter: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_classes: 4,
            n_samples: 256,
            num_joints: 9,
            channels: 2,
            frames: 24,
            max_persons: 1,
            noise: 0.02,
            length_jitter: 0.25,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.n_samples == 0 || self.num_joints < 2 || self.frames < 4 {
            return Err(Error::config(
                "synth spec needs classes >= 1, samples >= 1, joints >= 2, frames >= 4",
            ));
        }
        if !(self.channels == 2 || self.channels == 3) {
            return Err(Error::config("synth channels must be 2 or 3"));
        }
        if self.max_persons == 0 {
            return Err(Error::config("synth max_persons must be >= 1"));
        }
        if self.noise < 0.0 || !(0.0..1.0).contains(&self.length_jitter) {
            return Err(Error::config("synth noise must be >= 0 and jitter in [0,1)"));
        }
        // highest class frequency must stay below Nyquist of the shortest clip
        let min_frames = (self.frames as f64 * (1.0 - self.length_jitter)).floor();
        if (self.n_classes as f64) >= min_frames / 2.0 {
            return Err(Error::config(format!(
                "{} classes need clips longer than {} frames to stay distinguishable",
                self.n_classes, self.frames
            )));
        }
        Ok(())
    }
}

/// Generate a balanced labelled dataset; deterministic in `spec.seed` and
/// independent of generation order (each sample derives its own stream).
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let (v_n, c_n) = (spec.num_joints, spec.channels);
    let amp = 0.25;
    let mut samples = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let label = i % spec.n_classes;
        let mut rng = rng_from_seed(derive_seed(spec.seed, i as u64, 0x5e_ed));
        let frames = ((spec.frames as f64
            * rng.gen_range(1.0 - spec.length_jitter..=1.0 + spec.length_jitter))
            .round() as usize)
            .max(4);
        // class frequency in cycles per clip; phase scrambles single frames
        let freq = (label + 1) as f64;
        let phase: f64 = rng.gen_range(0.0..1.0);
        let (off_x, off_y): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let mut coords = Vec::with_capacity(frames * v_n * c_n);
        for t in 0..frames {
            for v in 0..v_n {
                let arg = TAU * (freq * t as f64 / frames as f64 + v as f64 / (v_n - 1) as f64 + phase);
                let x = off_x + amp * arg.sin() + spec.noise * standard_normal(&mut rng);
                let y = off_y + v as f64 / (v_n - 1) as f64
                    + amp * 0.5 * arg.cos()
                    + spec.noise * standard_normal(&mut rng);
                coords.push(x as f32);
                coords.push(y as f32);
                if c_n == 3 {
                    coords.push((spec.noise * standard_normal(&mut rng)) as f32);
                }
            }
        }
        samples.push(SkeletonSequence::new(label, 1, frames, coords));
    }
    let ds = Dataset {
        spec: DatasetSpec {
            n_classes: spec.n_classes,
            num_joints: v_n,
            channels: c_n,
            max_persons: spec.max_persons,
            class_names: Some((0..spec.n_classes).map(|c| format!("wave_{c}")).collect()),
            parents: Some(chain_parents(v_n)),
        },
        samples,
    };
    ds.validate()?;
    Ok(ds)
}

fn standard_normal(rng: &mut crate::tensor::Rand) -> f64 {
    rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_in_seed() {
        let spec = SynthSpec {
            n_samples: 12,
            ..SynthSpec::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            assert_eq!(sa, sb);
        }
        let c = generate(&SynthSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a.samples[0].coords, c.samples[0].coords);
    }

    #[test]
    fn labels_are_balanced_and_valid() {
        let spec = SynthSpec {
            n_samples: 26,
            n_classes: 4,
            ..SynthSpec::default()
        };
        let ds = generate(&spec).unwrap();
        ds.validate().unwrap();
        let counts = ds.class_counts();
        let (min, max) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(max - min <= 1, "unbalanced: {counts:?}");
    }

    #[test]
    fn clips_move_over_time() {
        let ds = generate(&SynthSpec {
            n_samples: 4,
            noise: 0.0,
            ..SynthSpec::default()
        })
        .unwrap();
        for s in &ds.samples {
            let frame = ds.spec.num_joints * ds.spec.channels;
            let first = &s.coords[..frame];
            let moved = (1..s.frames)
                .any(|t| s.coords[t * frame..(t + 1) * frame] != *first);
            assert!(moved, "a clip should not be a frozen pose");
        }
    }

    #[test]
    fn lengths_jitter_but_respect_floor() {
        let ds = generate(&SynthSpec {
            n_samples: 40,
            ..SynthSpec::default()
        })
        .unwrap();
        let lens: Vec<usize> = ds.samples.iter().map(|s| s.frames).collect();
        assert!(lens.iter().any(|&l| l != lens[0]), "lengths all equal");
        assert!(lens.iter().all(|&l| l >= 4));
    }

    #[test]
    fn too_many_classes_for_clip_length_is_rejected() {
        let spec = SynthSpec {
            n_classes: 20,
            frames: 16,
            ..SynthSpec::default()
        };
        assert!(spec.validate().is_err());
    }
}
