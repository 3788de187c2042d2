//! Skeleton sequence containers, modality derivation, and preprocessing.
//!
//! Raw storage is `f32` in `[M, T, V, C]` order (person, frame, joint,
//! coordinate); the training pipeline transposes into the network's
//! `[N, C, T, V]` layout at batch assembly.

pub mod aug;
pub mod format;
pub mod synth;

use crate::error::{Error, Result};

/// Dataset-level metadata shared by every sample.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub n_classes: usize,
    /// V: joints per skeleton.
    pub num_joints: usize,
    /// C: coordinates per joint (2 or 3).
    pub channels: usize,
    /// M: maximum simultaneous persons; storage pads to this.
    pub max_persons: usize,
    pub class_names: Option<Vec<String>>,
    /// parents[v] is the bone parent of joint v; a root satisfies
    /// parents[v] == v. Needed for the bone modalities and the fixed graph
    /// topologies; optional because the binary format does not carry it.
    pub parents: Option<Vec<usize>>,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.num_joints == 0 || self.max_persons == 0 {
            return Err(Error::config("dataset spec has a zero dimension"));
        }
        if !(self.channels == 2 || self.channels == 3) {
            return Err(Error::config(format!(
                "channels must be 2 or 3, got {}",
                self.channels
            )));
        }
        if let Some(names) = &self.class_names {
            if names.len() != self.n_classes {
                return Err(Error::config(format!(
                    "{} class names for {} classes",
                    names.len(),
                    self.n_classes
                )));
            }
        }
        if let Some(parents) = &self.parents {
            validate_parents(parents, self.num_joints)?;
        }
        Ok(())
    }

    /// The root joint: first v with parents[v] == v, or joint 0 when the
    /// skeleton topology is unknown.
    pub fn root_joint(&self) -> usize {
        match &self.parents {
            Some(p) => p
                .iter()
                .enumerate()
                .position(|(v, &pv)| v == pv)
                .unwrap_or(0),
            None => 0,
        }
    }

    /// parents vector or an error naming the requesting feature.
    pub fn require_parents(&self, who: &str) -> Result<&[usize]> {
        self.parents
            .as_deref()
            .ok_or_else(|| Error::config(format!("{who} requires a bone/parent list in the dataset spec")))
    }
}

/// Check a parent vector: in range, at least one root, and acyclic (every
/// joint's parent chain terminates at a root).
pub fn validate_parents(parents: &[usize], num_joints: usize) -> Result<()> {
    if parents.len() != num_joints {
        return Err(Error::config(format!(
            "parent list has {} entries for {} joints",
            parents.len(),
            num_joints
        )));
    }
    if !parents.iter().enumerate().any(|(v, &p)| v == p) {
        return Err(Error::config("parent list has no root (no joint with parents[v] == v)"));
    }
    for (v, &p) in parents.iter().enumerate() {
        if p >= num_joints {
            return Err(Error::config(format!(
                "joint {v} has out-of-range parent {p}"
            )));
        }
        // walk to a root; > V steps means a cycle
        let mut cur = v;
        for _ in 0..=num_joints {
            if parents[cur] == cur {
                break;
            }
            cur = parents[cur];
        }
        if parents[cur] != cur {
            return Err(Error::config(format!("joint {v} sits on a parent cycle")));
        }
    }
    Ok(())
}

/// One labelled skeleton clip; coords are `[persons, frames, V, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub label: usize,
    pub persons: usize,
    pub frames: usize,
    pub coords: Vec<f32>,
}

impl SkeletonSequence {
    pub fn new(label: usize, persons: usize, frames: usize, coords: Vec<f32>) -> Self {
        SkeletonSequence {
            label,
            persons,
            frames,
            coords,
        }
    }

    #[inline]
    pub fn at(&self, v_dim: usize, c_dim: usize, m: usize, t: usize, v: usize, c: usize) -> f32 {
        debug_assert_eq!(self.coords.len(), self.persons * self.frames * v_dim * c_dim);
        self.coords[((m * self.frames + t) * v_dim + v) * c_dim + c]
    }

    /// True when the person's whole slice is exactly zero (padding person).
    pub fn person_is_zero(&self, v_dim: usize, c_dim: usize, m: usize) -> bool {
        let stride = self.frames * v_dim * c_dim;
        self.coords[m * stride..(m + 1) * stride]
            .iter()
            .all(|&x| x == 0.0)
    }

    pub fn validate(&self, spec: &DatasetSpec) -> Result<()> {
        if self.label >= spec.n_classes {
            return Err(Error::data(format!(
                "label {} out of range for {} classes",
                self.label, spec.n_classes
            )));
        }
        if self.persons == 0 || self.persons > spec.max_persons {
            return Err(Error::data(format!(
                "sample has {} persons, dataset allows 1..={}",
                self.persons, spec.max_persons
            )));
        }
        if self.frames == 0 {
            return Err(Error::data("sample has zero frames"));
        }
        let expect = self.persons * self.frames * spec.num_joints * spec.channels;
        if self.coords.len() != expect {
            return Err(Error::data(format!(
                "coordinate buffer has {} floats, expected {}",
                self.coords.len(),
                expect
            )));
        }
        Ok(())
    }
}

/// A labelled collection plus its spec.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub samples: Vec<SkeletonSequence>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        for (i, s) in self.samples.iter().enumerate() {
            s.validate(&self.spec)
                .map_err(|e| Error::data(format!("sample {i}: {e}")))?;
        }
        Ok(())
    }

    /// Per-class sample counts (length n_classes).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.spec.n_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}

/// The four input representations derived from raw joints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Joint,
    Bone,
    JointMotion,
    BoneMotion,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::Joint,
        Modality::Bone,
        Modality::JointMotion,
        Modality::BoneMotion,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Modality::Joint => "joint",
            Modality::Bone => "bone",
            Modality::JointMotion => "joint_motion",
            Modality::BoneMotion => "bone_motion",
        }
    }

    pub fn parse(s: &str) -> Result<Modality> {
        match s {
            "joint" => Ok(Modality::Joint),
            "bone" => Ok(Modality::Bone),
            "joint_motion" => Ok(Modality::JointMotion),
            "bone_motion" => Ok(Modality::BoneMotion),
            other => Err(Error::config(format!(
                "unknown modality '{other}' (expected joint|bone|joint_motion|bone_motion)"
            ))),
        }
    }
}

/// Rewrite a sequence into the requested modality.
///
/// bone: x[v] - x[parents[v]] (zero at roots). motion: x[t+1] - x[t] with the
/// final frame zero. bone_motion applies motion to the bone representation.
pub fn derive_modality(
    seq: &SkeletonSequence,
    spec: &DatasetSpec,
    modality: Modality,
) -> Result<SkeletonSequence> {
    let (v_dim, c_dim) = (spec.num_joints, spec.channels);
    let bone = |coords: &[f32]| -> Result<Vec<f32>> {
        let parents = spec.require_parents("bone modality")?;
        let mut out = vec![0.0f32; coords.len()];
        let (m_n, t_n) = (seq.persons, seq.frames);
        for m in 0..m_n {
            for t in 0..t_n {
                for v in 0..v_dim {
                    let p = parents[v];
                    for c in 0..c_dim {
                        let base = ((m * t_n + t) * v_dim + v) * c_dim + c;
                        let pbase = ((m * t_n + t) * v_dim + p) * c_dim + c;
                        out[base] = coords[base] - coords[pbase];
                    }
                }
            }
        }
        Ok(out)
    };
    let motion = |coords: &[f32]| -> Vec<f32> {
        let mut out = vec![0.0f32; coords.len()];
        let (m_n, t_n) = (seq.persons, seq.frames);
        let frame = v_dim * c_dim;
        for m in 0..m_n {
            for t in 0..t_n.saturating_sub(1) {
                let cur = (m * t_n + t) * frame;
                let nxt = (m * t_n + t + 1) * frame;
                for k in 0..frame {
                    out[cur + k] = coords[nxt + k] - coords[cur + k];
                }
            }
        }
        out
    };

    let coords = match modality {
        Modality::Joint => seq.coords.clone(),
        Modality::Bone => bone(&seq.coords)?,
        Modality::JointMotion => motion(&seq.coords),
        Modality::BoneMotion => motion(&bone(&seq.coords)?),
    };
    Ok(SkeletonSequence {
        label: seq.label,
        persons: seq.persons,
        frames: seq.frames,
        coords,
    })
}

/// Center the clip on the root joint of person 0 at frame 0. Person slices
/// that are entirely zero (padding) are left untouched so they stay zero.
pub fn center_on_root(seq: &mut SkeletonSequence, spec: &DatasetSpec) {
    let (v_dim, c_dim) = (spec.num_joints, spec.channels);
    let root = spec.root_joint();
    let mut anchor = vec![0.0f32; c_dim];
    for (c, a) in anchor.iter_mut().enumerate() {
        *a = seq.at(v_dim, c_dim, 0, 0, root, c);
    }
    let stride = seq.frames * v_dim * c_dim;
    for m in 0..seq.persons {
        if seq.person_is_zero(v_dim, c_dim, m) {
            continue;
        }
        let slice = &mut seq.coords[m * stride..(m + 1) * stride];
        for (k, x) in slice.iter_mut().enumerate() {
            *x -= anchor[k % c_dim];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_spec(v: usize) -> DatasetSpec {
        DatasetSpec {
            n_classes: 2,
            num_joints: v,
            channels: 2,
            max_persons: 2,
            class_names: None,
            parents: Some(synth::chain_parents(v)),
        }
    }

    #[test]
    fn parent_validation_catches_breakage() {
        assert!(validate_parents(&[0, 0, 1], 3).is_ok());
        assert!(validate_parents(&[1, 0], 3).is_err(), "wrong length");
        assert!(validate_parents(&[1, 0, 1], 3).is_err(), "2-cycle, no root");
        assert!(validate_parents(&[0, 5, 1], 3).is_err(), "out of range");
    }

    #[test]
    fn bone_modality_differences_along_chain() {
        let spec = chain_spec(3);
        // one person, one frame, joints at (0,0), (1,0), (3,0)
        let seq = SkeletonSequence::new(0, 1, 1, vec![0.0, 0.0, 1.0, 0.0, 3.0, 0.0]);
        let bone = derive_modality(&seq, &spec, Modality::Bone).unwrap();
        assert_eq!(bone.coords, vec![0.0, 0.0, 1.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn motion_modality_shifts_and_zero_tail() {
        let spec = chain_spec(1);
        let seq = SkeletonSequence::new(0, 1, 3, vec![1.0, 0.0, 2.0, 0.0, 4.0, 0.0]);
        let mot = derive_modality(&seq, &spec, Modality::JointMotion).unwrap();
        assert_eq!(mot.coords, vec![1.0, 0.0, 2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn bone_needs_parents() {
        let mut spec = chain_spec(2);
        spec.parents = None;
        let seq = SkeletonSequence::new(0, 1, 1, vec![0.0; 4]);
        assert!(matches!(
            derive_modality(&seq, &spec, Modality::Bone),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn centering_moves_root_to_origin_but_keeps_padding_zero() {
        let spec = chain_spec(2);
        // person 0 present, person 1 all-zero padding
        let mut seq = SkeletonSequence::new(
            0,
            2,
            1,
            vec![5.0, 1.0, 6.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        );
        center_on_root(&mut seq, &spec);
        assert_eq!(&seq.coords[..4], &[0.0, 0.0, 1.0, 0.0]);
        assert!(seq.coords[4..].iter().all(|&x| x == 0.0), "padding person disturbed");
    }

    #[test]
    fn dataset_validation_flags_bad_label() {
        let spec = chain_spec(2);
        let ds = Dataset {
            spec,
            samples: vec![SkeletonSequence::new(7, 1, 1, vec![0.0; 4])],
        };
        assert!(matches!(ds.validate(), Err(Error::Data(_))));
    }
}
