//! Temporal modelling: the multi-branch grouped TCN, joint-skeleton fusion,
//! and the vanilla wide-kernel baseline.
//!
//! The multi-group module splits its channels six ways after a 1x1 input
//! conv: four kernel-3 convolutions with dilations 1..4, one kernel-3 max
//! pool, and one pointwise pass-through (which also absorbs the remainder
//! when 6 does not divide C). Branches are concatenated and mapped through a
//! 1x1 output conv. Every branch treats joints independently, which is what
//! makes joint-skeleton fusion exact: appending the joint-mean as a
//! pseudo-joint and processing it alongside the real joints is identical to
//! processing the skeleton-level sequence in a second pass.
//!
//! Fusion modes after the branch concat (all keep the 1x1 output conv):
//! none; learned per-joint gates `out_i = X'_i + gamma_i * S'` (gamma starts
//! at zero, so the fused path initializes bit-identical to the plain one);
//! fixed sum (gamma == 1); channel concatenation (output conv sees 2C).

use crate::autodiff::{ParamId, ParamStore, Tape, ValueId};
use crate::error::{Error, Result};
use crate::tensor::{Rand, Scalar, Tensor};

/// Dilations of the four convolutional branches.
pub const BRANCH_DILATIONS: [usize; 4] = [1, 2, 3, 4];
/// Temporal kernel of the convolutional and pooling branches.
pub const BRANCH_KERNEL: usize = 3;
/// Kernel of the vanilla baseline.
pub const VANILLA_KERNEL: usize = 9;

/// Temporal module flavor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalKind {
    MultiGroup,
    /// Single full-width kernel-9 convolution.
    VanillaK9,
}

/// How the skeleton-level feature is folded back into the joints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JsfMode {
    Off,
    /// Learned per-joint gates, zero-initialized.
    Djsf,
    /// Channel concatenation; the output conv widens to 2C -> C.
    Concat,
    /// Ungated addition (gamma fixed at one).
    Sum,
}

#[derive(Clone, Debug)]
pub struct TcnConfig {
    pub channels: usize,
    pub stride: usize,
    pub num_joints: usize,
    pub temporal: TemporalKind,
    pub jsf: JsfMode,
}

impl TcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::config("tcn channels must be positive"));
        }
        if !(self.stride == 1 || self.stride == 2) {
            return Err(Error::config(format!("tcn stride must be 1 or 2, got {}", self.stride)));
        }
        match self.temporal {
            TemporalKind::MultiGroup => {
                if self.channels < 6 {
                    return Err(Error::config(format!(
                        "multi-group tcn needs >= 6 channels, got {}",
                        self.channels
                    )));
                }
            }
            TemporalKind::VanillaK9 => {
                if self.jsf != JsfMode::Off {
                    return Err(Error::config(
                        "joint-skeleton fusion requires the multi-group temporal module",
                    ));
                }
            }
        }
        if self.jsf != JsfMode::Off && self.num_joints == 0 {
            return Err(Error::config("jsf needs num_joints to size its gates"));
        }
        Ok(())
    }
}

/// Widths of the six branches: four convs and the pool at floor(C/6), the
/// pass-through absorbing the remainder.
pub fn branch_widths(channels: usize) -> [usize; 6] {
    let cb = channels / 6;
    [cb, cb, cb, cb, cb, channels - 5 * cb]
}

#[derive(Clone, Debug)]
pub struct TcnLayer {
    pub cfg: TcnConfig,
    w_in: Option<ParamId>,
    branch_ws: Vec<ParamId>,
    w_out: Option<ParamId>,
    gamma: Option<ParamId>,
    w9: Option<ParamId>,
}

impl TcnLayer {
    pub fn new<E: Scalar>(
        prefix: &str,
        cfg: TcnConfig,
        store: &mut ParamStore<E>,
        rng: &mut Rand,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let mut layer = TcnLayer {
            cfg: cfg.clone(),
            w_in: None,
            branch_ws: Vec::new(),
            w_out: None,
            gamma: None,
            w9: None,
        };
        match cfg.temporal {
            TemporalKind::VanillaK9 => {
                let bound = 1.0 / ((c * VANILLA_KERNEL) as f64).sqrt();
                layer.w9 = Some(store.add(
                    format!("{prefix}.w9"),
                    Tensor::rand_uniform(&[c, c, VANILLA_KERNEL], bound, rng),
                ));
            }
            TemporalKind::MultiGroup => {
                let bound = 1.0 / (c as f64).sqrt();
                layer.w_in = Some(store.add(
                    format!("{prefix}.w_in"),
                    Tensor::rand_uniform(&[c, c], bound, rng),
                ));
                let cb = branch_widths(c)[0];
                for (i, _d) in BRANCH_DILATIONS.iter().enumerate() {
                    let bb = 1.0 / ((cb * BRANCH_KERNEL) as f64).sqrt();
                    layer.branch_ws.push(store.add(
                        format!("{prefix}.branch{i}.w"),
                        Tensor::rand_uniform(&[cb, cb, BRANCH_KERNEL], bb, rng),
                    ));
                }
                let out_in = match cfg.jsf {
                    JsfMode::Concat => 2 * c,
                    _ => c,
                };
                let ob = 1.0 / (out_in as f64).sqrt();
                layer.w_out = Some(store.add(
                    format!("{prefix}.w_out"),
                    Tensor::rand_uniform(&[c, out_in], ob, rng),
                ));
                if cfg.jsf == JsfMode::Djsf {
                    layer.gamma = Some(store.add(
                        format!("{prefix}.gamma"),
                        Tensor::zeros(&[cfg.num_joints]),
                    ));
                }
            }
        }
        Ok(layer)
    }

    /// The six-branch trunk on whatever joint axis the input carries
    /// (V or V+1): input conv, branch split, concat. No fusion, no output
    /// conv.
    fn trunk<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        x: ValueId,
    ) -> Result<ValueId> {
        let c = self.cfg.channels;
        let s = self.cfg.stride;
        let w_in = tape.param(store, self.w_in.unwrap());
        let h = tape.pointwise_conv(x, w_in, None)?;
        let cb = branch_widths(c)[0];
        let mut outs = Vec::with_capacity(6);
        for (i, &d) in BRANCH_DILATIONS.iter().enumerate() {
            let hi = tape.slice_c(h, i * cb, (i + 1) * cb)?;
            let w = tape.param(store, self.branch_ws[i]);
            outs.push(tape.temporal_conv(hi, w, BRANCH_KERNEL, d, s)?);
        }
        let hp = tape.slice_c(h, 4 * cb, 5 * cb)?;
        outs.push(tape.temporal_max_pool(hp, BRANCH_KERNEL, s)?);
        let hq = tape.slice_c(h, 5 * cb, c)?;
        outs.push(if s == 1 {
            hq
        } else {
            tape.temporal_subsample(hq, s)?
        });
        tape.concat_c(&outs)
    }

    /// Full temporal pass. Batch norm and activations belong to the caller.
    pub fn forward<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        x: ValueId,
    ) -> Result<ValueId> {
        match self.cfg.temporal {
            TemporalKind::VanillaK9 => {
                let w9 = tape.param(store, self.w9.unwrap());
                tape.temporal_conv(x, w9, VANILLA_KERNEL, 1, self.cfg.stride)
            }
            TemporalKind::MultiGroup => {
                let v_in = tape.value(x).dim(3);
                let with_skel = match self.cfg.jsf {
                    JsfMode::Off => x,
                    _ => {
                        if v_in != self.cfg.num_joints {
                            return Err(Error::shape(
                                "tcn jsf joint axis",
                                tape.value(x).shape(),
                                &[self.cfg.num_joints],
                            ));
                        }
                        tape.append_joint_mean(x)?
                    }
                };
                let cat = self.trunk(tape, store, with_skel)?;
                let fused = match self.cfg.jsf {
                    JsfMode::Off => cat,
                    JsfMode::Djsf => {
                        let gamma = tape.param(store, self.gamma.unwrap());
                        tape.djsf_fuse(cat, gamma)?
                    }
                    JsfMode::Sum => {
                        let ones = tape.leaf(Tensor::full(&[self.cfg.num_joints], E::one()));
                        tape.djsf_fuse(cat, ones)?
                    }
                    JsfMode::Concat => tape.concat_skeleton(cat)?,
                };
                let w_out = tape.param(store, self.w_out.unwrap());
                tape.pointwise_conv(fused, w_out, None)
            }
        }
    }
}

/// Independent evaluation route for joint-skeleton fusion: run the trunk on
/// the joints alone, run it again on the skeleton-mean sequence as a
/// one-joint clip, then apply `out_i = X'_i + gamma_i * S'` and the output
/// conv by hand. The layer's single-pass forward must agree.
pub fn djsf_two_pass_oracle<E: Scalar>(
    layer: &TcnLayer,
    store: &ParamStore<E>,
    x: &Tensor<E>,
) -> Result<Tensor<E>> {
    if layer.cfg.temporal != TemporalKind::MultiGroup || layer.cfg.jsf != JsfMode::Djsf {
        return Err(Error::config("oracle applies to multi-group djsf layers"));
    }
    let (n, c, t, v) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));

    // pass 1: joints only
    let mut tape = Tape::new();
    let xi = tape.leaf(x.clone());
    let joints = layer.trunk(&mut tape, store, xi)?;
    let joints = tape.value(joints).clone();

    // pass 2: the skeleton-level sequence as its own one-joint clip
    let mut skel = Tensor::<E>::zeros(&[n, c, t, 1]);
    {
        let xd = x.data();
        let sd = skel.data_mut();
        let inv = E::from_f64(1.0 / v as f64);
        for nct in 0..n * c * t {
            let mut s = E::zero();
            for &xv in &xd[nct * v..][..v] {
                s += xv;
            }
            sd[nct] = s * inv;
        }
    }
    let mut tape2 = Tape::new();
    let si = tape2.leaf(skel);
    let skel_out = layer.trunk(&mut tape2, store, si)?;
    let skel_out = tape2.value(skel_out).clone();

    // fuse and apply the output conv
    let t_out = joints.dim(2);
    let gamma = store.value(layer.gamma.unwrap());
    let mut fused = Tensor::<E>::zeros(&[n, c, t_out, v]);
    {
        let jd = joints.data();
        let sd = skel_out.data();
        let gd = gamma.data();
        let fd = fused.data_mut();
        for nct in 0..n * c * t_out {
            let s = sd[nct];
            for i in 0..v {
                fd[nct * v + i] = jd[nct * v + i] + gd[i] * s;
            }
        }
    }
    let mut tape3 = Tape::new();
    let fi = tape3.leaf(fused);
    let w_out = tape3.param(store, layer.w_out.unwrap());
    let y = tape3.pointwise_conv(fi, w_out, None)?;
    Ok(tape3.value(y).clone())
}
