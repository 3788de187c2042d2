//! Spatial modelling: the dynamic-group GCN and the fixed/refined topology
//! baselines it is ablated against.
//!
//! The dynamic-group layer learns K affinity matrices per layer, each the sum
//! of three components (per group k):
//!
//! ```text
//! A_k = PA_k + alpha_k * DA_k + beta_k * CA_k
//! ```
//!
//! PA is a learned static matrix initialized from N(0, 1/V) with no topology
//! prior. DA and CA are computed from the input: two 1x1-conv encoders embed
//! the temporally pooled sequence into K groups of C_mid channels, then
//! DA[i,j] = softmax_i(sum_c a[c,i] b[c,j]) (columns over sources sum to 1)
//! and CA[c,i,j] = tanh(a[c,i] - b[c,j]). Group outputs are concatenated
//! (each group keeps its own channel slice), not summed.
//!
//! Matrix indexing everywhere: `A[k, v, i]` = weight from source joint v into
//! destination joint i, so `y[.., i] = sum_v A[k, v, i] * x[.., v]`.

use crate::autodiff::{ParamId, ParamStore, Tape, ValueId};
use crate::error::{Error, Result};
use crate::tensor::{Rand, Scalar, Tensor};

/// Which of the three affinity components participate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ComponentMask {
    pub pa: bool,
    pub da: bool,
    pub ca: bool,
}

impl ComponentMask {
    pub const FULL: ComponentMask = ComponentMask {
        pa: true,
        da: true,
        ca: true,
    };
    pub const PA_ONLY: ComponentMask = ComponentMask {
        pa: true,
        da: false,
        ca: false,
    };

    pub fn any(&self) -> bool {
        self.pa || self.da || self.ca
    }

    /// True when the data-dependent encoders are needed at all.
    pub fn needs_encoders(&self) -> bool {
        self.da || self.ca
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.pa {
            parts.push("pa");
        }
        if self.da {
            parts.push("da");
        }
        if self.ca {
            parts.push("ca");
        }
        parts.join("+")
    }
}

/// Spatial module flavor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SpatialVariant {
    /// The paper's module: K groups, learned-from-scratch affinities.
    DynamicGroup { mask: ComponentMask },
    /// Three static normalized partitions (identity/inward/outward) from the
    /// skeleton topology, summed per the classic formulation.
    FixedTopology,
    /// Fixed partitions plus a learnable zero-initialized refinement.
    RefinedTopology,
}

/// Static partitions `[3, V, V]` from a parent list: identity, inward
/// (child -> parent), outward (parent -> child), the directed partitions
/// row-normalized over destinations (each source distributes unit mass;
/// rows without edges stay zero). Self loops live only in the identity
/// partition.
pub fn fixed_partitions<E: Scalar>(parents: &[usize]) -> Tensor<E> {
    let v_n = parents.len();
    let mut a = Tensor::zeros(&[3, v_n, v_n]);
    let d = a.data_mut();
    for v in 0..v_n {
        d[v * v_n + v] = E::one(); // identity partition
    }
    let plane = v_n * v_n;
    for (v, &p) in parents.iter().enumerate() {
        if p != v {
            d[plane + v * v_n + p] = E::one(); // inward: child v -> parent p
            d[2 * plane + p * v_n + v] = E::one(); // outward: parent p -> child v
        }
    }
    for k in 1..3 {
        for v in 0..v_n {
            let row = &mut d[k * plane + v * v_n..][..v_n];
            let sum: E = row.iter().fold(E::zero(), |s, &x| s + x);
            if sum > E::zero() {
                for x in row.iter_mut() {
                    *x = *x / sum;
                }
            }
        }
    }
    a
}

/// Configuration for one spatial layer.
#[derive(Clone, Debug)]
pub struct GcnConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub num_joints: usize,
    /// K; per-group width is c_out / groups.
    pub groups: usize,
    pub variant: SpatialVariant,
}

impl GcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || self.num_joints == 0 {
            return Err(Error::config("gcn layer has a zero dimension"));
        }
        match self.variant {
            SpatialVariant::DynamicGroup { mask } => {
                if !mask.any() {
                    return Err(Error::config(
                        "dynamic-group gcn needs at least one of pa/da/ca enabled",
                    ));
                }
                if self.groups == 0 || self.c_out % self.groups != 0 {
                    return Err(Error::config(format!(
                        "groups ({}) must divide c_out ({})",
                        self.groups, self.c_out
                    )));
                }
                if self.c_out < self.groups {
                    return Err(Error::config("c_out must be >= groups"));
                }
            }
            SpatialVariant::FixedTopology | SpatialVariant::RefinedTopology => {}
        }
        Ok(())
    }

    /// Per-group channel width (also the encoder embedding width).
    pub fn group_width(&self) -> usize {
        self.c_out / self.groups
    }
}

/// One spatial layer's parameters. Convolution weights initialize uniform in
/// +-1/sqrt(fan_in); PA draws from N(0, 1/V); every gate (alpha, beta,
/// topology refinement) starts at zero so training begins from the static
/// topology alone.
#[derive(Clone, Debug)]
pub struct GcnLayer {
    pub cfg: GcnConfig,
    w_pre: ParamId,
    w_post: ParamId,
    pa: Option<ParamId>,
    alpha: Option<ParamId>,
    beta: Option<ParamId>,
    enc_a: Option<ParamId>,
    enc_b: Option<ParamId>,
    delta: Option<ParamId>,
    /// Static partitions for the fixed/refined variants.
    fixed: Option<Tensor<f64>>,
}

impl GcnLayer {
    pub fn new<E: Scalar>(
        prefix: &str,
        cfg: GcnConfig,
        parents: Option<&[usize]>,
        store: &mut ParamStore<E>,
        rng: &mut Rand,
    ) -> Result<Self> {
        cfg.validate()?;
        let v_n = cfg.num_joints;
        let (pre_in_mult, fixed) = match cfg.variant {
            SpatialVariant::DynamicGroup { .. } => (1, None),
            SpatialVariant::FixedTopology | SpatialVariant::RefinedTopology => {
                let parents = parents.ok_or_else(|| {
                    Error::config("fixed/refined topology requires a parent list")
                })?;
                if parents.len() != v_n {
                    return Err(Error::shape("gcn parents", &[parents.len()], &[v_n]));
                }
                (3, Some(fixed_partitions::<f64>(parents)))
            }
        };
        let bound = 1.0 / (cfg.c_in as f64).sqrt();
        let w_pre = store.add(
            format!("{prefix}.w_pre"),
            Tensor::rand_uniform(&[pre_in_mult * cfg.c_out, cfg.c_in], bound, rng),
        );
        let post_bound = 1.0 / (cfg.c_out as f64).sqrt();
        let w_post = store.add(
            format!("{prefix}.w_post"),
            Tensor::rand_uniform(&[cfg.c_out, cfg.c_out], post_bound, rng),
        );

        let mut layer = GcnLayer {
            cfg: cfg.clone(),
            w_pre,
            w_post,
            pa: None,
            alpha: None,
            beta: None,
            enc_a: None,
            enc_b: None,
            delta: None,
            fixed,
        };
        match cfg.variant {
            SpatialVariant::DynamicGroup { mask } => {
                if mask.pa {
                    let std = 1.0 / (v_n as f64).sqrt();
                    layer.pa = Some(store.add(
                        format!("{prefix}.pa"),
                        Tensor::randn(&[cfg.groups, v_n, v_n], std, rng),
                    ));
                }
                if mask.needs_encoders() {
                    layer.enc_a = Some(store.add(
                        format!("{prefix}.enc_a"),
                        Tensor::rand_uniform(&[cfg.c_out, cfg.c_in], bound, rng),
                    ));
                    layer.enc_b = Some(store.add(
                        format!("{prefix}.enc_b"),
                        Tensor::rand_uniform(&[cfg.c_out, cfg.c_in], bound, rng),
                    ));
                }
                if mask.da {
                    layer.alpha =
                        Some(store.add(format!("{prefix}.alpha"), Tensor::zeros(&[cfg.groups])));
                }
                if mask.ca {
                    layer.beta =
                        Some(store.add(format!("{prefix}.beta"), Tensor::zeros(&[cfg.groups])));
                }
            }
            SpatialVariant::RefinedTopology => {
                layer.delta = Some(store.add(
                    format!("{prefix}.delta"),
                    Tensor::zeros(&[3, v_n, v_n]),
                ));
            }
            SpatialVariant::FixedTopology => {}
        }
        Ok(layer)
    }

    /// Compute the data-dependent affinities from the raw layer input:
    /// returns (DA `[N,K,V,V]` if enabled, CA `[N,K,Cg,V,V]` if enabled).
    /// Exposed separately so invariants (column sums, value range,
    /// equivariance) can be probed directly.
    pub fn dynamic_affinities<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        x: ValueId,
    ) -> Result<(Option<ValueId>, Option<ValueId>)> {
        let SpatialVariant::DynamicGroup { mask } = self.cfg.variant else {
            return Ok((None, None));
        };
        if !mask.needs_encoders() {
            return Ok((None, None));
        }
        let (k, cg, v_n) = (self.cfg.groups, self.cfg.group_width(), self.cfg.num_joints);
        let n = tape.value(x).dim(0);
        let pooled = tape.mean_over_t(x)?;
        let ea = tape.param(store, self.enc_a.unwrap());
        let eb = tape.param(store, self.enc_b.unwrap());
        let a_emb = tape.pointwise_conv(pooled, ea, None)?;
        let b_emb = tape.pointwise_conv(pooled, eb, None)?;
        let a_r = tape.reshape(a_emb, &[n, k, cg, v_n])?;
        let b_r = tape.reshape(b_emb, &[n, k, cg, v_n])?;
        let da = if mask.da {
            let gram = tape.pair_gram(a_r, b_r)?;
            // normalize over the source axis: each destination's incoming
            // weights sum to one
            Some(tape.softmax(gram, 2)?)
        } else {
            None
        };
        let ca = if mask.ca {
            let diff = tape.pair_diff(a_r, b_r)?;
            Some(tape.tanh(diff))
        } else {
            None
        };
        Ok((da, ca))
    }

    /// Full spatial pass: pre 1x1 conv, affinity mixing, post 1x1 conv.
    /// Batch norm and activation belong to the enclosing block.
    pub fn forward<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        x: ValueId,
    ) -> Result<ValueId> {
        let w_pre = tape.param(store, self.w_pre);
        let xp = tape.pointwise_conv(x, w_pre, None)?;
        let mixed = match self.cfg.variant {
            SpatialVariant::DynamicGroup { mask } => {
                let (da, ca) = self.dynamic_affinities(tape, store, x)?;
                let mut acc: Option<ValueId> = None;
                if mask.pa {
                    let pa = tape.param(store, self.pa.unwrap());
                    let part = tape.group_mix_static(xp, pa, self.cfg.groups)?;
                    acc = Some(part);
                }
                if let Some(da) = da {
                    let part = tape.group_mix_dynamic(xp, da, self.cfg.groups)?;
                    let alpha = tape.param(store, self.alpha.unwrap());
                    let scaled = tape.scale_per_group(part, alpha, self.cfg.groups)?;
                    acc = Some(match acc {
                        Some(a) => tape.add(a, scaled)?,
                        None => scaled,
                    });
                }
                if let Some(ca) = ca {
                    let part = tape.group_mix_chanwise(xp, ca, self.cfg.groups)?;
                    let beta = tape.param(store, self.beta.unwrap());
                    let scaled = tape.scale_per_group(part, beta, self.cfg.groups)?;
                    acc = Some(match acc {
                        Some(a) => tape.add(a, scaled)?,
                        None => scaled,
                    });
                }
                acc.expect("validated mask has a component")
            }
            SpatialVariant::FixedTopology | SpatialVariant::RefinedTopology => {
                let a_const = tape.leaf(self.fixed.as_ref().unwrap().cast::<E>());
                let a = match self.delta {
                    Some(delta) => {
                        let d = tape.param(store, delta);
                        tape.add(a_const, d)?
                    }
                    None => a_const,
                };
                tape.eq1_mix(xp, a, 3)?
            }
        };
        let w_post = tape.param(store, self.w_post);
        tape.pointwise_conv(mixed, w_post, None)
    }
}

/// Literal quadruple-loop rendering of the spatial contraction
/// `y[n,c,t,i] = sum_k sum_v a[k,v,i] x[n,(k,c),t,v]`, kept deliberately
/// naive as the oracle the tape implementation is checked against.
pub fn eq1_oracle<E: Scalar>(x: &Tensor<E>, a: &Tensor<E>, groups: usize) -> Result<Tensor<E>> {
    let xs = x.shape();
    let (n, kc, t, v) = (xs[0], xs[1], xs[2], xs[3]);
    if kc % groups != 0 || a.shape() != [groups, v, v] {
        return Err(Error::shape("eq1_oracle", xs, a.shape()));
    }
    let c = kc / groups;
    let mut y = Tensor::zeros(&[n, c, t, v]);
    for ni in 0..n {
        for k in 0..groups {
            for ci in 0..c {
                for ti in 0..t {
                    for i in 0..v {
                        let mut s = E::zero();
                        for vi in 0..v {
                            s = s + a.data()[(k * v + vi) * v + i]
                                * x.data()[(((ni * groups + k) * c + ci) * t + ti) * v + vi];
                        }
                        let slot = &mut y.data_mut()[((ni * c + ci) * t + ti) * v + i];
                        *slot = *slot + s;
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Per-group concatenating oracle with full per-sample, per-channel
/// affinities `a[n, k, cg, v, i]`; the reference for the dynamic-group path.
pub fn group_concat_oracle<E: Scalar>(
    x: &Tensor<E>,
    a: &Tensor<E>,
    groups: usize,
) -> Result<Tensor<E>> {
    let xs = x.shape();
    let (n, kc, t, v) = (xs[0], xs[1], xs[2], xs[3]);
    if kc % groups != 0 {
        return Err(Error::config("group_concat_oracle: groups must divide channels"));
    }
    let cg = kc / groups;
    if a.shape() != [n, groups, cg, v, v] {
        return Err(Error::shape("group_concat_oracle", a.shape(), &[n, groups, cg, v, v]));
    }
    let mut y = Tensor::zeros(&[n, kc, t, v]);
    for ni in 0..n {
        for k in 0..groups {
            for ci in 0..cg {
                for ti in 0..t {
                    for i in 0..v {
                        let mut s = E::zero();
                        for vi in 0..v {
                            s = s + a.data()[(((ni * groups + k) * cg + ci) * v + vi) * v + i]
                                * x.data()[(((ni * groups + k) * cg + ci) * t + ti) * v + vi];
                        }
                        y.data_mut()[(((ni * groups + k) * cg + ci) * t + ti) * v + i] = s;
                    }
                }
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rng_from_seed;

    fn dg_cfg(c_in: usize, c_out: usize, v: usize, k: usize) -> GcnConfig {
        GcnConfig {
            c_in,
            c_out,
            num_joints: v,
            groups: k,
            variant: SpatialVariant::DynamicGroup {
                mask: ComponentMask::FULL,
            },
        }
    }

    #[test]
    fn validation_rejects_bad_configs() {
        assert!(dg_cfg(3, 64, 25, 8).validate().is_ok());
        assert!(dg_cfg(3, 64, 25, 12).validate().is_err(), "12 does not divide 64");
        assert!(dg_cfg(3, 4, 25, 8).validate().is_err(), "c_out < groups");
        let no_mask = GcnConfig {
            variant: SpatialVariant::DynamicGroup {
                mask: ComponentMask {
                    pa: false,
                    da: false,
                    ca: false,
                },
            },
            ..dg_cfg(3, 64, 25, 8)
        };
        assert!(no_mask.validate().is_err());
    }

    #[test]
    fn pa_init_statistics_and_zero_gates() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(0);
        let layer = GcnLayer::new("g", dg_cfg(3, 64, 25, 8), None, &mut store, &mut rng).unwrap();
        let pa = store.value(layer.pa.unwrap());
        assert_eq!(pa.shape(), &[8, 25, 25]);
        let n = pa.numel() as f64;
        let mean: f64 = pa.data().iter().sum::<f64>() / n;
        let var: f64 = pa.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let expect_std = 1.0 / 5.0; // 1/sqrt(25)
        assert!(mean.abs() < 0.01, "pa mean {mean}");
        assert!(
            (var.sqrt() - expect_std).abs() < 0.01,
            "pa std {} vs {expect_std}",
            var.sqrt()
        );
        assert!(store.value(layer.alpha.unwrap()).data().iter().all(|&x| x == 0.0));
        assert!(store.value(layer.beta.unwrap()).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn da_columns_sum_to_one() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(1);
        let cfg = dg_cfg(3, 16, 5, 4);
        let layer = GcnLayer::new("g", cfg, None, &mut store, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::randn(&[2, 3, 7, 5], 1.0, &mut rng));
        let (da, _) = layer.dynamic_affinities(&mut tape, &store, x).unwrap();
        let da = tape.value(da.unwrap());
        assert_eq!(da.shape(), &[2, 4, 5, 5]);
        for n in 0..2 {
            for k in 0..4 {
                for j in 0..5 {
                    let col: f64 = (0..5)
                        .map(|i| da.data()[((n * 4 + k) * 5 + i) * 5 + j])
                        .sum();
                    assert!((col - 1.0).abs() < 1e-9, "column {j} sums to {col}");
                }
            }
        }
    }

    #[test]
    fn ca_is_bounded_and_antisymmetric_in_its_arguments() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(2);
        let layer = GcnLayer::new("g", dg_cfg(2, 8, 4, 2), None, &mut store, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::randn(&[1, 2, 6, 4], 2.0, &mut rng));
        let (_, ca) = layer.dynamic_affinities(&mut tape, &store, x).unwrap();
        let ca = tape.value(ca.unwrap());
        assert_eq!(ca.shape(), &[1, 2, 4, 4, 4]);
        assert!(ca.data().iter().all(|&x| x > -1.0 && x < 1.0));
    }

    #[test]
    fn ca_hand_example() {
        // one channel, two joints: a=[1,0], b=[0,0]
        // CA[i,j] = tanh(a[i]-b[j]) = [[tanh1, tanh1], [0, 0]]
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 0.0]).unwrap());
        let b = tape.leaf(Tensor::from_vec(&[1, 1, 1, 2], vec![0.0, 0.0]).unwrap());
        let d = tape.pair_diff(a, b).unwrap();
        let ca = tape.tanh(d);
        let t1 = (1.0f64).tanh();
        let got = tape.value(ca).data();
        assert!((got[0] - t1).abs() < 1e-12 && (got[1] - t1).abs() < 1e-12);
        assert_eq!(got[2], 0.0);
        assert_eq!(got[3], 0.0);
    }

    #[test]
    fn fixed_partitions_for_a_chain() {
        // parents [0,0,1]: inward rows: root has none, 1->0, 2->1
        let a = fixed_partitions::<f64>(&[0, 0, 1]);
        let d = a.data();
        // identity
        assert_eq!(&d[0..9], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        // inward
        assert_eq!(&d[9..18], &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        // outward
        assert_eq!(&d[18..27], &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn fixed_partitions_normalize_fanout() {
        // star: joints 1..3 all children of 0
        let a = fixed_partitions::<f64>(&[0, 0, 0, 0]);
        let d = a.data();
        let out_row0: Vec<f64> = d[32..36].to_vec(); // outward plane, row 0
        assert_eq!(out_row0, vec![0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn eq1_oracle_tiny_hand_case() {
        // V=2, one group, one channel: A = [[0,1],[0,0]] routes joint 0 into
        // destination 1.
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![5.0, 7.0]).unwrap();
        let a = Tensor::from_vec(&[1, 2, 2], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let y = eq1_oracle(&x, &a, 1).unwrap();
        assert_eq!(y.data(), &[0.0, 5.0]);
    }

    #[test]
    fn tape_eq1_matches_oracle() {
        let mut rng = rng_from_seed(3);
        let x = Tensor::<f64>::randn(&[2, 6, 4, 5], 1.0, &mut rng);
        let a = Tensor::<f64>::randn(&[3, 5, 5], 1.0, &mut rng);
        let oracle = eq1_oracle(&x, &a, 3).unwrap();
        let mut tape = Tape::new();
        let (xi, ai) = (tape.leaf(x), tape.leaf(a));
        let y = tape.eq1_mix(xi, ai, 3).unwrap();
        assert!(tape.value(y).max_abs_diff(&oracle) < 1e-9);
    }

    #[test]
    fn fixed_variant_requires_parents() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(4);
        let cfg = GcnConfig {
            c_in: 3,
            c_out: 8,
            num_joints: 4,
            groups: 1,
            variant: SpatialVariant::FixedTopology,
        };
        assert!(GcnLayer::new("g", cfg, None, &mut store, &mut rng).is_err());
    }

    #[test]
    fn refined_variant_starts_identical_to_fixed() {
        let parents = [0usize, 0, 1, 2];
        let mut rng = rng_from_seed(5);
        let x = Tensor::<f64>::randn(&[1, 3, 4, 4], 1.0, &mut rng);

        let run = |variant: SpatialVariant, seed: u64| {
            let mut store = ParamStore::<f64>::new();
            let mut rng = rng_from_seed(seed);
            let cfg = GcnConfig {
                c_in: 3,
                c_out: 8,
                num_joints: 4,
                groups: 1,
                variant,
            };
            let layer = GcnLayer::new("g", cfg, Some(&parents), &mut store, &mut rng).unwrap();
            let mut tape = Tape::new();
            let xi = tape.leaf(x.clone());
            let y = layer.forward(&mut tape, &store, xi).unwrap();
            tape.value(y).clone()
        };
        let fixed = run(SpatialVariant::FixedTopology, 11);
        let refined = run(SpatialVariant::RefinedTopology, 11);
        assert!(fixed.max_abs_diff(&refined) < 1e-12, "delta starts at zero");
    }

    #[test]
    fn dynamic_forward_shape_and_finiteness() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = rng_from_seed(6);
        let layer =
            GcnLayer::new("g", dg_cfg(3, 16, 7, 4), None, &mut store, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f32>::randn(&[2, 3, 9, 7], 1.0, &mut rng));
        let y = layer.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 16, 9, 7]);
        assert!(tape.value(y).is_all_finite());
    }
}
