//! The pass/fail suites behind the `gradcheck` and `selftest` commands.
//!
//! Three batteries, each a list of named [`CheckResult`]s: finite-difference
//! validation of every tape operator plus the composed network
//! ([`gradcheck_suite`]), forward equivalence against the naive loop oracles
//! ([`oracle_suite`]), and the topology / sampling / training invariants
//! ([`invariant_suite`]). The acceptance tests print these same results, so
//! every check carries a stable name and a human-readable detail line.
//!
//! Everything here runs in f64 regardless of the precision the CLI trains
//! at: the thresholds (1e-5 per operator, 1e-4 through the composed model,
//! 1e-6 for exact-equivalence oracles) assume 64-bit arithmetic.

use crate::autodiff::{ParamStore, Tape, ValueId};
use crate::data::aug::{center_sample_indices, random_crop_positions, uniform_sample_indices};
use crate::data::synth::{self, chain_parents, SynthSpec};
use crate::error::{Error, Result};
use crate::gcn::{eq1_oracle, group_concat_oracle, ComponentMask, GcnConfig, GcnLayer, SpatialVariant};
use crate::gradcheck::{check_grads, rel_err};
use crate::net::{Model, ModelConfig};
use crate::optim::sgd_momentum_step;
use crate::profile::{cost_report, ProfileOptions};
use crate::tcn::{djsf_two_pass_oracle, JsfMode, TcnConfig, TcnLayer, TemporalKind};
use crate::tensor::{rng_from_seed, Tensor};
use crate::train::{train, TrainConfig};
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::HashSet;

/// Finite-difference step; central differences at this step keep truncation
/// error around 1e-8 relative in f64.
const STEP: f64 = 1e-4;
/// Step for the composed-model sweep. Per-operator inputs are constructed
/// off their kinks, but a full network has thousands of internal ReLU and
/// max-pool sites at random distances from theirs; the smaller window makes
/// a straddle (and the half-gradient it reports) vanishingly rare while f64
/// keeps roundoff far below the 1e-4 bar.
const MODEL_STEP: f64 = 1e-6;
/// Per-operator gradient tolerance.
pub const OP_TOL: f64 = 1e-5;
/// Composed-model gradient tolerance.
pub const MODEL_TOL: f64 = 1e-4;
/// Forward-equivalence tolerance for the spatial loop oracles.
pub const GCN_ORACLE_TOL: f64 = 1e-5;
/// Forward-equivalence tolerance for the two-pass fusion oracle.
pub const DJSF_ORACLE_TOL: f64 = 1e-6;

/// Outcome of one named check.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    /// One-line rendering: `PASS name — detail`.
    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        format!("{tag} {} — {}", self.name, self.detail)
    }
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

/// Every suite back to back; the `selftest` command.
pub fn all_suites() -> Vec<CheckResult> {
    let mut out = gradcheck_suite();
    out.extend(oracle_suite());
    out.extend(invariant_suite());
    out
}

/// Run a check producing a maximum error, pass iff it stays under `tol`.
fn err_check(name: &str, tol: f64, f: impl FnOnce() -> Result<f64>) -> CheckResult {
    match f() {
        Ok(e) => CheckResult {
            name: name.to_string(),
            passed: e.is_finite() && e <= tol,
            detail: format!("max err {e:.2e} (tol {tol:.0e})"),
        },
        Err(err) => CheckResult {
            name: name.to_string(),
            passed: false,
            detail: err.to_string(),
        },
    }
}

/// Run a property check: `Ok(detail)` passes, `Err` fails with its message.
fn prop_check(name: &str, f: impl FnOnce() -> Result<String>) -> CheckResult {
    match f() {
        Ok(detail) => CheckResult {
            name: name.to_string(),
            passed: true,
            detail,
        },
        Err(err) => CheckResult {
            name: name.to_string(),
            passed: false,
            detail: err.to_string(),
        },
    }
}

// ── Shared building blocks ──────────────────────────────────────────────

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut rng_from_seed(seed))
}

/// Values pushed away from zero so a ReLU kink is never straddled by the
/// probe step.
fn off_kink(shape: &[usize], seed: u64) -> Tensor<f64> {
    randn(shape, seed).map(|v| v + 0.3 * v.signum())
}

/// A random permutation of an even grid: all entries distinct with gaps far
/// beyond the probe step, so max-pool argmaxes cannot flip mid-check.
fn well_separated(shape: &[usize], seed: u64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let vals: Vec<f64> = order.iter().map(|&k| 0.05 * k as f64 - 0.025 * n as f64).collect();
    Tensor::from_f64s(shape, &vals).expect("grid tensor")
}

/// Project an arbitrary tensor to a scalar through a fixed random linear
/// map, so every output coordinate influences the probe loss.
fn project(tape: &mut Tape<f64>, y: ValueId, seed: u64) -> Result<ValueId> {
    let n = tape.value(y).numel();
    let y4 = tape.reshape(y, &[1, n, 1, 1])?;
    let w = tape.leaf(Tensor::randn(&[1, n], 1.0, &mut rng_from_seed(seed)));
    tape.pointwise_conv(y4, w, None)
}

/// `check_grads` wrapper returning only the worst relative error.
fn fd(
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Tape<f64>, &[ValueId]) -> Result<ValueId>,
) -> Result<f64> {
    Ok(check_grads(inputs, STEP, build)?.max_rel_err)
}

/// Give the zero-initialized gates (alpha, beta, gamma) random nonzero
/// values so their downstream paths are genuinely exercised.
fn warm_start_gates(store: &mut ParamStore<f64>, seed: u64) {
    let mut rng = rng_from_seed(seed);
    for (_, p) in store.iter_mut() {
        if p.name.ends_with(".alpha") || p.name.ends_with(".beta") || p.name.ends_with(".gamma") {
            let shape = p.value.shape().to_vec();
            p.value = Tensor::randn(&shape, 0.3, &mut rng);
        }
    }
}

fn pval<'s>(store: &'s ParamStore<f64>, name: &str) -> Result<&'s Tensor<f64>> {
    store
        .find(name)
        .map(|id| store.value(id))
        .ok_or_else(|| Error::config(format!("parameter '{name}' not found")))
}

/// `y[n,o,t,v] = sum_i w[o,i] x[n,i,t,v]`, plain loops.
fn naive_pointwise(x: &Tensor<f64>, w: &Tensor<f64>) -> Tensor<f64> {
    let (n, c_in, t, v) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let c_out = w.dim(0);
    let mut y = Tensor::zeros(&[n, c_out, t, v]);
    let (xd, wd, yd) = (x.data(), w.data(), y.data_mut());
    for ni in 0..n {
        for o in 0..c_out {
            for i in 0..c_in {
                let wv = wd[o * c_in + i];
                for p in 0..t * v {
                    yd[(ni * c_out + o) * t * v + p] += wv * xd[(ni * c_in + i) * t * v + p];
                }
            }
        }
    }
    y
}

fn naive_mean_t(x: &Tensor<f64>) -> Tensor<f64> {
    let (n, c, t, v) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let mut y = Tensor::zeros(&[n, c, 1, v]);
    let (xd, yd) = (x.data(), y.data_mut());
    for nc in 0..n * c {
        for ti in 0..t {
            for vi in 0..v {
                yd[nc * v + vi] += xd[(nc * t + ti) * v + vi] / t as f64;
            }
        }
    }
    y
}

/// Run a spatial layer's tape forward and return the concrete output.
fn run_gcn(layer: &GcnLayer, store: &ParamStore<f64>, x: &Tensor<f64>) -> Result<Tensor<f64>> {
    let mut tape = Tape::new();
    let xi = tape.leaf(x.clone());
    let y = layer.forward(&mut tape, store, xi)?;
    Ok(tape.value(y).clone())
}

// ── Gradient suite ──────────────────────────────────────────────────────

/// Finite-difference checks: one per tape operator (tolerance [`OP_TOL`]),
/// then the whole two-block network against every parameter coordinate
/// (tolerance [`MODEL_TOL`]).
pub fn gradcheck_suite() -> Vec<CheckResult> {
    let mut out = Vec::new();

    out.push(err_check("grad: pointwise_conv", OP_TOL, || {
        fd(&[randn(&[2, 3, 4, 5], 1), randn(&[4, 3], 2), randn(&[4], 3)], |t, ids| {
            let y = t.pointwise_conv(ids[0], ids[1], Some(ids[2]))?;
            project(t, y, 101)
        })
    }));
    out.push(err_check("grad: temporal_conv k3 d2 s2", OP_TOL, || {
        fd(&[randn(&[1, 3, 7, 2], 4), randn(&[2, 3, 3], 5)], |t, ids| {
            let y = t.temporal_conv(ids[0], ids[1], 3, 2, 2)?;
            project(t, y, 102)
        })
    }));
    out.push(err_check("grad: temporal_conv k5 d1 s1", OP_TOL, || {
        fd(&[randn(&[1, 2, 6, 3], 6), randn(&[3, 2, 5], 7)], |t, ids| {
            let y = t.temporal_conv(ids[0], ids[1], 5, 1, 1)?;
            project(t, y, 103)
        })
    }));
    out.push(err_check("grad: temporal_max_pool", OP_TOL, || {
        fd(&[well_separated(&[2, 2, 7, 3], 8)], |t, ids| {
            let y = t.temporal_max_pool(ids[0], 3, 2)?;
            project(t, y, 104)
        })
    }));
    out.push(err_check("grad: temporal_subsample", OP_TOL, || {
        fd(&[randn(&[1, 3, 7, 4], 9)], |t, ids| {
            let y = t.temporal_subsample(ids[0], 2)?;
            project(t, y, 105)
        })
    }));
    out.push(err_check("grad: softmax", OP_TOL, || {
        fd(&[randn(&[2, 2, 4, 4], 10)], |t, ids| {
            let y = t.softmax(ids[0], 2)?;
            project(t, y, 106)
        })
    }));
    out.push(err_check("grad: tanh", OP_TOL, || {
        fd(&[randn(&[2, 3, 4, 5], 11)], |t, ids| {
            let y = t.tanh(ids[0]);
            project(t, y, 107)
        })
    }));
    out.push(err_check("grad: relu", OP_TOL, || {
        fd(&[off_kink(&[2, 3, 4, 5], 12)], |t, ids| {
            let y = t.relu(ids[0]);
            project(t, y, 108)
        })
    }));
    out.push(err_check("grad: batch_norm (train)", OP_TOL, || {
        let scale = randn(&[4], 14).map(|v| 1.0 + 0.2 * v);
        let shift = randn(&[4], 15).map(|v| 0.2 * v);
        fd(&[randn(&[3, 4, 5, 2], 13), scale, shift], |t, ids| {
            let mut rm = Tensor::zeros(&[4]);
            let mut rv = Tensor::full(&[4], 1.0);
            let y = t.batch_norm(ids[0], ids[1], ids[2], &mut rm, &mut rv, 1e-5, 0.1, true)?;
            project(t, y, 109)
        })
    }));
    out.push(err_check("grad: batch_norm (eval)", OP_TOL, || {
        let scale = randn(&[4], 17).map(|v| 1.0 + 0.2 * v);
        let shift = randn(&[4], 18).map(|v| 0.2 * v);
        fd(&[randn(&[3, 4, 5, 2], 16), scale, shift], |t, ids| {
            let mut rng = rng_from_seed(55);
            let mut rm = Tensor::randn(&[4], 0.3, &mut rng);
            let mut rv = Tensor::<f64>::randn(&[4], 0.2, &mut rng).map(|v| 0.5 + v.abs());
            let y = t.batch_norm(ids[0], ids[1], ids[2], &mut rm, &mut rv, 1e-5, 0.1, false)?;
            project(t, y, 110)
        })
    }));
    out.push(err_check("grad: add", OP_TOL, || {
        fd(&[randn(&[2, 3, 4, 2], 19), randn(&[2, 3, 4, 2], 20)], |t, ids| {
            let y = t.add(ids[0], ids[1])?;
            project(t, y, 111)
        })
    }));
    out.push(err_check("grad: scale_per_group", OP_TOL, || {
        fd(&[randn(&[2, 6, 3, 2], 21), randn(&[3], 22)], |t, ids| {
            let y = t.scale_per_group(ids[0], ids[1], 3)?;
            project(t, y, 112)
        })
    }));
    out.push(err_check("grad: eq1_mix", OP_TOL, || {
        fd(&[randn(&[2, 6, 3, 4], 23), randn(&[3, 4, 4], 24)], |t, ids| {
            let y = t.eq1_mix(ids[0], ids[1], 3)?;
            project(t, y, 113)
        })
    }));
    out.push(err_check("grad: group_mix_static", OP_TOL, || {
        fd(&[randn(&[2, 6, 3, 4], 25), randn(&[3, 4, 4], 26)], |t, ids| {
            let y = t.group_mix_static(ids[0], ids[1], 3)?;
            project(t, y, 114)
        })
    }));
    out.push(err_check("grad: group_mix_dynamic", OP_TOL, || {
        fd(&[randn(&[2, 6, 3, 4], 27), randn(&[2, 3, 4, 4], 28)], |t, ids| {
            let y = t.group_mix_dynamic(ids[0], ids[1], 3)?;
            project(t, y, 115)
        })
    }));
    out.push(err_check("grad: group_mix_chanwise", OP_TOL, || {
        fd(&[randn(&[2, 6, 3, 4], 29), randn(&[2, 3, 2, 4, 4], 30)], |t, ids| {
            let y = t.group_mix_chanwise(ids[0], ids[1], 3)?;
            project(t, y, 116)
        })
    }));
    out.push(err_check("grad: mean_over_t", OP_TOL, || {
        fd(&[randn(&[2, 3, 5, 4], 31)], |t, ids| {
            let y = t.mean_over_t(ids[0])?;
            project(t, y, 117)
        })
    }));
    out.push(err_check("grad: reshape", OP_TOL, || {
        fd(&[randn(&[2, 3, 4, 5], 32)], |t, ids| {
            let y = t.reshape(ids[0], &[6, 20])?;
            project(t, y, 118)
        })
    }));
    out.push(err_check("grad: transpose_tv", OP_TOL, || {
        fd(&[randn(&[2, 3, 4, 5], 33)], |t, ids| {
            let y = t.transpose_tv(ids[0])?;
            project(t, y, 119)
        })
    }));
    out.push(err_check("grad: pair_gram", OP_TOL, || {
        fd(&[randn(&[2, 2, 3, 4], 34), randn(&[2, 2, 3, 4], 35)], |t, ids| {
            let y = t.pair_gram(ids[0], ids[1])?;
            project(t, y, 120)
        })
    }));
    out.push(err_check("grad: pair_diff", OP_TOL, || {
        fd(&[randn(&[2, 2, 3, 4], 36), randn(&[2, 2, 3, 4], 37)], |t, ids| {
            let y = t.pair_diff(ids[0], ids[1])?;
            project(t, y, 121)
        })
    }));
    out.push(err_check("grad: append_joint_mean", OP_TOL, || {
        fd(&[randn(&[2, 3, 4, 5], 38)], |t, ids| {
            let y = t.append_joint_mean(ids[0])?;
            project(t, y, 122)
        })
    }));
    out.push(err_check("grad: djsf_fuse", OP_TOL, || {
        fd(&[randn(&[2, 3, 4, 6], 39), randn(&[5], 40)], |t, ids| {
            let y = t.djsf_fuse(ids[0], ids[1])?;
            project(t, y, 123)
        })
    }));
    out.push(err_check("grad: concat_skeleton", OP_TOL, || {
        fd(&[randn(&[2, 3, 4, 6], 41)], |t, ids| {
            let y = t.concat_skeleton(ids[0])?;
            project(t, y, 124)
        })
    }));
    out.push(err_check("grad: slice_c", OP_TOL, || {
        fd(&[randn(&[2, 6, 3, 4], 42)], |t, ids| {
            let y = t.slice_c(ids[0], 1, 4)?;
            project(t, y, 125)
        })
    }));
    out.push(err_check("grad: concat_c", OP_TOL, || {
        let inputs = [randn(&[2, 2, 3, 4], 43), randn(&[2, 3, 3, 4], 44), randn(&[2, 1, 3, 4], 45)];
        fd(&inputs, |t, ids| {
            let y = t.concat_c(ids)?;
            project(t, y, 126)
        })
    }));
    out.push(err_check("grad: mean_tv", OP_TOL, || {
        fd(&[randn(&[2, 3, 4, 5], 46)], |t, ids| {
            let y = t.mean_tv(ids[0])?;
            project(t, y, 127)
        })
    }));
    out.push(err_check("grad: person_mean", OP_TOL, || {
        let alive = [true, false, true, true, false, false];
        fd(&[randn(&[6, 4], 47)], move |t, ids| {
            let y = t.person_mean(ids[0], &alive, 2)?;
            project(t, y, 128)
        })
    }));
    out.push(err_check("grad: affine", OP_TOL, || {
        fd(&[randn(&[3, 4], 48), randn(&[5, 4], 49), randn(&[5], 50)], |t, ids| {
            let y = t.affine(ids[0], ids[1], ids[2])?;
            project(t, y, 129)
        })
    }));
    out.push(err_check("grad: dropout", OP_TOL, || {
        fd(&[randn(&[2, 3, 4, 5], 51)], |t, ids| {
            // mask reconstructed identically on every call
            let y = t.dropout(ids[0], 0.35, &mut rng_from_seed(77))?;
            project(t, y, 130)
        })
    }));
    out.push(err_check("grad: cross_entropy", OP_TOL, || {
        fd(&[randn(&[4, 5], 52)], |t, ids| t.cross_entropy(ids[0], &[0, 2, 4, 1]))
    }));
    out.push(err_check("grad: focal_loss", OP_TOL, || {
        let weights = [0.8, 1.2, 1.0, 0.6, 1.4];
        fd(&[randn(&[4, 5], 53)], move |t, ids| {
            t.focal_loss(ids[0], &[0, 2, 4, 1], &weights, 2.0)
        })
    }));

    out.push(err_check("grad: composed two-block model", MODEL_TOL, full_model_fd));
    out
}

/// FD-check every parameter coordinate of a small but complete network
/// (dynamic-group spatial, multi-group temporal, D-JSF, projection and
/// identity-path residuals, data BN, classifier head).
///
/// The train-mode loss is a pure function of (parameters, input): batch norm
/// reads batch statistics and only *writes* the running buffers, so the FD
/// sweep needs no buffer bookkeeping.
fn full_model_fd() -> Result<f64> {
    let cfg = ModelConfig {
        num_classes: 4,
        num_joints: 5,
        in_channels: 2,
        max_persons: 1,
        base_channels: 8,
        num_blocks: 2,
        downsample_blocks: vec![2],
        groups: 4,
        ..ModelConfig::default()
    };
    let parents = chain_parents(5);
    let mut model = Model::<f64>::new(cfg, Some(&parents), 11)?;
    warm_start_gates(&mut model.store, 5);
    let x = Tensor::randn(&[2, 2, 8, 5], 0.8, &mut rng_from_seed(7));
    let alive = vec![true; 2];
    let labels = vec![1usize, 3];

    let loss_of = |model: &mut Model<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let logits = model.forward(&mut tape, x.clone(), &alive, true, &mut rng_from_seed(0))?;
        let loss = tape.cross_entropy(logits, &labels)?;
        Ok(tape.value(loss).data()[0])
    };

    model.store.zero_grads();
    {
        let mut tape = Tape::new();
        let logits = model.forward(&mut tape, x.clone(), &alive, true, &mut rng_from_seed(0))?;
        let loss = tape.cross_entropy(logits, &labels)?;
        tape.backward(loss, Some(&mut model.store), &[])?;
    }
    let analytic: Vec<_> = model.store.iter().map(|(id, p)| (id, p.grad.clone())).collect();

    let mut worst = 0.0f64;
    for (id, grad) in &analytic {
        for c in 0..grad.numel() {
            let orig = model.store.value(*id).data()[c];
            model.store.value_mut(*id).data_mut()[c] = orig + MODEL_STEP;
            let plus = loss_of(&mut model)?;
            model.store.value_mut(*id).data_mut()[c] = orig - MODEL_STEP;
            let minus = loss_of(&mut model)?;
            model.store.value_mut(*id).data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * MODEL_STEP);
            worst = worst.max(rel_err(grad.data()[c], numeric));
        }
    }
    Ok(worst)
}

// ── Oracle suite ────────────────────────────────────────────────────────

/// Forward equivalence against deliberately naive implementations.
pub fn oracle_suite() -> Vec<CheckResult> {
    vec![
        err_check(
            "oracle: dynamic-group gcn vs loop oracles (120 instances)",
            GCN_ORACLE_TOL,
            || gcn_oracle_instances(120),
        ),
        err_check(
            "oracle: d-jsf single pass vs two-pass (40 instances)",
            DJSF_ORACLE_TOL,
            || djsf_oracle_instances(40),
        ),
    ]
}

/// Each instance draws random small dimensions and checks two independent
/// routes: the full PA+DA+CA layer against plain loops feeding
/// [`group_concat_oracle`], and a PA-only layer against [`eq1_oracle`] with
/// the output conv distributed into the groups (channel mixing commutes
/// with joint mixing, so concat-then-conv must equal conv-then-sum).
fn gcn_oracle_instances(instances: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut rng = rng_from_seed(1000 + i as u64);
        let v = rng.gen_range(3..=6);
        let k = rng.gen_range(2..=4);
        let cg = rng.gen_range(1..=3);
        let c_in = rng.gen_range(1..=4);
        let t = rng.gen_range(2..=4);
        let n = rng.gen_range(1..=2);
        let x = Tensor::randn(&[n, c_in, t, v], 1.0, &mut rng);

        // route 1: full dynamic layer vs loops + group_concat_oracle
        let cfg = GcnConfig {
            c_in,
            c_out: k * cg,
            num_joints: v,
            groups: k,
            variant: SpatialVariant::DynamicGroup { mask: ComponentMask::FULL },
        };
        let mut store = ParamStore::<f64>::new();
        let layer = GcnLayer::new("g", cfg, None, &mut store, &mut rng)?;
        warm_start_gates(&mut store, 2000 + i as u64);
        let y = run_gcn(&layer, &store, &x)?;
        let y_ref = dg_reference(&store, &x, k, cg)?;
        worst = worst.max(y.max_abs_diff(&y_ref));

        // route 2: PA-only layer vs the Eq. 1 summing oracle
        let cfg_pa = GcnConfig {
            c_in,
            c_out: k * cg,
            num_joints: v,
            groups: k,
            variant: SpatialVariant::DynamicGroup { mask: ComponentMask::PA_ONLY },
        };
        let mut store_pa = ParamStore::<f64>::new();
        let layer_pa = GcnLayer::new("p", cfg_pa, None, &mut store_pa, &mut rng)?;
        let y = run_gcn(&layer_pa, &store_pa, &x)?;
        let y_ref = eq1_reference(&store_pa, &x, k, cg)?;
        worst = worst.max(y.max_abs_diff(&y_ref));
    }
    Ok(worst)
}

/// Tape-free rendering of the full dynamic-group layer: loops for the
/// convolutions and affinity assembly, [`group_concat_oracle`] for the
/// contraction.
fn dg_reference(store: &ParamStore<f64>, x: &Tensor<f64>, k: usize, cg: usize) -> Result<Tensor<f64>> {
    let (n, t, v) = (x.dim(0), x.dim(2), x.dim(3));
    let _ = t;
    let pre = naive_pointwise(x, pval(store, "g.w_pre")?);
    let pooled = naive_mean_t(x);
    let ea = naive_pointwise(&pooled, pval(store, "g.enc_a")?); // [n, k*cg, 1, v]
    let eb = naive_pointwise(&pooled, pval(store, "g.enc_b")?);
    let (ead, ebd) = (ea.data(), eb.data());
    let at = |d: &[f64], ni: usize, ki: usize, c: usize, vi: usize| d[((ni * k + ki) * cg + c) * v + vi];

    let pa = pval(store, "g.pa")?.data();
    let alpha = pval(store, "g.alpha")?.data();
    let beta = pval(store, "g.beta")?.data();

    // combined per-sample, per-channel affinity a[n,k,cg,v,i]
    let mut a = Tensor::zeros(&[n, k, cg, v, v]);
    let ad = a.data_mut();
    for ni in 0..n {
        for ki in 0..k {
            // DA: gram over the embedding channels, softmax over sources
            let mut da = vec![0.0f64; v * v];
            for (src, row) in da.chunks_mut(v).enumerate() {
                for (dst, slot) in row.iter_mut().enumerate() {
                    for c in 0..cg {
                        *slot += at(ead, ni, ki, c, src) * at(ebd, ni, ki, c, dst);
                    }
                }
            }
            for dst in 0..v {
                let m = (0..v).map(|s| da[s * v + dst]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..v).map(|s| (da[s * v + dst] - m).exp()).sum();
                for src in 0..v {
                    da[src * v + dst] = (da[src * v + dst] - m).exp() / z;
                }
            }
            for c in 0..cg {
                for src in 0..v {
                    for dst in 0..v {
                        let ca = (at(ead, ni, ki, c, src) - at(ebd, ni, ki, c, dst)).tanh();
                        ad[(((ni * k + ki) * cg + c) * v + src) * v + dst] = pa
                            [(ki * v + src) * v + dst]
                            + alpha[ki] * da[src * v + dst]
                            + beta[ki] * ca;
                    }
                }
            }
        }
    }
    let mixed = group_concat_oracle(&pre, &a, k)?;
    Ok(naive_pointwise(&mixed, pval(store, "g.w_post")?))
}

/// PA-only layer as an Eq. 1 instance: apply the w_post column block of each
/// group before the contraction and let [`eq1_oracle`] do the summing.
fn eq1_reference(store: &ParamStore<f64>, x: &Tensor<f64>, k: usize, cg: usize) -> Result<Tensor<f64>> {
    let (n, t, v) = (x.dim(0), x.dim(2), x.dim(3));
    let pre = naive_pointwise(x, pval(store, "p.w_pre")?);
    let w_post = pval(store, "p.w_post")?; // [c_out, k*cg]
    let c_out = w_post.dim(0);
    let mut xe = Tensor::zeros(&[n, k * c_out, t, v]);
    for g in 0..k {
        // slice group g's channels out of pre
        let mut pre_g = Tensor::zeros(&[n, cg, t, v]);
        for ni in 0..n {
            for c in 0..cg {
                let src = ((ni * k + g) * cg + c) * t * v;
                let dst = (ni * cg + c) * t * v;
                pre_g.data_mut()[dst..dst + t * v].copy_from_slice(&pre.data()[src..src + t * v]);
            }
        }
        // w_post's column block for this group
        let mut wk = Tensor::zeros(&[c_out, cg]);
        for o in 0..c_out {
            for c in 0..cg {
                wk.data_mut()[o * cg + c] = w_post.data()[o * (k * cg) + g * cg + c];
            }
        }
        let z = naive_pointwise(&pre_g, &wk); // [n, c_out, t, v]
        for ni in 0..n {
            let src = ni * c_out * t * v;
            let dst = (ni * k + g) * c_out * t * v;
            xe.data_mut()[dst..dst + c_out * t * v]
                .copy_from_slice(&z.data()[src..src + c_out * t * v]);
        }
    }
    eq1_oracle(&xe, pval(store, "p.pa")?, k)
}

fn djsf_oracle_instances(instances: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut rng = rng_from_seed(3000 + i as u64);
        let c = [6, 7, 12][i % 3];
        let v = rng.gen_range(3..=6);
        let t = rng.gen_range(4..=7);
        let cfg = TcnConfig {
            channels: c,
            stride: 1 + i % 2,
            num_joints: v,
            temporal: TemporalKind::MultiGroup,
            jsf: JsfMode::Djsf,
        };
        let mut store = ParamStore::<f64>::new();
        let layer = TcnLayer::new("t", cfg, &mut store, &mut rng)?;
        warm_start_gates(&mut store, 4000 + i as u64);
        let n = rng.gen_range(1..=2);
        let x = Tensor::randn(&[n, c, t, v], 1.0, &mut rng);

        let mut tape = Tape::new();
        let xi = tape.leaf(x.clone());
        let y1 = layer.forward(&mut tape, &store, xi)?;
        let y1 = tape.value(y1).clone();
        let y2 = djsf_two_pass_oracle(&layer, &store, &x)?;
        worst = worst.max(y1.max_abs_diff(&y2));
    }
    Ok(worst)
}

// ── Invariant suite ─────────────────────────────────────────────────────

/// Softmax/topology invariants, sampling properties, and the training-side
/// sanity checks.
pub fn invariant_suite() -> Vec<CheckResult> {
    vec![
        prop_check("invariant: DA columns sum to one", da_column_sums),
        prop_check("invariant: CA values lie strictly inside (-1, 1)", ca_range),
        prop_check("invariant: joint-permutation equivariance", permutation_equivariance),
        prop_check("invariant: uniform samples stay in their substrings", sampling_substrings),
        prop_check("invariant: t = n sampling is the identity", sampling_identity),
        prop_check("invariant: uniform sampling out-diversifies random crop", sampling_diversity),
        prop_check("invariant: batch-norm running stats track batches", bn_running_stats),
        prop_check("invariant: zero-scaled block is the identity", zero_block_identity),
        prop_check("invariant: optimizer walks every profiled parameter", optimizer_counts),
        prop_check("invariant: one small step descends the loss", descent_step),
        prop_check("invariant: dynamic gates receive gradient", gate_gradients),
        prop_check("invariant: ablation grid builds, trains, profiles", ablation_grid),
        prop_check("invariant: checkpoint bytes reproduce from the seed", checkpoint_determinism),
    ]
}

/// A fully dynamic test layer plus a probe input, shared by the affinity
/// invariants.
fn probe_layer() -> Result<(GcnLayer, ParamStore<f64>, Tensor<f64>)> {
    let mut rng = rng_from_seed(21);
    let cfg = GcnConfig {
        c_in: 3,
        c_out: 6,
        num_joints: 6,
        groups: 3,
        variant: SpatialVariant::DynamicGroup { mask: ComponentMask::FULL },
    };
    let mut store = ParamStore::<f64>::new();
    let layer = GcnLayer::new("g", cfg, None, &mut store, &mut rng)?;
    warm_start_gates(&mut store, 22);
    let x = Tensor::randn(&[2, 3, 4, 6], 1.0, &mut rng);
    Ok((layer, store, x))
}

fn da_column_sums() -> Result<String> {
    let (layer, store, x) = probe_layer()?;
    let mut tape = Tape::new();
    let xi = tape.leaf(x);
    let (da, _) = layer.dynamic_affinities(&mut tape, &store, xi)?;
    let da = tape.value(da.ok_or_else(|| Error::config("DA missing"))?);
    let (n, k, v) = (da.dim(0), da.dim(1), da.dim(2));
    let mut worst = 0.0f64;
    for ni in 0..n {
        for ki in 0..k {
            for dst in 0..v {
                let sum: f64 = (0..v).map(|src| da.data()[((ni * k + ki) * v + src) * v + dst]).sum();
                worst = worst.max((sum - 1.0).abs());
            }
        }
    }
    if worst > 1e-6 {
        return Err(Error::numerical(format!("a DA column sums to 1 {worst:+.2e}")));
    }
    Ok(format!("{} columns, max |sum - 1| = {worst:.1e}", n * k * v))
}

fn ca_range() -> Result<String> {
    let (layer, store, x) = probe_layer()?;
    let mut tape = Tape::new();
    let xi = tape.leaf(x);
    let (_, ca) = layer.dynamic_affinities(&mut tape, &store, xi)?;
    let ca = tape.value(ca.ok_or_else(|| Error::config("CA missing"))?);
    let mut worst = 0.0f64;
    for &v in ca.data() {
        if !v.is_finite() || v.abs() >= 1.0 {
            return Err(Error::numerical(format!("CA value {v} outside (-1, 1)")));
        }
        worst = worst.max(v.abs());
    }
    Ok(format!("{} values, max |CA| = {worst:.4}", ca.numel()))
}

/// Relabeling the joints (input and the static PA consistently) must
/// relabel the output the same way; the data-dependent components earn
/// their equivariance from the per-joint encoders.
fn permutation_equivariance() -> Result<String> {
    let (layer, store, x) = probe_layer()?;
    let v = x.dim(3);
    let mut perm: Vec<usize> = (0..v).collect();
    perm.shuffle(&mut rng_from_seed(23));

    let permute_joints = |t: &Tensor<f64>| -> Tensor<f64> {
        let mut out = Tensor::zeros(t.shape());
        let rows = t.numel() / v;
        for r in 0..rows {
            for (j, &pj) in perm.iter().enumerate() {
                out.data_mut()[r * v + j] = t.data()[r * v + pj];
            }
        }
        out
    };

    let y1 = run_gcn(&layer, &store, &x)?;

    let mut store_p = store.clone();
    let pa_id = store_p.find("g.pa").ok_or_else(|| Error::config("pa missing"))?;
    let old = store_p.value(pa_id).clone();
    {
        let k = old.dim(0);
        let new = store_p.value_mut(pa_id);
        for ki in 0..k {
            for a in 0..v {
                for b in 0..v {
                    new.data_mut()[(ki * v + a) * v + b] =
                        old.data()[(ki * v + perm[a]) * v + perm[b]];
                }
            }
        }
    }
    let y2 = run_gcn(&layer, &store_p, &permute_joints(&x))?;
    let diff = y2.max_abs_diff(&permute_joints(&y1));
    if diff > 1e-6 {
        return Err(Error::numerical(format!("equivariance broken by {diff:.2e}")));
    }
    Ok(format!("pa+da+ca layer, max deviation {diff:.1e}"))
}

fn sampling_substrings() -> Result<String> {
    let mut rng = rng_from_seed(31);
    let pairs = 10_000;
    for _ in 0..pairs {
        let t = rng.gen_range(1..=200);
        let n = rng.gen_range(1..=64);
        let idx = uniform_sample_indices(t, n, &mut rng);
        if idx.len() != n {
            return Err(Error::numerical(format!("t={t} n={n}: wrong count")));
        }
        for (i, &ti) in idx.iter().enumerate() {
            let (lo, hi) = (i * t / n, (i + 1) * t / n);
            let ok = if hi > lo { ti >= lo && ti < hi } else { ti == lo.min(t - 1) };
            if !ok {
                return Err(Error::numerical(format!("t={t} n={n}: slot {i} drew {ti}")));
            }
        }
        if idx.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::numerical(format!("t={t} n={n}: unsorted")));
        }
    }
    Ok(format!("{pairs} random (t, n) pairs"))
}

fn sampling_identity() -> Result<String> {
    let mut rng = rng_from_seed(32);
    for &t in &[1usize, 2, 5, 16, 33, 64, 100] {
        let identity: Vec<usize> = (0..t).collect();
        for _ in 0..20 {
            if uniform_sample_indices(t, t, &mut rng) != identity {
                return Err(Error::numerical(format!("t=n={t} not the identity")));
            }
        }
        if center_sample_indices(t, t) != identity {
            return Err(Error::numerical(format!("center t=n={t} not the identity")));
        }
    }
    Ok("t in {1, 2, 5, 16, 33, 64, 100}".into())
}

/// At t = 2n every substring holds two frames, so uniform sampling reaches
/// 2^n index tuples while a crop is pinned by (length, start).
fn sampling_diversity() -> Result<String> {
    let (t, n, draws) = (16usize, 8usize, 10_000usize);
    let mut rng = rng_from_seed(33);
    let mut uniform_seen: HashSet<Vec<usize>> = HashSet::new();
    for _ in 0..draws {
        uniform_seen.insert(uniform_sample_indices(t, n, &mut rng));
    }
    let mut crop_seen: HashSet<Vec<i64>> = HashSet::new();
    for _ in 0..draws {
        let pos = random_crop_positions(t, n, &mut rng);
        crop_seen.insert(pos.iter().map(|p| (p * 1000.0).round() as i64).collect());
    }
    if uniform_seen.len() <= crop_seen.len() {
        return Err(Error::numerical(format!(
            "uniform {} <= crop {} distinct tuples",
            uniform_seen.len(),
            crop_seen.len()
        )));
    }
    Ok(format!(
        "uniform {} vs crop {} distinct tuples over {draws} draws",
        uniform_seen.len(),
        crop_seen.len()
    ))
}

fn bn_running_stats() -> Result<String> {
    // two channels with hand-picked stats: ch0 mean 2 var 1, ch1 mean 2 var 4
    let x = Tensor::from_f64s(&[1, 2, 2, 2], &[1.0, 3.0, 1.0, 3.0, 0.0, 4.0, 0.0, 4.0])?;
    let mut rm = Tensor::zeros(&[2]);
    let mut rv = Tensor::full(&[2], 1.0);
    let mut tape = Tape::new();
    let xi = tape.leaf(x);
    let scale = tape.leaf(Tensor::full(&[2], 1.0));
    let shift = tape.leaf(Tensor::zeros(&[2]));
    let y = tape.batch_norm(xi, scale, shift, &mut rm, &mut rv, 1e-5, 0.1, true)?;

    // momentum 0.1: rm = 0.9*0 + 0.1*mean, rv = 0.9*1 + 0.1*var
    let expect_rm: [f64; 2] = [0.2, 0.2];
    let expect_rv: [f64; 2] = [1.0, 1.3];
    for c in 0..2 {
        if (rm.data()[c] - expect_rm[c]).abs() > 1e-12 || (rv.data()[c] - expect_rv[c]).abs() > 1e-12 {
            return Err(Error::numerical(format!(
                "running stats {:?}/{:?}, expected {expect_rm:?}/{expect_rv:?}",
                rm.data(),
                rv.data()
            )));
        }
    }
    // train-mode output normalizes with the batch stats
    let y0 = tape.value(y).data()[0];
    let want = (1.0 - 2.0) / (1.0f64 + 1e-5).sqrt();
    if (y0 - want).abs() > 1e-9 {
        return Err(Error::numerical(format!("normalized value {y0}, expected {want}")));
    }

    // eval mode must read, not write
    let (rm_before, rv_before) = (rm.data().to_vec(), rv.data().to_vec());
    let y_eval = tape.batch_norm(xi, scale, shift, &mut rm, &mut rv, 1e-5, 0.1, false)?;
    if rm.data() != &rm_before[..] || rv.data() != &rv_before[..] {
        return Err(Error::numerical("eval-mode batch norm moved the buffers"));
    }
    let y0 = tape.value(y_eval).data()[0];
    let want = (1.0 - 0.2) / (1.0f64 + 1e-5).sqrt();
    if (y0 - want).abs() > 1e-9 {
        return Err(Error::numerical(format!("eval value {y0}, expected {want}")));
    }
    Ok("momentum update and eval read-back verified".into())
}

/// Appending a block whose TCN batch-norm scale is zeroed must leave the
/// network function untouched: the residual carries the (non-negative,
/// post-ReLU) input straight through.
fn zero_block_identity() -> Result<String> {
    let base = ModelConfig {
        num_classes: 3,
        num_joints: 5,
        in_channels: 2,
        max_persons: 1,
        base_channels: 8,
        num_blocks: 2,
        downsample_blocks: vec![2],
        groups: 4,
        ..ModelConfig::default()
    };
    let ext = ModelConfig { num_blocks: 3, ..base.clone() };
    let parents = chain_parents(5);
    let mut b = Model::<f64>::new(base, Some(&parents), 31)?;
    let mut a = Model::<f64>::new(ext, Some(&parents), 31)?;

    // align every shared tensor by name (the extra block shifts the rng
    // stream, so the head would otherwise differ)
    for (_, p) in b.store.iter() {
        let id = a
            .store
            .find(&p.name)
            .ok_or_else(|| Error::config(format!("3-block model lacks '{}'", p.name)))?;
        *a.store.value_mut(id) = p.value.clone();
    }
    let scale = a
        .store
        .find("block3.bn_tcn.scale")
        .ok_or_else(|| Error::config("block3.bn_tcn.scale missing"))?;
    a.store.value_mut(scale).fill(0.0);

    let x = Tensor::randn(&[2, 2, 12, 5], 1.0, &mut rng_from_seed(32));
    let alive = vec![true; 2];
    let run = |m: &mut Model<f64>| -> Result<Tensor<f64>> {
        let mut tape = Tape::new();
        let y = m.forward(&mut tape, x.clone(), &alive, false, &mut rng_from_seed(0))?;
        Ok(tape.value(y).clone())
    };
    let diff = run(&mut a)?.max_abs_diff(&run(&mut b)?);
    if diff > 1e-12 {
        return Err(Error::numerical(format!("silenced block changed logits by {diff:.2e}")));
    }
    Ok(format!("3-block vs 2-block logits agree (max |Δ| = {diff:.1e})"))
}

/// The profiler's closed-form parameter total, the store's scalar count,
/// and the number of scalars the optimizer touches must all agree.
fn optimizer_counts() -> Result<String> {
    let cfg = ModelConfig {
        num_classes: 4,
        num_joints: 5,
        in_channels: 2,
        max_persons: 1,
        base_channels: 8,
        num_blocks: 2,
        downsample_blocks: vec![2],
        groups: 4,
        ..ModelConfig::default()
    };
    let parents = chain_parents(5);
    let mut model = Model::<f64>::new(cfg.clone(), Some(&parents), 41)?;
    let profiled = cost_report(&cfg, &ProfileOptions::default())?.total_params;
    let stored = model.store.total_scalars();
    let stepped = sgd_momentum_step(&mut model.store, 0.0, 0.9, 0.0)?;
    if profiled != stored || stored != stepped {
        return Err(Error::numerical(format!(
            "profiler {profiled} vs store {stored} vs optimizer {stepped}"
        )));
    }
    Ok(format!("{profiled} scalars via all three routes"))
}

fn descent_step() -> Result<String> {
    let cfg = ModelConfig {
        num_classes: 4,
        num_joints: 5,
        in_channels: 2,
        max_persons: 1,
        base_channels: 8,
        num_blocks: 2,
        downsample_blocks: vec![2],
        groups: 4,
        ..ModelConfig::default()
    };
    let parents = chain_parents(5);
    let mut model = Model::<f64>::new(cfg, Some(&parents), 42)?;
    let mut rng = rng_from_seed(43);
    let x = Tensor::randn(&[4, 2, 8, 5], 0.8, &mut rng);
    let alive = vec![true; 4];
    let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..4)).collect();

    let loss_of = |m: &mut Model<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let logits = m.forward(&mut tape, x.clone(), &alive, true, &mut rng_from_seed(0))?;
        let loss = tape.cross_entropy(logits, &labels)?;
        Ok(tape.value(loss).data()[0])
    };
    let before = loss_of(&mut model)?;
    {
        let mut tape = Tape::new();
        let logits = model.forward(&mut tape, x.clone(), &alive, true, &mut rng_from_seed(0))?;
        let loss = tape.cross_entropy(logits, &labels)?;
        model.store.zero_grads();
        tape.backward(loss, Some(&mut model.store), &[])?;
    }
    sgd_momentum_step(&mut model.store, 1e-3, 0.0, 0.0)?;
    let after = loss_of(&mut model)?;
    if after >= before {
        return Err(Error::numerical(format!("loss {before:.6} -> {after:.6} did not descend")));
    }
    Ok(format!("loss {before:.4} -> {after:.4} at lr 1e-3"))
}

/// After a warm start, every learned gate and topology tensor must see a
/// nonzero gradient from a single backward pass.
fn gate_gradients() -> Result<String> {
    let cfg = ModelConfig {
        num_classes: 4,
        num_joints: 5,
        in_channels: 2,
        max_persons: 1,
        base_channels: 8,
        num_blocks: 2,
        downsample_blocks: vec![2],
        groups: 4,
        ..ModelConfig::default()
    };
    let parents = chain_parents(5);
    let mut model = Model::<f64>::new(cfg, Some(&parents), 44)?;
    warm_start_gates(&mut model.store, 45);
    let mut rng = rng_from_seed(46);
    let x = Tensor::randn(&[4, 2, 8, 5], 0.8, &mut rng);
    let alive = vec![true; 4];
    let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..4)).collect();

    let mut tape = Tape::new();
    let logits = model.forward(&mut tape, x, &alive, true, &mut rng_from_seed(0))?;
    let loss = tape.cross_entropy(logits, &labels)?;
    model.store.zero_grads();
    tape.backward(loss, Some(&mut model.store), &[])?;

    let suffixes = [".alpha", ".beta", ".gamma", ".pa", ".enc_a", ".enc_b"];
    let mut checked = 0;
    for (_, p) in model.store.iter() {
        if suffixes.iter().any(|s| p.name.ends_with(s)) {
            checked += 1;
            let linf = p.grad.data().iter().fold(0.0f64, |m, &g| m.max(g.abs()));
            if linf == 0.0 {
                return Err(Error::numerical(format!("'{}' received a zero gradient", p.name)));
            }
        }
    }
    if checked != 12 {
        return Err(Error::config(format!("expected 12 gate tensors, found {checked}")));
    }
    Ok(format!("{checked} gate/topology tensors all nonzero"))
}

/// Every published ablation axis: spatial flavors, component masks at
/// K in {4, 8, 12}, temporal flavors. Each configuration must build, train
/// one epoch on a small synthetic set, and profile — with the profiled
/// parameter total matching the store.
fn ablation_grid() -> Result<String> {
    let data = synth::generate(&SynthSpec {
        n_classes: 2,
        n_samples: 8,
        num_joints: 5,
        channels: 2,
        frames: 12,
        max_persons: 1,
        noise: 0.02,
        length_jitter: 0.2,
        seed: 5,
    })?;
    let parents = chain_parents(5);
    let base = ModelConfig {
        num_classes: 2,
        num_joints: 5,
        in_channels: 2,
        max_persons: 1,
        base_channels: 24,
        num_blocks: 2,
        downsample_blocks: vec![2],
        groups: 8,
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        epochs: 1,
        batch_size: 8,
        base_lr: 0.01,
        input_length: 8,
        ..TrainConfig::default()
    };

    let run = |label: String, cfg: ModelConfig| -> Result<()> {
        let wrap = |e: Error| Error::config(format!("{label}: {e}"));
        let mut model = Model::<f64>::new(cfg.clone(), Some(&parents), 51).map_err(wrap)?;
        train(&mut model, &data, &tc, |_| {}).map_err(wrap)?;
        let rep = cost_report(&cfg, &ProfileOptions::default()).map_err(wrap)?;
        if rep.total_params != model.store.total_scalars() {
            return Err(Error::numerical(format!(
                "{label}: profiler {} vs store {}",
                rep.total_params,
                model.store.total_scalars()
            )));
        }
        Ok(())
    };

    let mut count = 0;
    for (name, spatial) in [
        ("fixed", SpatialVariant::FixedTopology),
        ("refined", SpatialVariant::RefinedTopology),
        ("dynamic", SpatialVariant::DynamicGroup { mask: ComponentMask::FULL }),
    ] {
        run(format!("spatial {name}"), ModelConfig { spatial, ..base.clone() })?;
        count += 1;
    }
    for k in [4usize, 8, 12] {
        for (pa, da, ca) in [
            (true, false, false),
            (false, true, false),
            (false, false, true),
            (true, true, false),
            (true, false, true),
            (false, true, true),
            (true, true, true),
        ] {
            let mask = ComponentMask { pa, da, ca };
            let cfg = ModelConfig {
                groups: k,
                spatial: SpatialVariant::DynamicGroup { mask },
                ..base.clone()
            };
            run(format!("K={k} mask={}", mask.label()), cfg)?;
            count += 1;
        }
    }
    for (name, temporal, jsf) in [
        ("vanilla-k9", TemporalKind::VanillaK9, JsfMode::Off),
        ("multi-group", TemporalKind::MultiGroup, JsfMode::Off),
        ("jsf-sum", TemporalKind::MultiGroup, JsfMode::Sum),
        ("jsf-concat", TemporalKind::MultiGroup, JsfMode::Concat),
        ("d-jsf", TemporalKind::MultiGroup, JsfMode::Djsf),
    ] {
        run(format!("temporal {name}"), ModelConfig { temporal, jsf, ..base.clone() })?;
        count += 1;
    }
    Ok(format!("{count} configurations trained one epoch and profiled"))
}

fn checkpoint_determinism() -> Result<String> {
    let cfg = ModelConfig {
        num_classes: 4,
        num_joints: 5,
        in_channels: 2,
        max_persons: 1,
        base_channels: 8,
        num_blocks: 2,
        downsample_blocks: vec![2],
        groups: 4,
        ..ModelConfig::default()
    };
    let parents = chain_parents(5);
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    let dir = std::env::temp_dir();
    let path = |tag: &str| dir.join(format!("dgstgcn-selftest-{}-{stamp}-{tag}.dgw", std::process::id()));
    let (pa, pb, pc) = (path("a"), path("b"), path("c"));

    let result = (|| -> Result<String> {
        Model::<f64>::new(cfg.clone(), Some(&parents), 9)?.save(&pa)?;
        Model::<f64>::new(cfg.clone(), Some(&parents), 9)?.save(&pb)?;
        Model::<f64>::load(&pa)?.save(&pc)?;
        let (ba, bb, bc) = (std::fs::read(&pa)?, std::fs::read(&pb)?, std::fs::read(&pc)?);
        if ba != bb {
            return Err(Error::numerical("same-seed checkpoints differ"));
        }
        if ba != bc {
            return Err(Error::numerical("load -> save altered the bytes"));
        }
        Ok(format!("{} bytes, bit-identical across rebuild and round-trip", ba.len()))
    })();
    for p in [&pa, &pb, &pc] {
        let _ = std::fs::remove_file(p);
    }
    result
}
