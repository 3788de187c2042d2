//! Reverse-mode automatic differentiation over exactly the operator set the
//! network needs.
//!
//! Operations are recorded on a [`Tape`] during the forward pass and replayed
//! in reverse to accumulate gradients. The tape is append-only, so node order
//! is already a topological order and the backward sweep is a single reverse
//! iteration. Every operator's backward is validated against central finite
//! differences (see `gradcheck`).
//!
//! Activation layout convention: 4D tensors are `[N, C, T, V]` — batch,
//! channel, frame, joint — row-major.

use crate::error::{Error, Result};
use crate::tensor::{idx4, Rand, Scalar, Tensor};
use rand::Rng;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

/// Handle to a learnable parameter in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// A learnable tensor together with its gradient and momentum buffer.
/// The three tensors always share one shape.
#[derive(Clone, Debug)]
pub struct Parameter<E> {
    pub name: String,
    pub value: Tensor<E>,
    pub grad: Tensor<E>,
    pub momentum: Tensor<E>,
}

/// Ordered collection of all learnable parameters of a model. Order is
/// construction order and is the documented reduction/update order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<E> {
    params: Vec<Parameter<E>>,
}

impl<E: Scalar> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<E>) -> ParamId {
        let shape = value.shape().to_vec();
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad: Tensor::zeros(&shape),
            momentum: Tensor::zeros(&shape),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<E> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<E> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<E> {
        &self.params[id.0].grad
    }

    pub fn entry(&self, id: ParamId) -> &Parameter<E> {
        &self.params[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut Parameter<E> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<E>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter<E>)> {
        self.params
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total scalar count across all parameters.
    pub fn total_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.iter_mut() {
            p.grad.fill(E::zero());
        }
    }
}

/// Named non-learnable tensors (batch-norm running statistics). Saved in
/// checkpoints, never touched by the optimizer.
#[derive(Clone, Debug, Default)]
pub struct BufferStore<E> {
    buffers: Vec<(String, Tensor<E>)>,
}

/// Handle to a buffer in a [`BufferStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BufId(pub(crate) usize);

impl<E: Scalar> BufferStore<E> {
    pub fn new() -> Self {
        BufferStore {
            buffers: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<E>) -> BufId {
        self.buffers.push((name.into(), value));
        BufId(self.buffers.len() - 1)
    }

    pub fn value(&self, id: BufId) -> &Tensor<E> {
        &self.buffers[id.0].1
    }

    pub fn value_mut(&mut self, id: BufId) -> &mut Tensor<E> {
        &mut self.buffers[id.0].1
    }

    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }

    /// Mutable access to two distinct buffers at once (running mean + var).
    pub fn pair_mut(&mut self, a: BufId, b: BufId) -> (&mut Tensor<E>, &mut Tensor<E>) {
        assert_ne!(a.0, b.0, "pair_mut needs distinct buffers");
        if a.0 < b.0 {
            let (lo, hi) = self.buffers.split_at_mut(b.0);
            (&mut lo[a.0].1, &mut hi[0].1)
        } else {
            let (lo, hi) = self.buffers.split_at_mut(a.0);
            (&mut hi[0].1, &mut lo[b.0].1)
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &(String, Tensor<E>)> {
        self.buffers.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut (String, Tensor<E>)> {
        self.buffers.iter_mut()
    }
}

/// Which source produced a node; carries whatever the backward pass needs.
#[derive(Debug)]
enum Op<E> {
    Leaf,
    LeafParam {
        param: ParamId,
    },
    /// y[n,o,t,v] = sum_i w[o,i] x[n,i,t,v] (+ b[o])
    PointwiseConv {
        x: ValueId,
        w: ValueId,
        b: Option<ValueId>,
    },
    /// Per-joint 1D convolution along T with zero padding d*(k-1)/2.
    TemporalConv {
        x: ValueId,
        w: ValueId,
        kernel: usize,
        dilation: usize,
        stride: usize,
    },
    /// Max over [t*s-p, t*s-p+k) ignoring padded positions; argmax saved.
    TemporalMaxPool {
        x: ValueId,
        argmax: Vec<u32>,
    },
    /// y[t'] = x[t'*s]
    TemporalSubsample {
        x: ValueId,
        stride: usize,
    },
    Softmax {
        x: ValueId,
        axis: usize,
    },
    Tanh {
        x: ValueId,
    },
    Relu {
        x: ValueId,
    },
    /// Per-channel normalization of [N,C,T,V]; mean/invstd are the statistics
    /// actually used (batch stats in training, running stats in inference).
    BatchNorm {
        x: ValueId,
        scale: ValueId,
        shift: ValueId,
        mean: Vec<E>,
        invstd: Vec<E>,
        train: bool,
    },
    Add {
        a: ValueId,
        b: ValueId,
    },
    /// y[n,(g,c),t,v] = s[g] * x[n,(g,c),t,v] with s of length K.
    ScalePerGroup {
        x: ValueId,
        s: ValueId,
        groups: usize,
    },
    /// Literal spatial contraction: y[n,c,t,i] = sum_k sum_v a[k,v,i] x[n,(k,c),t,v].
    Eq1Mix {
        x: ValueId,
        a: ValueId,
        groups: usize,
    },
    /// Group-kept mixing: y[n,(g,c),t,i] = sum_v a[g,v,i] x[n,(g,c),t,v].
    GroupMixStatic {
        x: ValueId,
        a: ValueId,
        groups: usize,
    },
    /// Same with a per-sample matrix a[n,g,v,i].
    GroupMixDynamic {
        x: ValueId,
        a: ValueId,
        groups: usize,
    },
    /// Same with a per-sample per-channel matrix a[n,g,c,v,i].
    GroupMixChanwise {
        x: ValueId,
        a: ValueId,
        groups: usize,
    },
    /// [N,C,T,V] -> [N,C,1,V]
    MeanOverT {
        x: ValueId,
    },
    Reshape {
        x: ValueId,
    },
    /// Swap the last two axes: [N,C,T,V] <-> [N,C,V,T].
    TransposeTv {
        x: ValueId,
    },
    /// g[n,k,i,j] = sum_c xa[n,k,c,i] xb[n,k,c,j]
    PairGram {
        xa: ValueId,
        xb: ValueId,
    },
    /// d[n,k,c,i,j] = xa[n,k,c,i] - xb[n,k,c,j]
    PairDiff {
        xa: ValueId,
        xb: ValueId,
    },
    /// [N,C,T,V] -> [N,C,T,V+1]; appended column = mean over joints.
    AppendJointMean {
        x: ValueId,
    },
    /// y[..,i] = x[..,i] + gamma[i] * x[..,V]; drops the appended column.
    DjsfFuse {
        x: ValueId,
        gamma: ValueId,
    },
    /// [N,C,T,V+1] -> [N,2C,T,V]: joints, then the skeleton column broadcast.
    ConcatSkeleton {
        x: ValueId,
    },
    /// Channel slice [c0,c1).
    SliceC {
        x: ValueId,
        c0: usize,
        c1: usize,
    },
    ConcatC {
        xs: Vec<ValueId>,
    },
    /// [N,C,T,V] -> [N,C] mean over frames and joints.
    MeanTV {
        x: ValueId,
    },
    /// [R,C] -> [N,C]: mean over each sample's alive rows (R = N*m).
    PersonMean {
        x: ValueId,
        alive: Vec<bool>,
        persons: usize,
    },
    /// y = x w^T + b with x[N,C], w[O,C], b[O].
    Affine {
        x: ValueId,
        w: ValueId,
        b: ValueId,
    },
    Dropout {
        x: ValueId,
        keep: Vec<bool>,
        inv_keep_prob: E,
    },
    /// Mean over the batch of -log softmax(logits)[label].
    CrossEntropy {
        logits: ValueId,
        labels: Vec<usize>,
        probs: Tensor<E>,
    },
    /// Class-balanced focal loss; weights indexed by class.
    FocalLoss {
        logits: ValueId,
        labels: Vec<usize>,
        weights: Vec<E>,
        gamma: f64,
        probs: Tensor<E>,
    },
}

struct Node<E> {
    value: Tensor<E>,
    op: Op<E>,
}

/// Wengert tape: forward values plus enough saved state to run backward.
pub struct Tape<E> {
    nodes: Vec<Node<E>>,
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>) -> ValueId {
        self.nodes.push(Node { value, op });
        ValueId(self.nodes.len() - 1)
    }

    /// Record a constant or input tensor. Not differentiated against unless
    /// queried through `backward_leaves`.
    pub fn leaf(&mut self, value: Tensor<E>) -> ValueId {
        self.push(value, Op::Leaf)
    }

    /// Record the current value of a parameter; gradients flow back into the
    /// store on `backward_params`.
    pub fn param(&mut self, store: &ParamStore<E>, param: ParamId) -> ValueId {
        self.push(store.value(param).clone(), Op::LeafParam { param })
    }

    // ── Convolutions ────────────────────────────────────────────────────

    pub fn pointwise_conv(
        &mut self,
        x: ValueId,
        w: ValueId,
        b: Option<ValueId>,
    ) -> Result<ValueId> {
        let (xs, ws) = (self.value(x).shape().to_vec(), self.value(w).shape().to_vec());
        if xs.len() != 4 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::shape("pointwise_conv x vs w", &xs, &ws));
        }
        let (n, c_out, p) = (xs[0], ws[0], xs[2] * xs[3]);
        if let Some(b) = b {
            let bs = self.value(b).shape();
            if bs != [c_out] {
                return Err(Error::shape("pointwise_conv bias", bs, &[c_out]));
            }
        }
        let mut out = Tensor::zeros(&[n, c_out, xs[2], xs[3]]);
        {
            let xd = self.value(x).data();
            let wd = self.value(w).data();
            let bd = b.map(|b| self.value(b).data().to_vec());
            let od = out.data_mut();
            for ni in 0..n {
                for o in 0..c_out {
                    let plane = &mut od[(ni * c_out + o) * p..(ni * c_out + o + 1) * p];
                    if let Some(bd) = &bd {
                        plane.fill(bd[o]);
                    }
                    for i in 0..xs[1] {
                        let wv = wd[o * xs[1] + i];
                        if wv == E::zero() {
                            continue;
                        }
                        let xp = &xd[(ni * xs[1] + i) * p..(ni * xs[1] + i + 1) * p];
                        for (y, &xv) in plane.iter_mut().zip(xp) {
                            *y += wv * xv;
                        }
                    }
                }
            }
        }
        Ok(self.push(out, Op::PointwiseConv { x, w, b }))
    }

    pub fn temporal_conv(
        &mut self,
        x: ValueId,
        w: ValueId,
        kernel: usize,
        dilation: usize,
        stride: usize,
    ) -> Result<ValueId> {
        let (xs, ws) = (self.value(x).shape().to_vec(), self.value(w).shape().to_vec());
        if kernel % 2 == 0 {
            return Err(Error::config(format!(
                "temporal_conv kernel must be odd, got {kernel}"
            )));
        }
        if dilation < 1 {
            return Err(Error::config("temporal_conv dilation must be >= 1"));
        }
        if !(stride == 1 || stride == 2) {
            return Err(Error::config(format!(
                "temporal_conv stride must be 1 or 2, got {stride}"
            )));
        }
        if xs.len() != 4 || ws.len() != 3 || ws[1] != xs[1] || ws[2] != kernel {
            return Err(Error::shape("temporal_conv x vs w", &xs, &ws));
        }
        let (n, c_in, t, v) = (xs[0], xs[1], xs[2], xs[3]);
        let c_out = ws[0];
        let pad = dilation * (kernel - 1) / 2;
        let t_out = ceil_div(t, stride);
        let mut out = Tensor::zeros(&[n, c_out, t_out, v]);
        {
            let xd = self.value(x).data();
            let wd = self.value(w).data();
            let od = out.data_mut();
            for ni in 0..n {
                for o in 0..c_out {
                    let op_ = &mut od[(ni * c_out + o) * t_out * v..(ni * c_out + o + 1) * t_out * v];
                    for i in 0..c_in {
                        let xp = &xd[(ni * c_in + i) * t * v..(ni * c_in + i + 1) * t * v];
                        for j in 0..kernel {
                            let wv = wd[(o * c_in + i) * kernel + j];
                            if wv == E::zero() {
                                continue;
                            }
                            for to in 0..t_out {
                                let ti = (to * stride + j * dilation) as isize - pad as isize;
                                if ti < 0 || ti >= t as isize {
                                    continue;
                                }
                                let src = &xp[ti as usize * v..(ti as usize + 1) * v];
                                let dst = &mut op_[to * v..(to + 1) * v];
                                for (y, &xv) in dst.iter_mut().zip(src) {
                                    *y += wv * xv;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Op::TemporalConv {
                x,
                w,
                kernel,
                dilation,
                stride,
            },
        ))
    }

    /// Max over a length-`kernel` window along T; padded positions are
    /// excluded from the max so a constant input stays constant. Ties route
    /// to the earliest frame.
    pub fn temporal_max_pool(&mut self, x: ValueId, kernel: usize, stride: usize) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        if kernel % 2 == 0 {
            return Err(Error::config(format!(
                "temporal_max_pool kernel must be odd, got {kernel}"
            )));
        }
        if xs.len() != 4 {
            return Err(Error::shape("temporal_max_pool input", &xs, &[0, 0, 0, 0]));
        }
        let (n, c, t, v) = (xs[0], xs[1], xs[2], xs[3]);
        let pad = (kernel - 1) / 2;
        let t_out = ceil_div(t, stride);
        let mut out = Tensor::zeros(&[n, c, t_out, v]);
        let mut argmax = vec![0u32; n * c * t_out * v];
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            for nc in 0..n * c {
                let xp = &xd[nc * t * v..(nc + 1) * t * v];
                for to in 0..t_out {
                    let base = nc * t_out * v + to * v;
                    let mut first = true;
                    for j in 0..kernel {
                        let ti = (to * stride + j) as isize - pad as isize;
                        if ti < 0 || ti >= t as isize {
                            continue;
                        }
                        let src = &xp[ti as usize * v..(ti as usize + 1) * v];
                        if first {
                            for vi in 0..v {
                                od[base + vi] = src[vi];
                                argmax[base + vi] = ti as u32;
                            }
                            first = false;
                        } else {
                            for vi in 0..v {
                                if src[vi] > od[base + vi] {
                                    od[base + vi] = src[vi];
                                    argmax[base + vi] = ti as u32;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(out, Op::TemporalMaxPool { x, argmax }))
    }

    pub fn temporal_subsample(&mut self, x: ValueId, stride: usize) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        let (n, c, t, v) = (xs[0], xs[1], xs[2], xs[3]);
        let t_out = ceil_div(t, stride);
        let mut out = Tensor::zeros(&[n, c, t_out, v]);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            for nc in 0..n * c {
                for to in 0..t_out {
                    let src = nc * t * v + to * stride * v;
                    let dst = nc * t_out * v + to * v;
                    od[dst..dst + v].copy_from_slice(&xd[src..src + v]);
                }
            }
        }
        Ok(self.push(out, Op::TemporalSubsample { x, stride }))
    }

    // ── Pointwise nonlinearities and normalization ──────────────────────

    /// Numerically stable softmax along `axis`: per-slice max subtracted.
    pub fn softmax(&mut self, x: ValueId, axis: usize) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        if axis >= xs.len() {
            return Err(Error::config(format!(
                "softmax axis {axis} out of range for rank {}",
                xs.len()
            )));
        }
        let a = xs[axis];
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis + 1..].iter().product();
        let mut out = self.value(x).clone();
        {
            let od = out.data_mut();
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * a + k) * inner + i;
                    let mut m = od[at(0)];
                    for k in 1..a {
                        if od[at(k)] > m {
                            m = od[at(k)];
                        }
                    }
                    let mut sum = E::zero();
                    for k in 0..a {
                        let e = (od[at(k)] - m).exp();
                        od[at(k)] = e;
                        sum += e;
                    }
                    for k in 0..a {
                        od[at(k)] = od[at(k)] / sum;
                    }
                }
            }
        }
        Ok(self.push(out, Op::Softmax { x, axis }))
    }

    pub fn tanh(&mut self, x: ValueId) -> ValueId {
        let out = self.value(x).map(|v| v.tanh());
        self.push(out, Op::Tanh { x })
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let out = self.value(x).map(|v| if v > E::zero() { v } else { E::zero() });
        self.push(out, Op::Relu { x })
    }

    /// Batch normalization over `[N, C, T, V]` with per-channel statistics
    /// over N, T, V. In training mode the batch statistics (biased variance)
    /// are used and the running buffers are updated in place with momentum
    /// `bn_momentum`; in inference mode the running buffers are used.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: ValueId,
        scale: ValueId,
        shift: ValueId,
        running_mean: &mut Tensor<E>,
        running_var: &mut Tensor<E>,
        eps: f64,
        bn_momentum: f64,
        train: bool,
    ) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(Error::shape("batch_norm input", &xs, &[0, 0, 0, 0]));
        }
        let (n, c, t, v) = (xs[0], xs[1], xs[2], xs[3]);
        if self.value(scale).shape() != [c] || running_mean.shape() != [c] {
            return Err(Error::shape("batch_norm channel params", self.value(scale).shape(), &[c]));
        }
        let m = (n * t * v) as f64;
        let eps_e = E::from_f64(eps);

        let (mean, invstd): (Vec<E>, Vec<E>) = if train {
            let xd = self.value(x).data();
            let mut mean = vec![E::zero(); c];
            let mut var = vec![E::zero(); c];
            for ni in 0..n {
                for ci in 0..c {
                    let plane = &xd[(ni * c + ci) * t * v..(ni * c + ci + 1) * t * v];
                    let mut s = E::zero();
                    for &xv in plane {
                        s += xv;
                    }
                    mean[ci] += s;
                }
            }
            let inv_m = E::from_f64(1.0 / m);
            for mc in mean.iter_mut() {
                *mc *= inv_m;
            }
            for ni in 0..n {
                for ci in 0..c {
                    let plane = &xd[(ni * c + ci) * t * v..(ni * c + ci + 1) * t * v];
                    let mu = mean[ci];
                    let mut s = E::zero();
                    for &xv in plane {
                        let d = xv - mu;
                        s += d * d;
                    }
                    var[ci] += s;
                }
            }
            for vc in var.iter_mut() {
                *vc *= inv_m;
            }
            // exponential running-stat update
            let mom = E::from_f64(bn_momentum);
            let keep = E::from_f64(1.0 - bn_momentum);
            for ci in 0..c {
                let rm = running_mean.data_mut();
                rm[ci] = keep * rm[ci] + mom * mean[ci];
                let rv = running_var.data_mut();
                rv[ci] = keep * rv[ci] + mom * var[ci];
            }
            let invstd = var.iter().map(|&vv| (vv + eps_e).sqrt().recip()).collect();
            (mean, invstd)
        } else {
            let mean = running_mean.data().to_vec();
            let invstd = running_var
                .data()
                .iter()
                .map(|&vv| (vv + eps_e).sqrt().recip())
                .collect();
            (mean, invstd)
        };

        let mut out = Tensor::zeros(&xs);
        {
            let xd = self.value(x).data();
            let sc = self.value(scale).data();
            let sh = self.value(shift).data();
            let od = out.data_mut();
            for ni in 0..n {
                for ci in 0..c {
                    let (mu, is) = (mean[ci], invstd[ci]);
                    let (g, b) = (sc[ci], sh[ci]);
                    let base = (ni * c + ci) * t * v;
                    for k in 0..t * v {
                        od[base + k] = (xd[base + k] - mu) * is * g + b;
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                scale,
                shift,
                mean,
                invstd,
                train,
            },
        ))
    }

    // ── Arithmetic and reshaping ────────────────────────────────────────

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa != sb {
            return Err(Error::shape("add", &sa, &sb));
        }
        let mut out = self.value(a).clone();
        for (y, &bv) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *y += bv;
        }
        Ok(self.push(out, Op::Add { a, b }))
    }

    /// Multiply each channel group's slice by its scalar: `s` has length K.
    pub fn scale_per_group(&mut self, x: ValueId, s: ValueId, groups: usize) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        let c = xs[1];
        if self.value(s).shape() != [groups] || c % groups != 0 {
            return Err(Error::shape("scale_per_group", &xs, self.value(s).shape()));
        }
        let cg = c / groups;
        let p = xs[2] * xs[3];
        let mut out = self.value(x).clone();
        {
            let sd = self.value(s).data();
            let od = out.data_mut();
            for ni in 0..xs[0] {
                for ci in 0..c {
                    let sv = sd[ci / cg];
                    let base = (ni * c + ci) * p;
                    for y in od[base..base + p].iter_mut() {
                        *y *= sv;
                    }
                }
            }
        }
        Ok(self.push(out, Op::ScalePerGroup { x, s, groups }))
    }

    /// The literal spatial contraction: x is `[N, K*C, T, V]` viewed as K
    /// groups of C channels, a is `[K, V, V]` indexed (group, source joint,
    /// destination joint); output `[N, C, T, V]` sums over groups.
    pub fn eq1_mix(&mut self, x: ValueId, a: ValueId, groups: usize) -> Result<ValueId> {
        let (xs, as_) = (self.value(x).shape().to_vec(), self.value(a).shape().to_vec());
        let v = xs[3];
        if as_ != [groups, v, v] || xs[1] % groups != 0 {
            return Err(Error::shape("eq1_mix x vs a", &xs, &as_));
        }
        let (n, c, t) = (xs[0], xs[1] / groups, xs[2]);
        let mut out = Tensor::zeros(&[n, c, t, v]);
        {
            let xd = self.value(x).data();
            let ad = self.value(a).data();
            let od = out.data_mut();
            for ni in 0..n {
                for k in 0..groups {
                    for ci in 0..c {
                        let xp = &xd[((ni * groups + k) * c + ci) * t * v..][..t * v];
                        let op_ = &mut od[(ni * c + ci) * t * v..][..t * v];
                        for ti in 0..t {
                            for vi in 0..v {
                                let xv = xp[ti * v + vi];
                                if xv == E::zero() {
                                    continue;
                                }
                                let arow = &ad[(k * v + vi) * v..][..v];
                                let orow = &mut op_[ti * v..][..v];
                                for (y, &av) in orow.iter_mut().zip(arow) {
                                    *y += av * xv;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(out, Op::Eq1Mix { x, a, groups }))
    }

    /// Group-kept mixing with one static matrix per group; output keeps the
    /// grouped channel layout (concatenation semantics).
    pub fn group_mix_static(&mut self, x: ValueId, a: ValueId, groups: usize) -> Result<ValueId> {
        let (xs, as_) = (self.value(x).shape().to_vec(), self.value(a).shape().to_vec());
        let v = xs[3];
        if as_ != [groups, v, v] || xs[1] % groups != 0 {
            return Err(Error::shape("group_mix_static x vs a", &xs, &as_));
        }
        let (n, cg, t) = (xs[0], xs[1] / groups, xs[2]);
        let mut out = Tensor::zeros(&xs);
        {
            let xd = self.value(x).data();
            let ad = self.value(a).data();
            let od = out.data_mut();
            for ni in 0..n {
                for g in 0..groups {
                    for ci in 0..cg {
                        let base = ((ni * groups + g) * cg + ci) * t * v;
                        mix_plane(&xd[base..base + t * v], &ad[g * v * v..][..v * v], &mut od[base..base + t * v], t, v);
                    }
                }
            }
        }
        Ok(self.push(out, Op::GroupMixStatic { x, a, groups }))
    }

    /// Group-kept mixing with a per-sample matrix a[n,g,v,i].
    pub fn group_mix_dynamic(&mut self, x: ValueId, a: ValueId, groups: usize) -> Result<ValueId> {
        let (xs, as_) = (self.value(x).shape().to_vec(), self.value(a).shape().to_vec());
        let v = xs[3];
        if as_ != [xs[0], groups, v, v] || xs[1] % groups != 0 {
            return Err(Error::shape("group_mix_dynamic x vs a", &xs, &as_));
        }
        let (n, cg, t) = (xs[0], xs[1] / groups, xs[2]);
        let mut out = Tensor::zeros(&xs);
        {
            let xd = self.value(x).data();
            let ad = self.value(a).data();
            let od = out.data_mut();
            for ni in 0..n {
                for g in 0..groups {
                    let am = &ad[(ni * groups + g) * v * v..][..v * v];
                    for ci in 0..cg {
                        let base = ((ni * groups + g) * cg + ci) * t * v;
                        mix_plane(&xd[base..base + t * v], am, &mut od[base..base + t * v], t, v);
                    }
                }
            }
        }
        Ok(self.push(out, Op::GroupMixDynamic { x, a, groups }))
    }

    /// Group-kept mixing with a per-sample per-channel matrix a[n,g,c,v,i].
    pub fn group_mix_chanwise(&mut self, x: ValueId, a: ValueId, groups: usize) -> Result<ValueId> {
        let (xs, as_) = (self.value(x).shape().to_vec(), self.value(a).shape().to_vec());
        let v = xs[3];
        if xs[1] % groups != 0 || as_ != [xs[0], groups, xs[1] / groups, v, v] {
            return Err(Error::shape("group_mix_chanwise x vs a", &xs, &as_));
        }
        let (n, cg, t) = (xs[0], xs[1] / groups, xs[2]);
        let mut out = Tensor::zeros(&xs);
        {
            let xd = self.value(x).data();
            let ad = self.value(a).data();
            let od = out.data_mut();
            for ni in 0..n {
                for g in 0..groups {
                    for ci in 0..cg {
                        let am = &ad[((ni * groups + g) * cg + ci) * v * v..][..v * v];
                        let base = ((ni * groups + g) * cg + ci) * t * v;
                        mix_plane(&xd[base..base + t * v], am, &mut od[base..base + t * v], t, v);
                    }
                }
            }
        }
        Ok(self.push(out, Op::GroupMixChanwise { x, a, groups }))
    }

    pub fn mean_over_t(&mut self, x: ValueId) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        let (n, c, t, v) = (xs[0], xs[1], xs[2], xs[3]);
        let mut out = Tensor::zeros(&[n, c, 1, v]);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            let inv_t = E::from_f64(1.0 / t as f64);
            for nc in 0..n * c {
                for ti in 0..t {
                    for vi in 0..v {
                        od[nc * v + vi] += xd[nc * t * v + ti * v + vi];
                    }
                }
                for vi in 0..v {
                    od[nc * v + vi] *= inv_t;
                }
            }
        }
        Ok(self.push(out, Op::MeanOverT { x }))
    }

    pub fn reshape(&mut self, x: ValueId, shape: &[usize]) -> Result<ValueId> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape { x }))
    }

    /// Swap the last two axes of a 4D tensor.
    pub fn transpose_tv(&mut self, x: ValueId) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(Error::shape("transpose_tv input", &xs, &[0, 0, 0, 0]));
        }
        let (nc, t, v) = (xs[0] * xs[1], xs[2], xs[3]);
        let mut out = Tensor::zeros(&[xs[0], xs[1], v, t]);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            for b in 0..nc {
                for ti in 0..t {
                    for vi in 0..v {
                        od[b * t * v + vi * t + ti] = xd[b * t * v + ti * v + vi];
                    }
                }
            }
        }
        Ok(self.push(out, Op::TransposeTv { x }))
    }

    pub fn pair_gram(&mut self, xa: ValueId, xb: ValueId) -> Result<ValueId> {
        let (sa, sb) = (self.value(xa).shape().to_vec(), self.value(xb).shape().to_vec());
        if sa != sb || sa.len() != 4 {
            return Err(Error::shape("pair_gram", &sa, &sb));
        }
        let (n, k, cm, v) = (sa[0], sa[1], sa[2], sa[3]);
        let mut out = Tensor::zeros(&[n, k, v, v]);
        {
            let ad = self.value(xa).data();
            let bd = self.value(xb).data();
            let od = out.data_mut();
            for nk in 0..n * k {
                let gp = &mut od[nk * v * v..(nk + 1) * v * v];
                for c in 0..cm {
                    let ap = &ad[(nk * cm + c) * v..][..v];
                    let bp = &bd[(nk * cm + c) * v..][..v];
                    for i in 0..v {
                        let av = ap[i];
                        if av == E::zero() {
                            continue;
                        }
                        let row = &mut gp[i * v..(i + 1) * v];
                        for (y, &bv) in row.iter_mut().zip(bp) {
                            *y += av * bv;
                        }
                    }
                }
            }
        }
        Ok(self.push(out, Op::PairGram { xa, xb }))
    }

    pub fn pair_diff(&mut self, xa: ValueId, xb: ValueId) -> Result<ValueId> {
        let (sa, sb) = (self.value(xa).shape().to_vec(), self.value(xb).shape().to_vec());
        if sa != sb || sa.len() != 4 {
            return Err(Error::shape("pair_diff", &sa, &sb));
        }
        let (n, k, cm, v) = (sa[0], sa[1], sa[2], sa[3]);
        let mut out = Tensor::zeros(&[n, k, cm, v, v]);
        {
            let ad = self.value(xa).data();
            let bd = self.value(xb).data();
            let od = out.data_mut();
            for nkc in 0..n * k * cm {
                let ap = &ad[nkc * v..][..v];
                let bp = &bd[nkc * v..][..v];
                let dp = &mut od[nkc * v * v..(nkc + 1) * v * v];
                for i in 0..v {
                    let av = ap[i];
                    let row = &mut dp[i * v..(i + 1) * v];
                    for (y, &bv) in row.iter_mut().zip(bp) {
                        *y = av - bv;
                    }
                }
            }
        }
        Ok(self.push(out, Op::PairDiff { xa, xb }))
    }

    /// Append the joint-mean (skeleton-level) feature as a pseudo-joint.
    pub fn append_joint_mean(&mut self, x: ValueId) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        let (n, c, t, v) = (xs[0], xs[1], xs[2], xs[3]);
        let mut out = Tensor::zeros(&[n, c, t, v + 1]);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            let inv_v = E::from_f64(1.0 / v as f64);
            for nct in 0..n * c * t {
                let src = &xd[nct * v..][..v];
                let dst = &mut od[nct * (v + 1)..][..v + 1];
                let mut s = E::zero();
                for (y, &xv) in dst[..v].iter_mut().zip(src) {
                    *y = xv;
                    s += xv;
                }
                dst[v] = s * inv_v;
            }
        }
        Ok(self.push(out, Op::AppendJointMean { x }))
    }

    /// Joint-skeleton fusion: y[..,i] = x[..,i] + gamma[i] * x[..,V] where the
    /// last column of x is the skeleton-level feature.
    pub fn djsf_fuse(&mut self, x: ValueId, gamma: ValueId) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        let w = xs[3];
        if w < 2 || self.value(gamma).shape() != [w - 1] {
            return Err(Error::shape("djsf_fuse gamma", self.value(gamma).shape(), &[w.saturating_sub(1)]));
        }
        let v = w - 1;
        let (n, c, t) = (xs[0], xs[1], xs[2]);
        let mut out = Tensor::zeros(&[n, c, t, v]);
        {
            let xd = self.value(x).data();
            let gd = self.value(gamma).data();
            let od = out.data_mut();
            for nct in 0..n * c * t {
                let src = &xd[nct * w..][..w];
                let s = src[v];
                let dst = &mut od[nct * v..][..v];
                for i in 0..v {
                    dst[i] = src[i] + gd[i] * s;
                }
            }
        }
        Ok(self.push(out, Op::DjsfFuse { x, gamma }))
    }

    /// Concatenate the skeleton column onto every joint along channels:
    /// `[N,C,T,V+1] -> [N,2C,T,V]`.
    pub fn concat_skeleton(&mut self, x: ValueId) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        let w = xs[3];
        if w < 2 {
            return Err(Error::shape("concat_skeleton", &xs, &[0, 0, 0, 2]));
        }
        let v = w - 1;
        let (n, c, t) = (xs[0], xs[1], xs[2]);
        let mut out = Tensor::zeros(&[n, 2 * c, t, v]);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            for ni in 0..n {
                for ci in 0..c {
                    for ti in 0..t {
                        let src = &xd[idx4(&xs, ni, ci, ti, 0)..][..w];
                        let dj = (((ni * 2 * c) + ci) * t + ti) * v;
                        od[dj..dj + v].copy_from_slice(&src[..v]);
                        let ds = (((ni * 2 * c) + c + ci) * t + ti) * v;
                        for y in od[ds..ds + v].iter_mut() {
                            *y = src[v];
                        }
                    }
                }
            }
        }
        Ok(self.push(out, Op::ConcatSkeleton { x }))
    }

    pub fn slice_c(&mut self, x: ValueId, c0: usize, c1: usize) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        if c1 > xs[1] || c0 >= c1 {
            return Err(Error::config(format!(
                "slice_c [{c0},{c1}) out of range for C={}",
                xs[1]
            )));
        }
        let (n, c, p) = (xs[0], xs[1], xs[2] * xs[3]);
        let cs = c1 - c0;
        let mut out = Tensor::zeros(&[n, cs, xs[2], xs[3]]);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            for ni in 0..n {
                for ci in 0..cs {
                    let src = (ni * c + c0 + ci) * p;
                    let dst = (ni * cs + ci) * p;
                    od[dst..dst + p].copy_from_slice(&xd[src..src + p]);
                }
            }
        }
        Ok(self.push(out, Op::SliceC { x, c0, c1 }))
    }

    pub fn concat_c(&mut self, xs_in: &[ValueId]) -> Result<ValueId> {
        if xs_in.is_empty() {
            return Err(Error::config("concat_c needs at least one input"));
        }
        let first = self.value(xs_in[0]).shape().to_vec();
        let (n, t, v) = (first[0], first[2], first[3]);
        let mut c_total = 0;
        for &id in xs_in {
            let s = self.value(id).shape();
            if s.len() != 4 || s[0] != n || s[2] != t || s[3] != v {
                return Err(Error::shape("concat_c", &first, s));
            }
            c_total += s[1];
        }
        let p = t * v;
        let mut out = Tensor::zeros(&[n, c_total, t, v]);
        {
            let od = out.data_mut();
            let mut c_off = 0;
            for &id in xs_in {
                let s1 = self.value(id).dim(1);
                let xd = self.value(id).data();
                for ni in 0..n {
                    for ci in 0..s1 {
                        let src = (ni * s1 + ci) * p;
                        let dst = (ni * c_total + c_off + ci) * p;
                        od[dst..dst + p].copy_from_slice(&xd[src..src + p]);
                    }
                }
                c_off += s1;
            }
        }
        Ok(self.push(out, Op::ConcatC { xs: xs_in.to_vec() }))
    }

    // ── Head ────────────────────────────────────────────────────────────

    pub fn mean_tv(&mut self, x: ValueId) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        let (n, c, p) = (xs[0], xs[1], xs[2] * xs[3]);
        let mut out = Tensor::zeros(&[n, c]);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            let inv = E::from_f64(1.0 / p as f64);
            for nc in 0..n * c {
                let mut s = E::zero();
                for &xv in &xd[nc * p..(nc + 1) * p] {
                    s += xv;
                }
                od[nc] = s * inv;
            }
        }
        Ok(self.push(out, Op::MeanTV { x }))
    }

    /// Rows of x are persons grouped per sample (`persons` consecutive rows
    /// each); averages each sample's alive rows. A sample with no alive
    /// person is treated as having person 0 alive.
    pub fn person_mean(&mut self, x: ValueId, alive: &[bool], persons: usize) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 || xs[0] != alive.len() || alive.len() % persons != 0 {
            return Err(Error::shape("person_mean", &xs, &[alive.len()]));
        }
        let (c, n) = (xs[1], alive.len() / persons);
        let mut alive = alive.to_vec();
        for ni in 0..n {
            if !alive[ni * persons..(ni + 1) * persons].iter().any(|&a| a) {
                alive[ni * persons] = true;
            }
        }
        let mut out = Tensor::zeros(&[n, c]);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            for ni in 0..n {
                let count = alive[ni * persons..(ni + 1) * persons]
                    .iter()
                    .filter(|&&a| a)
                    .count();
                let inv = E::from_f64(1.0 / count as f64);
                for mi in 0..persons {
                    if !alive[ni * persons + mi] {
                        continue;
                    }
                    let src = &xd[(ni * persons + mi) * c..][..c];
                    let dst = &mut od[ni * c..][..c];
                    for (y, &xv) in dst.iter_mut().zip(src) {
                        *y += xv * inv;
                    }
                }
            }
        }
        Ok(self.push(out, Op::PersonMean { x, alive, persons }))
    }

    pub fn affine(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
        let (xs, ws) = (self.value(x).shape().to_vec(), self.value(w).shape().to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || self.value(b).shape() != [ws[0]] {
            return Err(Error::shape("affine x vs w", &xs, &ws));
        }
        let (n, c, o) = (xs[0], xs[1], ws[0]);
        let mut out = Tensor::zeros(&[n, o]);
        {
            let xd = self.value(x).data();
            let wd = self.value(w).data();
            let bd = self.value(b).data();
            let od = out.data_mut();
            for ni in 0..n {
                for oi in 0..o {
                    let mut s = bd[oi];
                    let wrow = &wd[oi * c..][..c];
                    let xrow = &xd[ni * c..][..c];
                    for (wv, xv) in wrow.iter().zip(xrow) {
                        s += *wv * *xv;
                    }
                    od[ni * o + oi] = s;
                }
            }
        }
        Ok(self.push(out, Op::Affine { x, w, b }))
    }

    /// Inverted dropout with the given keep probability complement `rate`.
    pub fn dropout(&mut self, x: ValueId, rate: f64, rng: &mut Rand) -> Result<ValueId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0,1)")));
        }
        if rate == 0.0 {
            // no-op; still recorded for uniform graphs
        }
        let n = self.value(x).numel();
        let keep: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() >= rate).collect();
        let inv = E::from_f64(1.0 / (1.0 - rate));
        let mut out = self.value(x).clone();
        for (y, &k) in out.data_mut().iter_mut().zip(keep.iter()) {
            *y = if k { *y * inv } else { E::zero() };
        }
        Ok(self.push(
            out,
            Op::Dropout {
                x,
                keep,
                inv_keep_prob: inv,
            },
        ))
    }

    // ── Losses ──────────────────────────────────────────────────────────

    /// Mean of -log softmax(logits)[label]; log-sum-exp stabilized.
    pub fn cross_entropy(&mut self, logits: ValueId, labels: &[usize]) -> Result<ValueId> {
        let (probs, loss) = self.softmax_nll(logits, labels, None, 0.0)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Class-balanced focal loss: mean of -w[y] (1-p)^gamma log p. `weights`
    /// is indexed by class and must have mean 1 for comparability with
    /// cross-entropy (the caller normalizes).
    pub fn focal_loss(
        &mut self,
        logits: ValueId,
        labels: &[usize],
        weights: &[E],
        gamma: f64,
    ) -> Result<ValueId> {
        let n_classes = self.value(logits).dim(1);
        if weights.len() != n_classes {
            return Err(Error::shape("focal_loss weights", &[weights.len()], &[n_classes]));
        }
        let (probs, loss) = self.softmax_nll(logits, labels, Some(weights), gamma)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::FocalLoss {
                logits,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
                gamma,
                probs,
            },
        ))
    }

    fn softmax_nll(
        &self,
        logits: ValueId,
        labels: &[usize],
        weights: Option<&[E]>,
        gamma: f64,
    ) -> Result<(Tensor<E>, E)> {
        let ls = self.value(logits).shape().to_vec();
        if ls.len() != 2 || ls[0] != labels.len() {
            return Err(Error::shape("loss logits vs labels", &ls, &[labels.len()]));
        }
        let (n, c) = (ls[0], ls[1]);
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::data(format!(
                    "label {y} out of range for {c} classes (sample {i})"
                )));
            }
        }
        let ld = self.value(logits).data();
        let mut probs = Tensor::zeros(&[n, c]);
        let mut total = E::zero();
        {
            let pd = probs.data_mut();
            for ni in 0..n {
                let row = &ld[ni * c..][..c];
                let m = row.iter().cloned().fold(row[0], E::max);
                let mut sum = E::zero();
                for (j, &z) in row.iter().enumerate() {
                    let e = (z - m).exp();
                    pd[ni * c + j] = e;
                    sum += e;
                }
                let log_sum = sum.ln();
                for j in 0..c {
                    pd[ni * c + j] = pd[ni * c + j] / sum;
                }
                let y = labels[ni];
                let log_p = (row[y] - m) - log_sum;
                let term = match weights {
                    None => -log_p,
                    Some(w) => {
                        let p = pd[ni * c + y];
                        let one = E::one();
                        -w[y] * (one - p).powf(E::from_f64(gamma)) * log_p
                    }
                };
                total += term;
            }
        }
        Ok((probs, total / E::from_f64(n as f64)))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Run the backward sweep from a scalar `loss`. Gradients for parameter
    /// leaves are accumulated into `store`; gradients for the requested
    /// `leaves` are returned in order. A leaf not reached by the sweep gets a
    /// zero gradient.
    pub fn backward(
        &self,
        loss: ValueId,
        store: Option<&mut ParamStore<E>>,
        leaves: &[ValueId],
    ) -> Result<Vec<Tensor<E>>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::config("backward: loss must be scalar"));
        }
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(E::one()));

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &gy, &mut grads)?;
            grads[idx] = Some(gy);
        }

        if let Some(store) = store {
            for (idx, node) in self.nodes.iter().enumerate() {
                if let Op::LeafParam { param } = node.op {
                    if let Some(g) = &grads[idx] {
                        let dst = &mut store.entry_mut(param).grad;
                        for (a, &b) in dst.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                }
            }
        }

        Ok(leaves
            .iter()
            .map(|&id| {
                grads[id.0]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(self.value(id).shape()))
            })
            .collect())
    }

    fn backprop_node(
        &self,
        idx: usize,
        gy: &Tensor<E>,
        grads: &mut [Option<Tensor<E>>],
    ) -> Result<()> {
        let node = &self.nodes[idx];
        macro_rules! shape_of {
            ($id:expr) => {
                self.nodes[$id.0].value.shape().to_vec()
            };
        }

        match &node.op {
            Op::Leaf | Op::LeafParam { .. } => {}

            Op::PointwiseConv { x, w, b } => {
                let xs = shape_of!(*x);
                let ws = shape_of!(*w);
                let (n, c_in, c_out, p) = (xs[0], xs[1], ws[0], xs[2] * xs[3]);
                let xd = self.nodes[x.0].value.data();
                let wd = self.nodes[w.0].value.data();
                let gd = gy.data();
                {
                    let gx = grad_slot(grads, *x, &xs);
                    let gxd = gx.data_mut();
                    for ni in 0..n {
                        for i in 0..c_in {
                            let dst = &mut gxd[(ni * c_in + i) * p..][..p];
                            for o in 0..c_out {
                                let wv = wd[o * c_in + i];
                                if wv == E::zero() {
                                    continue;
                                }
                                let src = &gd[(ni * c_out + o) * p..][..p];
                                for (y, &g) in dst.iter_mut().zip(src) {
                                    *y += wv * g;
                                }
                            }
                        }
                    }
                }
                {
                    let gw = grad_slot(grads, *w, &ws);
                    let gwd = gw.data_mut();
                    for ni in 0..n {
                        for o in 0..c_out {
                            let gp = &gd[(ni * c_out + o) * p..][..p];
                            for i in 0..c_in {
                                let xp = &xd[(ni * c_in + i) * p..][..p];
                                let mut s = E::zero();
                                for (&g, &xv) in gp.iter().zip(xp) {
                                    s += g * xv;
                                }
                                gwd[o * c_in + i] += s;
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    let gb = grad_slot(grads, *b, &[c_out]);
                    let gbd = gb.data_mut();
                    for ni in 0..n {
                        for o in 0..c_out {
                            let gp = &gd[(ni * c_out + o) * p..][..p];
                            let mut s = E::zero();
                            for &g in gp {
                                s += g;
                            }
                            gbd[o] += s;
                        }
                    }
                }
            }

            Op::TemporalConv {
                x,
                w,
                kernel,
                dilation,
                stride,
            } => {
                let xs = shape_of!(*x);
                let ws = shape_of!(*w);
                let (n, c_in, t, v) = (xs[0], xs[1], xs[2], xs[3]);
                let c_out = ws[0];
                let t_out = gy.dim(2);
                let pad = dilation * (kernel - 1) / 2;
                let xd = self.nodes[x.0].value.data();
                let wd = self.nodes[w.0].value.data();
                let gd = gy.data();
                {
                    let gx = grad_slot(grads, *x, &xs);
                    let gxd = gx.data_mut();
                    for ni in 0..n {
                        for o in 0..c_out {
                            let gp = &gd[(ni * c_out + o) * t_out * v..][..t_out * v];
                            for i in 0..c_in {
                                let dst = &mut gxd[(ni * c_in + i) * t * v..][..t * v];
                                for j in 0..*kernel {
                                    let wv = wd[(o * c_in + i) * kernel + j];
                                    if wv == E::zero() {
                                        continue;
                                    }
                                    for to in 0..t_out {
                                        let ti = (to * stride + j * dilation) as isize - pad as isize;
                                        if ti < 0 || ti >= t as isize {
                                            continue;
                                        }
                                        let src = &gp[to * v..][..v];
                                        let drow = &mut dst[ti as usize * v..][..v];
                                        for (y, &g) in drow.iter_mut().zip(src) {
                                            *y += wv * g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                {
                    let gw = grad_slot(grads, *w, &ws);
                    let gwd = gw.data_mut();
                    for ni in 0..n {
                        for o in 0..c_out {
                            let gp = &gd[(ni * c_out + o) * t_out * v..][..t_out * v];
                            for i in 0..c_in {
                                let xp = &xd[(ni * c_in + i) * t * v..][..t * v];
                                for j in 0..*kernel {
                                    let mut s = E::zero();
                                    for to in 0..t_out {
                                        let ti = (to * stride + j * dilation) as isize - pad as isize;
                                        if ti < 0 || ti >= t as isize {
                                            continue;
                                        }
                                        let grow = &gp[to * v..][..v];
                                        let xrow = &xp[ti as usize * v..][..v];
                                        for (&g, &xv) in grow.iter().zip(xrow) {
                                            s += g * xv;
                                        }
                                    }
                                    gwd[(o * c_in + i) * kernel + j] += s;
                                }
                            }
                        }
                    }
                }
            }

            Op::TemporalMaxPool { x, argmax } => {
                let xs = shape_of!(*x);
                let (t, v) = (xs[2], xs[3]);
                let t_out = gy.dim(2);
                let nc = xs[0] * xs[1];
                let gd = gy.data();
                let gx = grad_slot(grads, *x, &xs);
                let gxd = gx.data_mut();
                for b in 0..nc {
                    for to in 0..t_out {
                        for vi in 0..v {
                            let gi = b * t_out * v + to * v + vi;
                            let ti = argmax[gi] as usize;
                            gxd[b * t * v + ti * v + vi] += gd[gi];
                        }
                    }
                }
            }

            Op::TemporalSubsample { x, stride } => {
                let xs = shape_of!(*x);
                let (t, v) = (xs[2], xs[3]);
                let t_out = gy.dim(2);
                let nc = xs[0] * xs[1];
                let gd = gy.data();
                let gx = grad_slot(grads, *x, &xs);
                let gxd = gx.data_mut();
                for b in 0..nc {
                    for to in 0..t_out {
                        let src = b * t_out * v + to * v;
                        let dst = b * t * v + to * stride * v;
                        for vi in 0..v {
                            gxd[dst + vi] += gd[src + vi];
                        }
                    }
                }
            }

            Op::Softmax { x, axis } => {
                let y = &node.value;
                let xs = y.shape().to_vec();
                let a = xs[*axis];
                let outer: usize = xs[..*axis].iter().product();
                let inner: usize = xs[*axis + 1..].iter().product();
                let yd = y.data();
                let gd = gy.data();
                let gx = grad_slot(grads, *x, &xs);
                let gxd = gx.data_mut();
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * a + k) * inner + i;
                        let mut dot = E::zero();
                        for k in 0..a {
                            dot += gd[at(k)] * yd[at(k)];
                        }
                        for k in 0..a {
                            gxd[at(k)] += yd[at(k)] * (gd[at(k)] - dot);
                        }
                    }
                }
            }

            Op::Tanh { x } => {
                let y = node.value.data();
                let gd = gy.data();
                let gx = grad_slot(grads, *x, node.value.shape());
                for ((d, &yv), &g) in gx.data_mut().iter_mut().zip(y).zip(gd) {
                    *d += g * (E::one() - yv * yv);
                }
            }

            Op::Relu { x } => {
                let xv = self.nodes[x.0].value.data();
                let gd = gy.data();
                let gx = grad_slot(grads, *x, node.value.shape());
                for ((d, &xi), &g) in gx.data_mut().iter_mut().zip(xv).zip(gd) {
                    if xi > E::zero() {
                        *d += g;
                    }
                }
            }

            Op::BatchNorm {
                x,
                scale,
                shift,
                mean,
                invstd,
                train,
            } => {
                let xs = shape_of!(*x);
                let (n, c, t, v) = (xs[0], xs[1], xs[2], xs[3]);
                let m = (n * t * v) as f64;
                let xd = self.nodes[x.0].value.data();
                let sc = self.nodes[scale.0].value.data();
                let gd = gy.data();
                // per-channel sums of g and g*xhat
                let mut sum_g = vec![E::zero(); c];
                let mut sum_gx = vec![E::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * t * v;
                        let (mu, is) = (mean[ci], invstd[ci]);
                        let mut sg = E::zero();
                        let mut sgx = E::zero();
                        for k in 0..t * v {
                            let g = gd[base + k];
                            sg += g;
                            sgx += g * (xd[base + k] - mu) * is;
                        }
                        sum_g[ci] += sg;
                        sum_gx[ci] += sgx;
                    }
                }
                {
                    let gsc = grad_slot(grads, *scale, &[c]);
                    for (d, &s) in gsc.data_mut().iter_mut().zip(sum_gx.iter()) {
                        *d += s;
                    }
                }
                {
                    let gsh = grad_slot(grads, *shift, &[c]);
                    for (d, &s) in gsh.data_mut().iter_mut().zip(sum_g.iter()) {
                        *d += s;
                    }
                }
                {
                    let gx = grad_slot(grads, *x, &xs);
                    let gxd = gx.data_mut();
                    let inv_m = E::from_f64(1.0 / m);
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * t * v;
                            let (mu, is) = (mean[ci], invstd[ci]);
                            let g_scale = sc[ci] * is;
                            if *train {
                                for k in 0..t * v {
                                    let g = gd[base + k];
                                    let xhat = (xd[base + k] - mu) * is;
                                    gxd[base + k] +=
                                        g_scale * (g - (sum_g[ci] + xhat * sum_gx[ci]) * inv_m);
                                }
                            } else {
                                for k in 0..t * v {
                                    gxd[base + k] += g_scale * gd[base + k];
                                }
                            }
                        }
                    }
                }
            }

            Op::Add { a, b } => {
                for &p in [a, b].iter() {
                    let gp = grad_slot(grads, *p, node.value.shape());
                    for (d, &g) in gp.data_mut().iter_mut().zip(gy.data()) {
                        *d += g;
                    }
                }
            }

            Op::ScalePerGroup { x, s, groups } => {
                let xs = shape_of!(*x);
                let (n, c, p) = (xs[0], xs[1], xs[2] * xs[3]);
                let cg = c / groups;
                let xd = self.nodes[x.0].value.data();
                let sd = self.nodes[s.0].value.data();
                let gd = gy.data();
                {
                    let gx = grad_slot(grads, *x, &xs);
                    let gxd = gx.data_mut();
                    for ni in 0..n {
                        for ci in 0..c {
                            let sv = sd[ci / cg];
                            let base = (ni * c + ci) * p;
                            for k in 0..p {
                                gxd[base + k] += sv * gd[base + k];
                            }
                        }
                    }
                }
                {
                    let gs = grad_slot(grads, *s, &[*groups]);
                    let gsd = gs.data_mut();
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * p;
                            let mut acc = E::zero();
                            for k in 0..p {
                                acc += xd[base + k] * gd[base + k];
                            }
                            gsd[ci / cg] += acc;
                        }
                    }
                }
            }

            Op::Eq1Mix { x, a, groups } => {
                let xs = shape_of!(*x);
                let as_ = shape_of!(*a);
                let v = xs[3];
                let (n, c, t) = (xs[0], xs[1] / groups, xs[2]);
                let xd = self.nodes[x.0].value.data();
                let ad = self.nodes[a.0].value.data();
                let gd = gy.data();
                {
                    let gx = grad_slot(grads, *x, &xs);
                    let gxd = gx.data_mut();
                    for ni in 0..n {
                        for k in 0..*groups {
                            for ci in 0..c {
                                let gp = &gd[(ni * c + ci) * t * v..][..t * v];
                                let dst = &mut gxd[((ni * groups + k) * c + ci) * t * v..][..t * v];
                                for ti in 0..t {
                                    for vi in 0..v {
                                        let arow = &ad[(k * v + vi) * v..][..v];
                                        let grow = &gp[ti * v..][..v];
                                        let mut s = E::zero();
                                        for (&av, &g) in arow.iter().zip(grow) {
                                            s += av * g;
                                        }
                                        dst[ti * v + vi] += s;
                                    }
                                }
                            }
                        }
                    }
                }
                {
                    let ga = grad_slot(grads, *a, &as_);
                    let gad = ga.data_mut();
                    for ni in 0..n {
                        for k in 0..*groups {
                            for ci in 0..c {
                                let xp = &xd[((ni * groups + k) * c + ci) * t * v..][..t * v];
                                let gp = &gd[(ni * c + ci) * t * v..][..t * v];
                                for ti in 0..t {
                                    for vi in 0..v {
                                        let xv = xp[ti * v + vi];
                                        if xv == E::zero() {
                                            continue;
                                        }
                                        let grow = &gp[ti * v..][..v];
                                        let dst = &mut gad[(k * v + vi) * v..][..v];
                                        for (d, &g) in dst.iter_mut().zip(grow) {
                                            *d += xv * g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }

            Op::GroupMixStatic { x, a, groups } => {
                let xs = shape_of!(*x);
                let as_ = shape_of!(*a);
                let v = xs[3];
                let (n, cg, t) = (xs[0], xs[1] / groups, xs[2]);
                let xd = self.nodes[x.0].value.data();
                let ad = self.nodes[a.0].value.data();
                let gd = gy.data();
                {
                    let gx = grad_slot(grads, *x, &xs);
                    let gxd = gx.data_mut();
                    for ni in 0..n {
                        for g in 0..*groups {
                            let am = &ad[g * v * v..][..v * v];
                            for ci in 0..cg {
                                let base = ((ni * groups + g) * cg + ci) * t * v;
                                mix_plane_backward_x(&gd[base..base + t * v], am, &mut gxd[base..base + t * v], t, v);
                            }
                        }
                    }
                }
                {
                    let ga = grad_slot(grads, *a, &as_);
                    let gad = ga.data_mut();
                    for ni in 0..n {
                        for g in 0..*groups {
                            let am = &mut gad[g * v * v..][..v * v];
                            for ci in 0..cg {
                                let base = ((ni * groups + g) * cg + ci) * t * v;
                                mix_plane_backward_a(&xd[base..base + t * v], &gd[base..base + t * v], am, t, v);
                            }
                        }
                    }
                }
            }

            Op::GroupMixDynamic { x, a, groups } => {
                let xs = shape_of!(*x);
                let as_ = shape_of!(*a);
                let v = xs[3];
                let (n, cg, t) = (xs[0], xs[1] / groups, xs[2]);
                let xd = self.nodes[x.0].value.data();
                let ad = self.nodes[a.0].value.data();
                let gd = gy.data();
                {
                    let gx = grad_slot(grads, *x, &xs);
                    let gxd = gx.data_mut();
                    for ni in 0..n {
                        for g in 0..*groups {
                            let am = &ad[(ni * groups + g) * v * v..][..v * v];
                            for ci in 0..cg {
                                let base = ((ni * groups + g) * cg + ci) * t * v;
                                mix_plane_backward_x(&gd[base..base + t * v], am, &mut gxd[base..base + t * v], t, v);
                            }
                        }
                    }
                }
                {
                    let ga = grad_slot(grads, *a, &as_);
                    let gad = ga.data_mut();
                    for ni in 0..n {
                        for g in 0..*groups {
                            let am = &mut gad[(ni * groups + g) * v * v..][..v * v];
                            for ci in 0..cg {
                                let base = ((ni * groups + g) * cg + ci) * t * v;
                                mix_plane_backward_a(&xd[base..base + t * v], &gd[base..base + t * v], am, t, v);
                            }
                        }
                    }
                }
            }

            Op::GroupMixChanwise { x, a, groups } => {
                let xs = shape_of!(*x);
                let as_ = shape_of!(*a);
                let v = xs[3];
                let (n, cg, t) = (xs[0], xs[1] / groups, xs[2]);
                let xd = self.nodes[x.0].value.data();
                let ad = self.nodes[a.0].value.data();
                let gd = gy.data();
                {
                    let gx = grad_slot(grads, *x, &xs);
                    let gxd = gx.data_mut();
                    for ni in 0..n {
                        for g in 0..*groups {
                            for ci in 0..cg {
                                let am = &ad[((ni * groups + g) * cg + ci) * v * v..][..v * v];
                                let base = ((ni * groups + g) * cg + ci) * t * v;
                                mix_plane_backward_x(&gd[base..base + t * v], am, &mut gxd[base..base + t * v], t, v);
                            }
                        }
                    }
                }
                {
                    let ga = grad_slot(grads, *a, &as_);
                    let gad = ga.data_mut();
                    for ni in 0..n {
                        for g in 0..*groups {
                            for ci in 0..cg {
                                let am = &mut gad[((ni * groups + g) * cg + ci) * v * v..][..v * v];
                                let base = ((ni * groups + g) * cg + ci) * t * v;
                                mix_plane_backward_a(&xd[base..base + t * v], &gd[base..base + t * v], am, t, v);
                            }
                        }
                    }
                }
            }

            Op::MeanOverT { x } => {
                let xs = shape_of!(*x);
                let (t, v) = (xs[2], xs[3]);
                let nc = xs[0] * xs[1];
                let gd = gy.data();
                let gx = grad_slot(grads, *x, &xs);
                let gxd = gx.data_mut();
                let inv_t = E::from_f64(1.0 / t as f64);
                for b in 0..nc {
                    for ti in 0..t {
                        for vi in 0..v {
                            gxd[b * t * v + ti * v + vi] += gd[b * v + vi] * inv_t;
                        }
                    }
                }
            }

            Op::Reshape { x } => {
                let xs = shape_of!(*x);
                let gx = grad_slot(grads, *x, &xs);
                for (d, &g) in gx.data_mut().iter_mut().zip(gy.data()) {
                    *d += g;
                }
            }

            Op::TransposeTv { x } => {
                let xs = shape_of!(*x);
                let (nc, t, v) = (xs[0] * xs[1], xs[2], xs[3]);
                let gd = gy.data();
                let gx = grad_slot(grads, *x, &xs);
                let gxd = gx.data_mut();
                for b in 0..nc {
                    for ti in 0..t {
                        for vi in 0..v {
                            gxd[b * t * v + ti * v + vi] += gd[b * t * v + vi * t + ti];
                        }
                    }
                }
            }

            Op::PairGram { xa, xb } => {
                let sa = shape_of!(*xa);
                let (n, k, cm, v) = (sa[0], sa[1], sa[2], sa[3]);
                let ad = self.nodes[xa.0].value.data();
                let bd = self.nodes[xb.0].value.data();
                let gd = gy.data();
                {
                    let gxa = grad_slot(grads, *xa, &sa);
                    let gad = gxa.data_mut();
                    for nk in 0..n * k {
                        let gp = &gd[nk * v * v..][..v * v];
                        for c in 0..cm {
                            let bp = &bd[(nk * cm + c) * v..][..v];
                            let dst = &mut gad[(nk * cm + c) * v..][..v];
                            for i in 0..v {
                                let grow = &gp[i * v..][..v];
                                let mut s = E::zero();
                                for (&g, &bv) in grow.iter().zip(bp) {
                                    s += g * bv;
                                }
                                dst[i] += s;
                            }
                        }
                    }
                }
                {
                    let gxb = grad_slot(grads, *xb, &sa);
                    let gbd = gxb.data_mut();
                    for nk in 0..n * k {
                        let gp = &gd[nk * v * v..][..v * v];
                        for c in 0..cm {
                            let ap = &ad[(nk * cm + c) * v..][..v];
                            let dst = &mut gbd[(nk * cm + c) * v..][..v];
                            for i in 0..v {
                                let av = ap[i];
                                if av == E::zero() {
                                    continue;
                                }
                                let grow = &gp[i * v..][..v];
                                for (d, &g) in dst.iter_mut().zip(grow) {
                                    *d += av * g;
                                }
                            }
                        }
                    }
                }
            }

            Op::PairDiff { xa, xb } => {
                let sa = shape_of!(*xa);
                let (n, k, cm, v) = (sa[0], sa[1], sa[2], sa[3]);
                let gd = gy.data();
                {
                    let gxa = grad_slot(grads, *xa, &sa);
                    let gad = gxa.data_mut();
                    for nkc in 0..n * k * cm {
                        let gp = &gd[nkc * v * v..][..v * v];
                        let dst = &mut gad[nkc * v..][..v];
                        for i in 0..v {
                            let mut s = E::zero();
                            for &g in &gp[i * v..][..v] {
                                s += g;
                            }
                            dst[i] += s;
                        }
                    }
                }
                {
                    let gxb = grad_slot(grads, *xb, &sa);
                    let gbd = gxb.data_mut();
                    for nkc in 0..n * k * cm {
                        let gp = &gd[nkc * v * v..][..v * v];
                        let dst = &mut gbd[nkc * v..][..v];
                        for i in 0..v {
                            let grow = &gp[i * v..][..v];
                            for (d, &g) in dst.iter_mut().zip(grow) {
                                *d -= g;
                            }
                        }
                    }
                }
            }

            Op::AppendJointMean { x } => {
                let xs = shape_of!(*x);
                let v = xs[3];
                let nct = xs[0] * xs[1] * xs[2];
                let gd = gy.data();
                let gx = grad_slot(grads, *x, &xs);
                let gxd = gx.data_mut();
                let inv_v = E::from_f64(1.0 / v as f64);
                for b in 0..nct {
                    let grow = &gd[b * (v + 1)..][..v + 1];
                    let mean_g = grow[v] * inv_v;
                    let dst = &mut gxd[b * v..][..v];
                    for (d, &g) in dst.iter_mut().zip(&grow[..v]) {
                        *d += g + mean_g;
                    }
                }
            }

            Op::DjsfFuse { x, gamma } => {
                let xs = shape_of!(*x);
                let w = xs[3];
                let v = w - 1;
                let nct = xs[0] * xs[1] * xs[2];
                let xd = self.nodes[x.0].value.data();
                let gad = self.nodes[gamma.0].value.data();
                let gd = gy.data();
                {
                    let gx = grad_slot(grads, *x, &xs);
                    let gxd = gx.data_mut();
                    for b in 0..nct {
                        let grow = &gd[b * v..][..v];
                        let dst = &mut gxd[b * w..][..w];
                        let mut s = E::zero();
                        for i in 0..v {
                            dst[i] += grow[i];
                            s += gad[i] * grow[i];
                        }
                        dst[v] += s;
                    }
                }
                {
                    let gg = grad_slot(grads, *gamma, &[v]);
                    let ggd = gg.data_mut();
                    for b in 0..nct {
                        let grow = &gd[b * v..][..v];
                        let sv = xd[b * w + v];
                        for (d, &g) in ggd.iter_mut().zip(grow) {
                            *d += sv * g;
                        }
                    }
                }
            }

            Op::ConcatSkeleton { x } => {
                let xs = shape_of!(*x);
                let w = xs[3];
                let v = w - 1;
                let (n, c, t) = (xs[0], xs[1], xs[2]);
                let gd = gy.data();
                let gx = grad_slot(grads, *x, &xs);
                let gxd = gx.data_mut();
                for ni in 0..n {
                    for ci in 0..c {
                        for ti in 0..t {
                            let dst = &mut gxd[((ni * c + ci) * t + ti) * w..][..w];
                            let gj = (((ni * 2 * c) + ci) * t + ti) * v;
                            for i in 0..v {
                                dst[i] += gd[gj + i];
                            }
                            let gs = (((ni * 2 * c) + c + ci) * t + ti) * v;
                            let mut s = E::zero();
                            for &g in &gd[gs..gs + v] {
                                s += g;
                            }
                            dst[v] += s;
                        }
                    }
                }
            }

            Op::SliceC { x, c0, c1 } => {
                let xs = shape_of!(*x);
                let (n, c, p) = (xs[0], xs[1], xs[2] * xs[3]);
                let cs = c1 - c0;
                let gd = gy.data();
                let gx = grad_slot(grads, *x, &xs);
                let gxd = gx.data_mut();
                for ni in 0..n {
                    for ci in 0..cs {
                        let src = (ni * cs + ci) * p;
                        let dst = (ni * c + c0 + ci) * p;
                        for k in 0..p {
                            gxd[dst + k] += gd[src + k];
                        }
                    }
                }
            }

            Op::ConcatC { xs: inputs } => {
                let os = node.value.shape().to_vec();
                let (n, c_total, p) = (os[0], os[1], os[2] * os[3]);
                let gd = gy.data();
                let mut c_off = 0;
                for &id in inputs {
                    let s1 = self.nodes[id.0].value.dim(1);
                    let shape = self.nodes[id.0].value.shape().to_vec();
                    let gx = grad_slot(grads, id, &shape);
                    let gxd = gx.data_mut();
                    for ni in 0..n {
                        for ci in 0..s1 {
                            let src = (ni * c_total + c_off + ci) * p;
                            let dst = (ni * s1 + ci) * p;
                            for k in 0..p {
                                gxd[dst + k] += gd[src + k];
                            }
                        }
                    }
                    c_off += s1;
                }
            }

            Op::MeanTV { x } => {
                let xs = shape_of!(*x);
                let p = xs[2] * xs[3];
                let nc = xs[0] * xs[1];
                let gd = gy.data();
                let gx = grad_slot(grads, *x, &xs);
                let gxd = gx.data_mut();
                let inv = E::from_f64(1.0 / p as f64);
                for b in 0..nc {
                    let g = gd[b] * inv;
                    for k in 0..p {
                        gxd[b * p + k] += g;
                    }
                }
            }

            Op::PersonMean { x, alive, persons } => {
                let xs = shape_of!(*x);
                let c = xs[1];
                let n = alive.len() / persons;
                let gd = gy.data();
                let gx = grad_slot(grads, *x, &xs);
                let gxd = gx.data_mut();
                for ni in 0..n {
                    let count = alive[ni * persons..(ni + 1) * persons]
                        .iter()
                        .filter(|&&a| a)
                        .count();
                    let inv = E::from_f64(1.0 / count as f64);
                    for mi in 0..*persons {
                        if !alive[ni * persons + mi] {
                            continue;
                        }
                        let dst = &mut gxd[(ni * persons + mi) * c..][..c];
                        let src = &gd[ni * c..][..c];
                        for (d, &g) in dst.iter_mut().zip(src) {
                            *d += g * inv;
                        }
                    }
                }
            }

            Op::Affine { x, w, b } => {
                let xs = shape_of!(*x);
                let ws = shape_of!(*w);
                let (n, c, o) = (xs[0], xs[1], ws[0]);
                let xd = self.nodes[x.0].value.data();
                let wd = self.nodes[w.0].value.data();
                let gd = gy.data();
                {
                    let gx = grad_slot(grads, *x, &xs);
                    let gxd = gx.data_mut();
                    for ni in 0..n {
                        for oi in 0..o {
                            let g = gd[ni * o + oi];
                            if g == E::zero() {
                                continue;
                            }
                            let wrow = &wd[oi * c..][..c];
                            let dst = &mut gxd[ni * c..][..c];
                            for (d, &wv) in dst.iter_mut().zip(wrow) {
                                *d += g * wv;
                            }
                        }
                    }
                }
                {
                    let gw = grad_slot(grads, *w, &ws);
                    let gwd = gw.data_mut();
                    for ni in 0..n {
                        for oi in 0..o {
                            let g = gd[ni * o + oi];
                            if g == E::zero() {
                                continue;
                            }
                            let xrow = &xd[ni * c..][..c];
                            let dst = &mut gwd[oi * c..][..c];
                            for (d, &xv) in dst.iter_mut().zip(xrow) {
                                *d += g * xv;
                            }
                        }
                    }
                }
                {
                    let gb = grad_slot(grads, *b, &[o]);
                    let gbd = gb.data_mut();
                    for ni in 0..n {
                        for oi in 0..o {
                            gbd[oi] += gd[ni * o + oi];
                        }
                    }
                }
            }

            Op::Dropout {
                x,
                keep,
                inv_keep_prob,
            } => {
                let gx = grad_slot(grads, *x, node.value.shape());
                for ((d, &k), &g) in gx.data_mut().iter_mut().zip(keep.iter()).zip(gy.data()) {
                    if k {
                        *d += g * *inv_keep_prob;
                    }
                }
            }

            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let (n, c) = (probs.dim(0), probs.dim(1));
                let g = gy.data()[0] * E::from_f64(1.0 / n as f64);
                let pd = probs.data();
                let gl = grad_slot(grads, *logits, &[n, c]);
                let gld = gl.data_mut();
                for ni in 0..n {
                    for j in 0..c {
                        let delta = if j == labels[ni] { E::one() } else { E::zero() };
                        gld[ni * c + j] += g * (pd[ni * c + j] - delta);
                    }
                }
            }

            Op::FocalLoss {
                logits,
                labels,
                weights,
                gamma,
                probs,
            } => {
                let (n, c) = (probs.dim(0), probs.dim(1));
                let g = gy.data()[0] * E::from_f64(1.0 / n as f64);
                let pd = probs.data();
                let gl = grad_slot(grads, *logits, &[n, c]);
                let gld = gl.data_mut();
                let one = E::one();
                let ge = E::from_f64(*gamma);
                let tiny = E::from_f64(1e-12);
                for ni in 0..n {
                    let y = labels[ni];
                    let p = pd[ni * c + y].max(tiny);
                    let w = weights[y];
                    let log_p = p.ln();
                    // d/dp of -w (1-p)^gamma log p
                    let mut fp = -w * (one - p).powf(ge) / p;
                    if *gamma != 0.0 {
                        fp += w * ge * (one - p).powf(ge - one) * log_p;
                    }
                    for j in 0..c {
                        let delta = if j == y { one } else { E::zero() };
                        let dp_dz = p * (delta - pd[ni * c + j]);
                        gld[ni * c + j] += g * fp * dp_dz;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Fetch (allocating on first touch) the gradient accumulator for a node.
#[inline]
fn grad_slot<'a, E: Scalar>(
    grads: &'a mut [Option<Tensor<E>>],
    id: ValueId,
    shape: &[usize],
) -> &'a mut Tensor<E> {
    grads[id.0].get_or_insert_with(|| Tensor::zeros(shape))
}

/// out[t,i] += sum_v a[v,i] x[t,v] for one [T,V] plane.
#[inline]
fn mix_plane<E: Scalar>(x: &[E], a: &[E], out: &mut [E], t: usize, v: usize) {
    for ti in 0..t {
        let xrow = &x[ti * v..][..v];
        let orow = &mut out[ti * v..][..v];
        for (vi, &xv) in xrow.iter().enumerate() {
            if xv == E::zero() {
                continue;
            }
            let arow = &a[vi * v..][..v];
            for (y, &av) in orow.iter_mut().zip(arow) {
                *y += av * xv;
            }
        }
    }
}

/// gx[t,v] += sum_i a[v,i] g[t,i].
#[inline]
fn mix_plane_backward_x<E: Scalar>(g: &[E], a: &[E], gx: &mut [E], t: usize, v: usize) {
    for ti in 0..t {
        let grow = &g[ti * v..][..v];
        let dst = &mut gx[ti * v..][..v];
        for vi in 0..v {
            let arow = &a[vi * v..][..v];
            let mut s = E::zero();
            for (&av, &gv) in arow.iter().zip(grow) {
                s += av * gv;
            }
            dst[vi] += s;
        }
    }
}

/// ga[v,i] += sum_t x[t,v] g[t,i].
#[inline]
fn mix_plane_backward_a<E: Scalar>(x: &[E], g: &[E], ga: &mut [E], t: usize, v: usize) {
    for ti in 0..t {
        let xrow = &x[ti * v..][..v];
        let grow = &g[ti * v..][..v];
        for (vi, &xv) in xrow.iter().enumerate() {
            if xv == E::zero() {
                continue;
            }
            let dst = &mut ga[vi * v..][..v];
            for (d, &gv) in dst.iter_mut().zip(grow) {
                *d += xv * gv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rng_from_seed;

    fn t4(shape: [usize; 4], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(&shape, data).unwrap()
    }

    #[test]
    fn pointwise_conv_identity_weight() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t4([1, 2, 2, 2], (0..8).map(|i| i as f64).collect()));
        let w = tape.leaf(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let y = tape.pointwise_conv(x, w, None).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn pointwise_conv_sums_channels() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t4([1, 2, 1, 1], vec![1.0, 1.0]));
        let w = tape.leaf(Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap());
        let y = tape.pointwise_conv(x, w, None).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0]);
    }

    #[test]
    fn pointwise_conv_matches_triple_loop() {
        let mut rng = rng_from_seed(3);
        let x = Tensor::<f64>::randn(&[1, 3, 2, 2], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&[4, 3], 1.0, &mut rng);
        let b = Tensor::<f64>::randn(&[4], 1.0, &mut rng);
        let mut tape = Tape::new();
        let (xi, wi, bi) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
        let y = tape.pointwise_conv(xi, wi, Some(bi)).unwrap();
        // naive loop reference
        let mut expect = Tensor::<f64>::zeros(&[1, 4, 2, 2]);
        for o in 0..4 {
            for t in 0..2 {
                for v in 0..2 {
                    let mut s = b.data()[o];
                    for i in 0..3 {
                        s += w.data()[o * 3 + i] * x.data()[idx4(&[1, 3, 2, 2], 0, i, t, v)];
                    }
                    expect.data_mut()[idx4(&[1, 4, 2, 2], 0, o, t, v)] = s;
                }
            }
        }
        assert!(tape.value(y).max_abs_diff(&expect) < 1e-6);
    }

    #[test]
    fn temporal_conv_kernel1_identity() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t4([1, 1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]));
        let w = tape.leaf(Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap());
        let y = tape.temporal_conv(x, w, 1, 1, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn temporal_conv_hand_example() {
        // x=[1,2,3,4], k=3, ones weight, zero-padded ends -> [3,6,9,7]
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t4([1, 1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]));
        let w = tape.leaf(Tensor::from_vec(&[1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap());
        let y = tape.temporal_conv(x, w, 3, 1, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 6.0, 9.0, 7.0]);
    }

    #[test]
    fn temporal_conv_stride_halves() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 1, 64, 2]));
        let w = tape.leaf(Tensor::zeros(&[1, 1, 3]));
        let y = tape.temporal_conv(x, w, 3, 1, 2).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 32, 2]);
    }

    #[test]
    fn temporal_conv_rejects_even_kernel() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 1, 4, 1]));
        let w = tape.leaf(Tensor::zeros(&[1, 1, 4]));
        assert!(matches!(
            tape.temporal_conv(x, w, 4, 1, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn max_pool_hand_example() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t4([1, 1, 3, 1], vec![1.0, 5.0, 2.0]));
        let y = tape.temporal_max_pool(x, 3, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0, 5.0, 5.0]);
    }

    #[test]
    fn max_pool_constant_stays_constant() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 5, 2], -3.0));
        let y = tape.temporal_max_pool(x, 3, 1).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == -3.0));
    }

    #[test]
    fn max_pool_stride_shape() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t4([1, 1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]));
        let y = tape.temporal_max_pool(x, 3, 2).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 2, 1]);
    }

    #[test]
    fn softmax_symmetry_and_sums() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap());
        let y = tape.softmax(x, 0).unwrap();
        assert!((tape.value(y).data()[0] - 0.5).abs() < 1e-12);

        let z = tape.leaf(Tensor::zeros(&[2, 2]));
        let s = tape.softmax(z, 0).unwrap();
        for &v in tape.value(s).data() {
            assert!((v - 0.5).abs() < 1e-12);
        }

        let mut rng = rng_from_seed(11);
        let r = Tensor::<f64>::randn(&[3, 3], 2.0, &mut rng);
        let ri = tape.leaf(r.clone());
        let sm = tape.softmax(ri, 0).unwrap();
        for j in 0..3 {
            let col: f64 = (0..3).map(|i| tape.value(sm).data()[i * 3 + j]).sum();
            assert!((col - 1.0).abs() < 1e-6);
            // direct exp/sum oracle
            let exps: Vec<f64> = (0..3).map(|i| r.data()[i * 3 + j].exp()).collect();
            let tot: f64 = exps.iter().sum();
            for i in 0..3 {
                assert!((tape.value(sm).data()[i * 3 + j] - exps[i] / tot).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn elementwise_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[3], vec![0.0, -1.0, 2.0]).unwrap());
        let th = tape.tanh(x);
        assert_eq!(tape.value(th).data()[0], 0.0);
        let re = tape.relu(x);
        assert_eq!(tape.value(re).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn batch_norm_constant_input_gives_shift() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[2, 3, 4, 5], 7.0));
        let scale = tape.leaf(Tensor::full(&[3], 1.0));
        let shift = tape.leaf(Tensor::full(&[3], 0.25));
        let mut rm = Tensor::zeros(&[3]);
        let mut rv = Tensor::full(&[3], 1.0);
        let y = tape
            .batch_norm(x, scale, shift, &mut rm, &mut rv, 1e-5, 0.1, true)
            .unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 0.25).abs() < 1e-9);
        }
        // running stats moved toward the batch statistics
        assert!((rm.data()[0] - 0.7).abs() < 1e-9);
    }

    #[test]
    fn batch_norm_normalizes_random_batch() {
        let mut rng = rng_from_seed(5);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::randn(&[4, 3, 8, 5], 3.0, &mut rng));
        let scale = tape.leaf(Tensor::full(&[3], 1.0));
        let shift = tape.leaf(Tensor::zeros(&[3]));
        let mut rm = Tensor::zeros(&[3]);
        let mut rv = Tensor::full(&[3], 1.0);
        let y = tape
            .batch_norm(x, scale, shift, &mut rm, &mut rv, 1e-5, 0.1, true)
            .unwrap();
        let yd = tape.value(y);
        let (n, c, t, v) = (4, 3, 8, 5);
        for ci in 0..c {
            let mut mean = 0.0;
            for ni in 0..n {
                for k in 0..t * v {
                    mean += yd.data()[(ni * c + ci) * t * v + k];
                }
            }
            mean /= (n * t * v) as f64;
            assert!(mean.abs() < 1e-5, "channel mean {mean}");
        }
    }

    #[test]
    fn batch_norm_inference_uses_init_stats() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, -1.0]).unwrap());
        let scale = tape.leaf(Tensor::full(&[1], 1.0));
        let shift = tape.leaf(Tensor::zeros(&[1]));
        let mut rm = Tensor::zeros(&[1]);
        let mut rv = Tensor::full(&[1], 1.0);
        let y = tape
            .batch_norm(x, scale, shift, &mut rm, &mut rv, 1e-5, 0.1, false)
            .unwrap();
        // (x - 0)/sqrt(1+eps) ~= x
        assert!((tape.value(y).data()[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_k() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf(Tensor::zeros(&[2, 4]));
        let loss = tape.cross_entropy(logits, &[0, 3]).unwrap();
        assert!((tape.value(loss).data()[0] - (4.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident_goes_to_zero() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf(Tensor::from_vec(&[1, 3], vec![30.0, 0.0, 0.0]).unwrap());
        let loss = tape.cross_entropy(logits, &[0]).unwrap();
        assert!(tape.value(loss).data()[0] < 1e-10);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf(Tensor::zeros(&[1, 3]));
        assert!(matches!(
            tape.cross_entropy(logits, &[3]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn backward_of_sum_via_conv_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t4([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        // mean over T,V then affine with unit weight picks the mean
        let m = tape.mean_tv(x).unwrap();
        let w = tape.leaf(Tensor::from_vec(&[1, 1], vec![1.0]).unwrap());
        let b = tape.leaf(Tensor::zeros(&[1]));
        let y = tape.affine(m, w, b).unwrap();
        let g = tape.backward(y, None, &[x]).unwrap();
        for &v in g[0].data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn add_requires_same_shape() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[1, 2, 3, 4]));
        let b = tape.leaf(Tensor::zeros(&[1, 2, 4, 3]));
        assert!(tape.add(a, b).is_err());
    }

    #[test]
    fn transpose_tv_swaps_and_inverts() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t4([1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = tape.transpose_tv(x).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 3, 2]);
        assert_eq!(tape.value(y).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let z = tape.transpose_tv(y).unwrap();
        assert_eq!(tape.value(z).data(), tape.value(x).data());
    }

    #[test]
    fn slice_concat_roundtrip() {
        let mut rng = rng_from_seed(9);
        let x = Tensor::<f64>::randn(&[2, 6, 3, 4], 1.0, &mut rng);
        let mut tape = Tape::new();
        let xi = tape.leaf(x.clone());
        let a = tape.slice_c(xi, 0, 2).unwrap();
        let b = tape.slice_c(xi, 2, 6).unwrap();
        let y = tape.concat_c(&[a, b]).unwrap();
        assert_eq!(tape.value(y).data(), x.data());
    }

    #[test]
    fn person_mean_masks_dead_rows() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[4, 1], vec![1.0, 9.0, 2.0, 4.0]).unwrap());
        // two samples, two persons each; second person of sample 0 dead
        let y = tape.person_mean(x, &[true, false, true, true], 2).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 3.0]);
    }
}
