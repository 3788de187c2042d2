//! Analytic cost accounting: exact parameter counts and closed-form MAC
//! totals for any `ModelConfig`, mirroring the construction in `net`.
//!
//! Only contraction-bearing work is counted (convolutions, the affinity
//! contraction, embedding grams, the classifier); batch-norm, activations,
//! softmax/tanh, pooling means, and element-wise gates are excluded, the
//! usual convention for convolutional cost tables. Dynamic affinity
//! components are assumed assembled into a single coefficient matrix before
//! the joint contraction, so enabling them adds only encoder and gram work.
//! `flops = flops_per_mac * macs`; set `flops_per_mac` to 1 to read the
//! totals as multiply-accumulates.

use crate::gcn::SpatialVariant;
use crate::net::{BlockPlan, Model, ModelConfig};
use crate::tcn::{branch_widths, JsfMode, TemporalKind, BRANCH_DILATIONS, VANILLA_KERNEL};
use crate::tensor::Scalar;
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Knobs the report depends on besides the architecture.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ProfileOptions {
    /// Clip length fed to block 1.
    pub input_frames: usize,
    /// Person count the per-block costs scale with; `None` takes the
    /// config's `max_persons`.
    pub persons: Option<usize>,
    /// FLOPs charged per multiply-accumulate (2 by default, 1 = MACs).
    pub flops_per_mac: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions {
            input_frames: 64,
            persons: None,
            flops_per_mac: 2.0,
        }
    }
}

/// One module's share of the budget.
#[derive(Clone, Debug, serde::Serialize)]
pub struct CostRow {
    pub name: String,
    pub params: usize,
    pub macs: u64,
}

/// Full cost breakdown; totals always equal the row sums.
#[derive(Clone, Debug, serde::Serialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub total_params: usize,
    pub total_macs: u64,
    pub total_flops: f64,
    pub input_frames: usize,
    pub persons: usize,
    pub flops_per_mac: f64,
    pub assumptions: String,
}

const ASSUMPTIONS: &str = "single clip [1, persons, C_in, T, V]; per-block costs scale with persons, \
the classifier runs once per sample; MAC-bearing ops only (convs, affinity contraction, embedding \
grams, classifier) — batch-norm, activations, softmax/tanh, pooling, and element-wise gates \
excluded; dynamic affinity components assembled into one coefficient matrix before contracting; \
temporal lengths shrink as ceil(T/stride); flops = flops_per_mac * macs";

fn pointwise_macs(c_in: usize, c_out: usize, t: usize, v: usize) -> u64 {
    (c_in * c_out * t * v) as u64
}

/// Parameters and MACs of one spatial layer (per person).
fn gcn_cost(cfg: &ModelConfig, plan: &BlockPlan, t_in: usize) -> (usize, u64) {
    let (ci, co, v) = (plan.c_in, plan.c_out, cfg.num_joints);
    let k = cfg.groups;
    match cfg.spatial {
        SpatialVariant::DynamicGroup { mask } => {
            let mut params = ci * co + co * co;
            let mut macs = pointwise_macs(ci, co, t_in, v) + pointwise_macs(co, co, t_in, v);
            // one joint contraction over the assembled coefficient matrix
            macs += (co * t_in * v * v) as u64;
            if mask.pa {
                params += k * v * v;
            }
            if mask.needs_encoders() {
                params += 2 * ci * co;
                // encoders act on the temporally pooled clip (T = 1)
                macs += 2 * pointwise_macs(ci, co, 1, v);
            }
            if mask.da {
                params += k;
                macs += (co * v * v) as u64; // gram over group embeddings
            }
            if mask.ca {
                params += k;
            }
            (params, macs)
        }
        SpatialVariant::FixedTopology | SpatialVariant::RefinedTopology => {
            let mut params = ci * 3 * co + co * co;
            if cfg.spatial == SpatialVariant::RefinedTopology {
                params += 3 * v * v;
            }
            // three partition slices, each with its own contraction
            let macs = pointwise_macs(ci, 3 * co, t_in, v)
                + (3 * co * t_in * v * v) as u64
                + pointwise_macs(co, co, t_in, v);
            (params, macs)
        }
    }
}

/// Parameters and MACs of one temporal layer (per person).
fn tcn_cost(cfg: &ModelConfig, plan: &BlockPlan, t_in: usize, t_out: usize) -> (usize, u64) {
    let (c, v) = (plan.c_out, cfg.num_joints);
    match cfg.temporal {
        TemporalKind::VanillaK9 => (
            VANILLA_KERNEL * c * c,
            pointwise_macs(c, c, t_out, v) * VANILLA_KERNEL as u64,
        ),
        TemporalKind::MultiGroup => {
            let cb = branch_widths(c)[0];
            // appended skeleton mean travels through the trunk as joint V+1
            let vt = if cfg.jsf == JsfMode::Off { v } else { v + 1 };
            let out_in = if cfg.jsf == JsfMode::Concat { 2 * c } else { c };
            let mut params = c * c + BRANCH_DILATIONS.len() * 3 * cb * cb + c * out_in;
            if cfg.jsf == JsfMode::Djsf {
                params += v;
            }
            let macs = pointwise_macs(c, c, t_in, vt)
                + (BRANCH_DILATIONS.len() * 3 * cb * cb * t_out * vt) as u64
                + pointwise_macs(out_in, c, t_out, v);
            (params, macs)
        }
    }
}

/// Closed-form cost report; parameter totals agree exactly with an
/// exhaustive walk over a built model's store.
pub fn cost_report(cfg: &ModelConfig, opts: &ProfileOptions) -> crate::Result<CostReport> {
    cfg.validate()?;
    let persons = opts.persons.unwrap_or(cfg.max_persons);
    let m = persons as u64;
    let mut rows = Vec::new();

    rows.push(CostRow {
        name: "data_bn".into(),
        params: 2 * cfg.in_channels * cfg.num_joints,
        macs: 0,
    });

    let mut t_in = opts.input_frames;
    for (bi, plan) in cfg.block_plan().iter().enumerate() {
        let b = bi + 1;
        let t_out = t_in.div_ceil(plan.stride);
        let (gp, gm) = gcn_cost(cfg, plan, t_in);
        rows.push(CostRow { name: format!("block{b}.gcn"), params: gp, macs: gm * m });
        rows.push(CostRow { name: format!("block{b}.bn_gcn"), params: 2 * plan.c_out, macs: 0 });
        let (tp, tm) = tcn_cost(cfg, plan, t_in, t_out);
        rows.push(CostRow { name: format!("block{b}.tcn"), params: tp, macs: tm * m });
        rows.push(CostRow { name: format!("block{b}.bn_tcn"), params: 2 * plan.c_out, macs: 0 });
        if plan.c_in != plan.c_out || plan.stride != 1 {
            let w = plan.c_in * plan.c_out;
            let macs = pointwise_macs(plan.c_in, plan.c_out, t_out, cfg.num_joints) * m;
            rows.push(CostRow {
                name: format!("block{b}.res"),
                params: w + 2 * plan.c_out,
                macs,
            });
        }
        t_in = t_out;
    }

    let c_last = cfg.block_plan().last().unwrap().c_out;
    rows.push(CostRow {
        name: "fc".into(),
        params: cfg.num_classes * c_last + cfg.num_classes,
        macs: (cfg.num_classes * c_last) as u64,
    });

    let total_params = rows.iter().map(|r| r.params).sum();
    let total_macs = rows.iter().map(|r| r.macs).sum();
    Ok(CostReport {
        rows,
        total_params,
        total_macs,
        total_flops: total_macs as f64 * opts.flops_per_mac,
        input_frames: opts.input_frames,
        persons,
        flops_per_mac: opts.flops_per_mac,
        assumptions: ASSUMPTIONS.into(),
    })
}

/// Group an exhaustive walk over a built model's parameters by top-level
/// module ("data_bn", "block3", "fc"); the independent route the closed
/// form is checked against.
pub fn exhaustive_params<E: Scalar>(model: &Model<E>) -> BTreeMap<String, usize> {
    let mut by_module: BTreeMap<String, usize> = BTreeMap::new();
    for (_, p) in model.store.iter() {
        let module = p.name.split('.').next().unwrap_or(&p.name).to_string();
        *by_module.entry(module).or_default() += p.value.numel();
    }
    by_module
}

impl CostReport {
    pub fn gflops(&self) -> f64 {
        self.total_flops / 1e9
    }

    /// Row totals re-grouped by top-level module, comparable against
    /// [`exhaustive_params`].
    pub fn params_by_module(&self) -> BTreeMap<String, usize> {
        let mut by_module: BTreeMap<String, usize> = BTreeMap::new();
        for r in &self.rows {
            let module = r.name.split('.').next().unwrap_or(&r.name).to_string();
            *by_module.entry(module).or_default() += r.params;
        }
        by_module
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table with per-block subtotals.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(8).max(8);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>12}  {:>16}", "module", "params", "flops");
        let mut block = String::new();
        let (mut bp, mut bm) = (0usize, 0u64);
        let flush = |out: &mut String, block: &str, bp: &mut usize, bm: &mut u64| {
            if !block.is_empty() {
                let _ = writeln!(
                    out,
                    "{:<width$}  {:>12}  {:>16.0}",
                    format!("{block} total"),
                    bp,
                    *bm as f64 * self.flops_per_mac
                );
            }
            (*bp, *bm) = (0, 0);
        };
        for r in &self.rows {
            let module = r.name.split('.').next().unwrap_or(&r.name);
            if module != block {
                flush(&mut out, &block, &mut bp, &mut bm);
                block = module.to_string();
            }
            bp += r.params;
            bm += r.macs;
            let _ = writeln!(
                out,
                "{:<width$}  {:>12}  {:>16.0}",
                r.name,
                r.params,
                r.macs as f64 * self.flops_per_mac
            );
        }
        flush(&mut out, &block, &mut bp, &mut bm);
        let _ = writeln!(
            out,
            "{:<width$}  {:>12}  {:>16.0}",
            "TOTAL", self.total_params, self.total_flops
        );
        let _ = writeln!(
            out,
            "\ninput T={}, persons={}, {} flops/mac\nassumptions: {}",
            self.input_frames, self.persons, self.flops_per_mac, self.assumptions
        );
        out
    }
}
