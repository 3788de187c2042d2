//! The acceptance gate: one test per shipping criterion, each printing a
//! single `ACCEPTANCE <n> PASS/FAIL` line (visible under `--nocapture`).
//!
//! Wall-clock budgets are asserted with generous margins so the gate stays
//! meaningful on a modest laptop CPU.

use dgstgcn::check;
use dgstgcn::data::format::{read_dataset, read_scores, write_dataset, write_scores};
use dgstgcn::data::synth::{self, SynthSpec};
use dgstgcn::error::Result;
use dgstgcn::gcn::{ComponentMask, SpatialVariant};
use dgstgcn::net::{Model, ModelConfig};
use dgstgcn::presets::preset;
use dgstgcn::profile::{cost_report, ProfileOptions};
use dgstgcn::tcn::{JsfMode, TemporalKind};
use dgstgcn::train::{evaluate, train, TrainConfig};
use std::time::Instant;

fn criterion(n: usize, name: &str, f: impl FnOnce() -> Result<String>) {
    match f() {
        Ok(detail) => println!("ACCEPTANCE {n} PASS — {name}: {detail}"),
        Err(e) => {
            println!("ACCEPTANCE {n} FAIL — {name}: {e}");
            panic!("criterion {n} ({name}) failed: {e}");
        }
    }
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(dgstgcn::error::Error::numerical(msg))
    }
}

fn within(value: f64, target: f64, frac: f64, what: &str) -> Result<()> {
    let dev = (value - target).abs() / target;
    ensure(
        dev <= frac,
        format!("{what} = {value:.4} is {:.1}% from {target} (allow {:.0}%)", dev * 100.0, frac * 100.0),
    )
}

/// Pull one named check out of a suite run.
fn named(results: &[check::CheckResult], needle: &str) -> Result<check::CheckResult> {
    results
        .iter()
        .find(|r| r.name.contains(needle))
        .cloned()
        .ok_or_else(|| dgstgcn::error::Error::config(format!("no check named like '{needle}'")))
}

fn paper_cfg(spatial_mask: ComponentMask, temporal: TemporalKind, jsf: JsfMode) -> ModelConfig {
    ModelConfig {
        spatial: SpatialVariant::DynamicGroup { mask: spatial_mask },
        temporal,
        jsf,
        ..ModelConfig::default()
    }
}

#[test]
fn criterion_1_parameter_counts() {
    criterion(1, "parameter counts", || {
        let t0 = Instant::now();
        let opts = ProfileOptions::default();
        let full = cost_report(&ModelConfig::default(), &opts)?.total_params;
        let pa = cost_report(
            &paper_cfg(ComponentMask::PA_ONLY, TemporalKind::MultiGroup, JsfMode::Djsf),
            &opts,
        )?
        .total_params;
        let vanilla = cost_report(
            &paper_cfg(ComponentMask::PA_ONLY, TemporalKind::VanillaK9, JsfMode::Off),
            &opts,
        )?
        .total_params;
        within(full as f64, 1.69e6, 0.15, "full model params")?;
        within(pa as f64, 1.25e6, 0.15, "PA-only params")?;
        within(vanilla as f64, 2.99e6, 0.15, "vanilla-TCN params")?;
        ensure(vanilla > full, "vanilla TCN must cost more than multi-group")?;
        let ms = t0.elapsed().as_millis();
        ensure(ms < 1000, format!("took {ms} ms, budget 1000"))?;
        Ok(format!(
            "full {full}, PA-only {pa}, vanilla-TCN {vanilla} (targets 1.69M/1.25M/2.99M ±15%); {ms} ms"
        ))
    });
}

#[test]
fn criterion_2_flops_ratios() {
    criterion(2, "FLOPs ratios at T=64, V=25", || {
        let t0 = Instant::now();
        let flops = |temporal, jsf, fpm: f64| -> Result<f64> {
            let opts = ProfileOptions {
                input_frames: 64,
                persons: None,
                flops_per_mac: fpm,
            };
            Ok(cost_report(&paper_cfg(ComponentMask::FULL, temporal, jsf), &opts)?.total_flops)
        };
        let ratios = |fpm: f64| -> Result<(f64, f64, f64)> {
            let plain = flops(TemporalKind::MultiGroup, JsfMode::Off, fpm)?;
            let vanilla = flops(TemporalKind::VanillaK9, JsfMode::Off, fpm)?;
            let concat = flops(TemporalKind::MultiGroup, JsfMode::Concat, fpm)?;
            let djsf = flops(TemporalKind::MultiGroup, JsfMode::Djsf, fpm)?;
            Ok((vanilla / plain, concat / djsf, djsf / plain))
        };
        let (r_vanilla, r_concat, r_djsf) = ratios(2.0)?;
        within(r_vanilla, 2.12, 0.10, "vanilla-K9 / multi-group")?;
        within(r_concat, 1.18, 0.10, "JSF-concat / D-JSF")?;
        ensure(
            r_djsf <= 1.02,
            format!("D-JSF / plain = {r_djsf:.4} exceeds 1.02"),
        )?;
        // the convention toggle must cancel out of every ratio
        let (a, b, c) = ratios(1.0)?;
        ensure(
            (a - r_vanilla).abs() < 1e-12 && (b - r_concat).abs() < 1e-12 && (c - r_djsf).abs() < 1e-12,
            "ratios moved with the MAC-vs-FLOP convention",
        )?;
        let ms = t0.elapsed().as_millis();
        ensure(ms < 1000, format!("took {ms} ms, budget 1000"))?;
        Ok(format!(
            "vanilla/MG {r_vanilla:.3} (2.12±10%), concat/D-JSF {r_concat:.3} (1.18±10%), \
             D-JSF/plain {r_djsf:.4} (≤1.02), convention-invariant; {ms} ms"
        ))
    });
}

#[test]
fn criterion_3_gradient_suite() {
    criterion(3, "finite-difference gradients", || {
        let t0 = Instant::now();
        let results = check::gradcheck_suite();
        for r in &results {
            ensure(r.passed, format!("{}", r.line()))?;
        }
        let ops = results.iter().filter(|r| !r.name.contains("composed")).count();
        let secs = t0.elapsed().as_secs_f64();
        ensure(secs < 60.0, format!("took {secs:.1} s, budget 60"))?;
        Ok(format!(
            "{ops} operators < 1e-5, composed two-block model < 1e-4; {secs:.1} s"
        ))
    });
}

#[test]
fn criterion_4_oracle_equivalence() {
    criterion(4, "loop-oracle equivalence", || {
        let t0 = Instant::now();
        let results = check::oracle_suite();
        for r in &results {
            ensure(r.passed, format!("{}", r.line()))?;
        }
        let gcn = named(&results, "dynamic-group gcn")?;
        let djsf = named(&results, "d-jsf")?;
        let secs = t0.elapsed().as_secs_f64();
        ensure(secs < 30.0, format!("took {secs:.1} s, budget 30"))?;
        Ok(format!("{}; {}; {secs:.1} s", gcn.detail, djsf.detail))
    });
}

#[test]
fn criterion_5_affinity_invariants() {
    criterion(5, "softmax/topology invariants", || {
        let results = check::invariant_suite();
        let da = named(&results, "DA columns")?;
        let ca = named(&results, "CA values")?;
        let perm = named(&results, "permutation equivariance")?;
        for r in [&da, &ca, &perm] {
            ensure(r.passed, format!("{}", r.line()))?;
        }
        Ok(format!("{}; {}; {}", da.detail, ca.detail, perm.detail))
    });
}

#[test]
fn criterion_6_uniform_sampling() {
    criterion(6, "uniform sampling properties", || {
        let results = check::invariant_suite();
        let substr = named(&results, "substrings")?;
        let ident = named(&results, "identity")?;
        let diverse = named(&results, "out-diversifies")?;
        for r in [&substr, &ident, &diverse] {
            ensure(r.passed, format!("{}", r.line()))?;
        }
        Ok(format!("{}; {}; {}", substr.detail, ident.detail, diverse.detail))
    });
}

#[test]
fn criterion_7_desk_overfit() {
    criterion(7, "desk preset overfits the synthetic set", || {
        let t0 = Instant::now();
        let run = preset("desk")?;
        ensure(
            run.train.epochs <= 30,
            format!("desk trains {} epochs, criterion allows 30", run.train.epochs),
        )?;
        let data = synth::generate(&SynthSpec::default())?;
        ensure(
            data.spec.n_classes == 4 && data.samples.len() == 256,
            "default synthetic set is not the 4-class / 256-sample task",
        )?;
        let mut model = Model::<f32>::new(
            run.model.clone(),
            data.spec.parents.as_deref(),
            run.train.seed,
        )?;
        let records = train(&mut model, &data, &run.train, |_| {})?;
        let final_acc = records.last().map(|r| r.train_acc).unwrap_or(0.0);
        ensure(
            final_acc >= 0.95,
            format!("train top-1 {final_acc:.4} under the 0.95 bar"),
        )?;
        let windows: Vec<f64> = records
            .chunks(5)
            .map(|w| w.iter().map(|r| r.loss).sum::<f64>() / w.len() as f64)
            .collect();
        ensure(
            windows.windows(2).all(|p| p[1] < p[0]),
            format!("5-epoch loss windows not monotone: {windows:?}"),
        )?;
        let secs = t0.elapsed().as_secs_f64();
        ensure(secs < 600.0, format!("took {secs:.0} s, budget 600"))?;
        Ok(format!(
            "top-1 {final_acc:.3} after {} epochs, loss windows monotone {:?}; {secs:.0} s",
            records.len(),
            windows.iter().map(|w| (w * 1e4).round() / 1e4).collect::<Vec<_>>()
        ))
    });
}

#[test]
fn criterion_8_ablation_coverage() {
    criterion(8, "ablation-config coverage", || {
        let results = check::invariant_suite();
        let grid = named(&results, "ablation grid")?;
        ensure(grid.passed, format!("{}", grid.line()))?;
        ensure(
            grid.detail.contains("29 configurations"),
            format!("grid coverage shrank: {}", grid.detail),
        )?;
        Ok(format!(
            "spatial modes, component masks at K ∈ {{4,8,12}}, temporal modes: {}",
            grid.detail
        ))
    });
}

#[test]
fn criterion_9_reproducibility_and_round_trips() {
    criterion(9, "reproducibility & format round-trips", || {
        let dir = tempfile::tempdir()?;
        let p = |name: &str| dir.path().join(name);

        // same seed, same data -> bit-identical trained checkpoints
        let spec = SynthSpec {
            n_classes: 2,
            n_samples: 16,
            num_joints: 5,
            channels: 2,
            frames: 12,
            max_persons: 1,
            seed: 3,
            ..SynthSpec::default()
        };
        let data = synth::generate(&spec)?;
        let cfg = ModelConfig {
            num_classes: 2,
            num_joints: 5,
            in_channels: 2,
            max_persons: 1,
            base_channels: 8,
            num_blocks: 2,
            downsample_blocks: vec![2],
            groups: 4,
            ..ModelConfig::default()
        };
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 8,
            base_lr: 0.01,
            input_length: 8,
            seed: 5,
            ..TrainConfig::default()
        };
        let mut trained = Vec::new();
        for name in ["a.dgw", "b.dgw"] {
            let mut model =
                Model::<f32>::new(cfg.clone(), data.spec.parents.as_deref(), tc.seed)?;
            train(&mut model, &data, &tc, |_| {})?;
            model.save(&p(name))?;
            trained.push(model);
        }
        let (bytes_a, bytes_b) = (std::fs::read(p("a.dgw"))?, std::fs::read(p("b.dgw"))?);
        ensure(bytes_a == bytes_b, "same-seed training produced different checkpoints")?;

        // SKL1: write -> read -> write reproduces both binary and sidecar
        write_dataset(&p("d.skl"), &data)?;
        let reread = read_dataset(&p("d.skl"))?;
        write_dataset(&p("e.skl"), &reread)?;
        ensure(
            std::fs::read(p("d.skl"))? == std::fs::read(p("e.skl"))?,
            "SKL1 bytes changed across a round-trip",
        )?;
        ensure(
            std::fs::read(p("d.skl.json"))? == std::fs::read(p("e.skl.json"))?,
            "SKL1 sidecar changed across a round-trip",
        )?;

        // DGW1: load -> save reproduces the checkpoint
        Model::<f32>::load(&p("a.dgw"))?.save(&p("c.dgw"))?;
        ensure(
            bytes_a == std::fs::read(p("c.dgw"))?,
            "DGW1 bytes changed across a round-trip",
        )?;

        // SCR1: write -> read -> write reproduces the scores
        let (_, scores) = evaluate(&mut trained[0], &data, 8, 8)?;
        write_scores(&p("s.scr"), &scores)?;
        let reread = read_scores(&p("s.scr"))?;
        write_scores(&p("t.scr"), &reread)?;
        ensure(
            std::fs::read(p("s.scr"))? == std::fs::read(p("t.scr"))?,
            "SCR1 bytes changed across a round-trip",
        )?;

        Ok(format!(
            "trained checkpoints bit-identical ({} bytes); SKL1+sidecar, DGW1, SCR1 round-trip bit-exactly",
            bytes_a.len()
        ))
    });
}
