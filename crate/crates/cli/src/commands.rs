use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use reachavoid::neural::{extract_learned_set, train};
use reachavoid::policy::{monte_carlo_in_box, rollout, DisturbanceMode, RolloutOutcome};
use reachavoid::{sup_norm_diff, value_iteration, ValueField};
use serde::Serialize;

use crate::args::{CompareArgs, Disturbance, EvalArgs, ExportArgs, RolloutArgs, SolveArgs, TrainArgs};
use crate::heatmap::{heatmap_pgm, mask_pgm, parse_slice, take_slice};
use crate::setup::{parse_reals, read_field, Setup, Source};

/// How a command that ran to completion ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Finish {
    Ok,
    NotConverged,
}

fn out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn write_field(field: &ValueField, path: &Path) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    field.write_csv(BufWriter::new(file))?;
    Ok(())
}

pub fn solve(args: &SolveArgs) -> Result<Finish> {
    let setup = Setup::load(&args.problem)?;
    let cfg = setup.solve_config(args.lambda, args.tol, args.max_iters)?;
    out_dir(&args.out)?;
    let report = value_iteration(&setup.spec, &setup.grid, &cfg)?;
    write_field(&report.field, &args.out.join("field.csv"))?;
    fs::write(args.out.join("report.toml"), report.to_toml()?)?;
    println!(
        "{} after {} sweeps, final residual {:.3e}, {} of {} nodes positive",
        if report.converged { "converged" } else { "stopped at max iterations" },
        report.iterations,
        report.final_residual(),
        report.field.positive_count(),
        setup.grid.total_nodes(),
    );
    Ok(if report.converged { Finish::Ok } else { Finish::NotConverged })
}

pub fn train_cmd(args: &TrainArgs) -> Result<Finish> {
    let setup = Setup::load(&args.problem)?;
    let mut cfg = setup.train_config();
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    cfg.validate(setup.spec.state_dim())?;
    out_dir(&args.out)?;
    fs::write(args.out.join("train_config.toml"), toml::to_string(&cfg)?)?;
    let outcome = train(&setup.spec, &cfg)?;
    outcome.params.save_json(&args.out.join("checkpoint.json"))?;
    outcome.write_log_csv(BufWriter::new(File::create(args.out.join("train_log.csv"))?))?;
    let learned = extract_learned_set(&outcome.params, &setup.grid)?;
    write_field(&learned, &args.out.join("learned_field.csv"))?;
    let last = outcome.log.last().map_or(f64::NAN, |l| l.loss);
    println!(
        "trained {} epochs, final loss {last:.3e}, learned set holds {} of {} nodes",
        cfg.epochs,
        learned.positive_count(),
        setup.grid.total_nodes()
    );
    Ok(Finish::Ok)
}

pub fn rollout_cmd(args: &RolloutArgs) -> Result<Finish> {
    let setup = Setup::load(&args.problem)?;
    let source = Source::load(&args.value, &setup.spec)?;
    let x0 = parse_reals(&args.x0)?;
    if args.horizon == 0 {
        bail!("--horizon must be at least 1");
    }
    let mode = match (&args.disturbance_seq, args.disturbance) {
        (Some(seq), _) => DisturbanceMode::Fixed(seq.clone()),
        (None, Disturbance::WorstCase) => DisturbanceMode::WorstCase,
        (None, Disturbance::None) => DisturbanceMode::None,
    };
    let traj = rollout(&setup.spec, &source, &x0, args.horizon, &mode)?;
    out_dir(&args.out)?;
    traj.export(&setup.spec, &args.out, "trajectory")?;
    println!("{}", describe(&traj.outcome));
    Ok(Finish::Ok)
}

fn describe(outcome: &RolloutOutcome) -> String {
    match outcome {
        RolloutOutcome::ReachedTarget(t) => format!("reached target at step {t}"),
        RolloutOutcome::ViolatedConstraint(t) => format!("violated constraint at step {t}"),
        RolloutOutcome::Timeout(h) => format!("timed out after {h} steps"),
    }
}

#[derive(Serialize)]
struct EvalSummary {
    success_rate: f64,
    samples: usize,
    reached: usize,
    violated: usize,
    timed_out: usize,
    proposals: usize,
    margin: f64,
    horizon: usize,
    seed: u64,
}

pub fn eval(args: &EvalArgs) -> Result<Finish> {
    let setup = Setup::load(&args.problem)?;
    let source = Source::load(&args.value, &setup.spec)?;
    if args.horizon == 0 {
        bail!("--horizon must be at least 1");
    }
    let (lower, upper) = match &source {
        Source::Field(f) => (f.grid().lower().to_vec(), f.grid().upper().to_vec()),
        Source::Net(_) => (setup.grid.lower().to_vec(), setup.grid.upper().to_vec()),
    };
    let report =
        monte_carlo_in_box(&setup.spec, &source, &lower, &upper, args.samples, args.margin, args.horizon, args.seed)?;
    let count = |f: fn(&RolloutOutcome) -> bool| report.outcomes.iter().filter(|o| f(o)).count();
    let summary = EvalSummary {
        success_rate: report.success_rate(),
        samples: args.samples,
        reached: count(|o| matches!(o, RolloutOutcome::ReachedTarget(_))),
        violated: count(|o| matches!(o, RolloutOutcome::ViolatedConstraint(_))),
        timed_out: count(|o| matches!(o, RolloutOutcome::Timeout(_))),
        proposals: report.proposals,
        margin: args.margin,
        horizon: args.horizon,
        seed: args.seed,
    };
    out_dir(&args.out)?;
    fs::write(args.out.join("eval.toml"), toml::to_string(&summary)?)?;

    let mut w = csv::Writer::from_path(args.out.join("eval_samples.csv"))?;
    let n = setup.spec.state_dim();
    let mut header: Vec<String> = vec!["sample".into()];
    header.extend((0..n).map(|k| format!("x{k}")));
    header.extend(["verdict".into(), "step".into()]);
    w.write_record(&header)?;
    for (i, (x, o)) in report.initial_states.iter().zip(&report.outcomes).enumerate() {
        let (verdict, step) = match o {
            RolloutOutcome::ReachedTarget(t) => ("reached-target", t),
            RolloutOutcome::ViolatedConstraint(t) => ("violated-constraint", t),
            RolloutOutcome::Timeout(h) => ("timeout", h),
        };
        let mut row = vec![i.to_string()];
        row.extend(x.iter().map(|v| format!("{v:e}")));
        row.extend([verdict.to_string(), step.to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    println!("success rate {:.4} ({} of {})", summary.success_rate, summary.reached, summary.samples);
    Ok(Finish::Ok)
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Comparison {
    pub iou: f64,
    pub volume_ratio: f64,
    pub max_gap: f64,
    pub positive_a: usize,
    pub positive_b: usize,
}

/// IoU of the positive sets, `|a > 0| / |b > 0|`, and the sup-norm gap.
pub fn compare_fields(a: &ValueField, b: &ValueField) -> Result<Comparison> {
    let max_gap = sup_norm_diff(a, b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.values().iter().zip(b.values()) {
        let (pa, pb) = (*x > 0.0, *y > 0.0);
        inter += usize::from(pa && pb);
        union += usize::from(pa || pb);
    }
    let (positive_a, positive_b) = (a.positive_count(), b.positive_count());
    let iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    let volume_ratio = match (positive_a, positive_b) {
        (0, 0) => 1.0,
        (_, 0) => f64::INFINITY,
        (pa, pb) => pa as f64 / pb as f64,
    };
    Ok(Comparison { iou, volume_ratio, max_gap, positive_a, positive_b })
}

pub fn compare(args: &CompareArgs) -> Result<Finish> {
    let a = read_field(&args.a)?;
    let b = read_field(&args.b)?;
    let cmp = compare_fields(&a, &b).context("fields cannot be compared")?;
    let text = toml::to_string(&cmp)?;
    print!("{text}");
    if let Some(out) = &args.out {
        out_dir(out)?;
        fs::write(out.join("compare.toml"), &text)?;
    }
    Ok(Finish::Ok)
}

pub fn export(args: &ExportArgs) -> Result<Finish> {
    let field = read_field(&args.field)?;
    let fixed = match &args.slice {
        Some(s) => parse_slice(s)?,
        None => Vec::new(),
    };
    let slice = take_slice(&field, &fixed)?;
    out_dir(&args.out)?;
    fs::write(args.out.join("heatmap.pgm"), heatmap_pgm(&slice))?;
    fs::write(args.out.join("mask.pgm"), mask_pgm(&slice))?;
    println!("wrote {}x{} heatmap and mask to {}", slice.width, slice.height, args.out.display());
    Ok(Finish::Ok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use reachavoid::GridSpec;

    #[test]
    fn comparison_identity_and_mismatch() {
        let g = GridSpec::uniform(2, -1.0, 1.0, 5).unwrap();
        let f = ValueField::from_fn(g.clone(), |x| x[0]);
        let c = compare_fields(&f, &f).unwrap();
        assert_eq!((c.iou, c.volume_ratio, c.max_gap), (1.0, 1.0, 0.0));
        let h = ValueField::from_fn(g, |x| x[0] - 0.6);
        let c = compare_fields(&h, &f).unwrap();
        assert_eq!((c.positive_a, c.positive_b), (5, 10));
        assert_eq!((c.iou, c.volume_ratio), (0.5, 0.5));
        let other = ValueField::constant(GridSpec::uniform(2, -1.0, 1.0, 7).unwrap(), 0.0);
        assert!(compare_fields(&f, &other).is_err());
    }
}
