//! Subcommand implementations: generate, train, evaluate, rates, all.
//!
//! Every artifact is a plain text or CSV file in the output directory, and
//! every CSV row carries the configuration hash so outputs are bound to the
//! exact inputs that produced them.

use crate::config::{ExperimentConfig, Mode, ModelChoice};
use crate::model_io;
use crate::CliError;
use chaos_spde::basis::TimeBasis;
use chaos_spde::chaos::{
    fit_random_feature, relative_error, supervised_targets, train_adam_epoch, AdamTrainConfig,
    ChaosModel, ResidualSystem, Split, TargetSet, TrainingGrid, WickMatrix,
};
use chaos_spde::nets::{AdamConfig, AdamState};
use chaos_spde::rates::rate_report;
use chaos_spde::spde::{ProblemKind, SpdeProblem};
use chaos_spde::wick::GaussianPanel;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Everything that is a pure function of the configuration.
pub struct Context {
    pub problem: SpdeProblem,
    pub basis: TimeBasis,
    pub panel: GaussianPanel,
    pub grid: TrainingGrid,
}

pub fn build_context(cfg: &ExperimentConfig) -> Result<Context, CliError> {
    let problem = cfg.build_problem()?;
    let basis = cfg.build_basis()?;
    let panel = cfg.build_panel(&problem)?;
    let grid = cfg.build_grid(&problem)?;
    Ok(Context { problem, basis, panel, grid })
}

fn model_path(out: &Path, order: u32) -> PathBuf {
    out.join(format!("model_k{order}.txt"))
}

fn trace_path(out: &Path, order: u32) -> PathBuf {
    out.join(format!("trace_k{order}.csv"))
}

fn nonfinite_guard(loss: f64, what: &str) -> Result<f64, CliError> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(CliError::Numeric(format!("{what} is not finite ({loss})")))
    }
}

fn build_targets(cfg: &ExperimentConfig, ctx: &Context) -> Result<TargetSet, CliError> {
    let zakai_cfg = cfg.zakai_ref_config();
    let zakai = match ctx.problem.kind {
        ProblemKind::Zakai { .. } => Some(&zakai_cfg),
        _ => None,
    };
    Ok(supervised_targets(&ctx.problem, &ctx.panel, &ctx.basis, &ctx.grid, zakai)?)
}

/// Loads targets written by `generate`, or computes them when absent.
fn obtain_targets(
    cfg: &ExperimentConfig,
    ctx: &Context,
    out: &Path,
) -> Result<TargetSet, CliError> {
    let path = out.join("targets.csv");
    if path.exists() {
        model_io::load_targets(&path, &ctx.grid, &cfg.hash())
    } else {
        build_targets(cfg, ctx)
    }
}

fn build_system(
    cfg: &ExperimentConfig,
    ctx: &Context,
    targets: Option<&TargetSet>,
) -> Result<ResidualSystem, CliError> {
    match cfg.mode {
        Mode::Supervised => {
            let targets =
                targets.ok_or_else(|| CliError::Config("supervised mode needs targets".into()))?;
            Ok(ResidualSystem::supervised(&ctx.problem, &ctx.grid, targets)?)
        }
        Mode::Unsupervised => {
            Ok(ResidualSystem::unsupervised(&ctx.problem, &ctx.grid, &ctx.panel, &ctx.basis)?)
        }
    }
}

fn test_loss_field(
    system: &ResidualSystem,
    model: &ChaosModel,
    wick: &WickMatrix,
    has_test: bool,
) -> Result<String, CliError> {
    if has_test {
        Ok(system.loss(model, wick, Split::Test)?.to_string())
    } else {
        Ok(String::new())
    }
}

/// Writes the dataset descriptor and, in supervised mode, reference targets.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    let ctx = build_context(cfg)?;
    let hash = cfg.hash();

    let noise = ctx.problem.noise_dim();
    let mut text = String::new();
    writeln!(text, "chaos-dataset v1").unwrap();
    writeln!(text, "config_hash = {hash}").unwrap();
    writeln!(text, "scenarios = {}", cfg.scenarios).unwrap();
    writeln!(text, "train_scenarios = {}", ctx.grid.train_count()).unwrap();
    writeln!(text, "time_points = {}", ctx.grid.times().len()).unwrap();
    writeln!(text, "spatial_points = {}", ctx.grid.point_count()).unwrap();
    writeln!(text, "noise_dim = {noise}").unwrap();
    writeln!(text, "basis_count = {}", cfg.trunc_j).unwrap();
    writeln!(text, "panel_draws = {}", noise * cfg.trunc_j * cfg.scenarios).unwrap();
    writeln!(text, "# configuration").unwrap();
    for line in cfg.canonical_text().lines() {
        writeln!(text, "# {line}").unwrap();
    }
    std::fs::write(out.join("dataset.txt"), text)?;

    if cfg.mode == Mode::Supervised {
        let targets = build_targets(cfg, &ctx)?;
        model_io::save_targets(&out.join("targets.csv"), &ctx.grid, &targets, &hash)?;
    }
    Ok(())
}

/// Trains one surrogate per requested chaos order; writes model files, loss
/// traces, and a summary CSV.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    let ctx = build_context(cfg)?;
    let hash = cfg.hash();
    let targets = match cfg.mode {
        Mode::Supervised => Some(obtain_targets(cfg, &ctx, out)?),
        Mode::Unsupervised => None,
    };
    let system = build_system(cfg, &ctx, targets.as_ref())?;
    let has_test = ctx.grid.train_count() < ctx.grid.scenarios();

    let mut summary = String::from("config_hash,order,indices,final_train_loss,test_loss,wall_time_ms\n");
    for order in cfg.train_orders() {
        let mut model = cfg.build_model(&ctx.problem, order)?;
        let wick = WickMatrix::new(model.indices(), &ctx.panel)?;
        let started = Instant::now();

        let mut trace = String::from("config_hash,epoch,train_loss,test_error,wall_time_ms\n");
        let final_train_loss = match cfg.model {
            ModelChoice::RandomFeature => {
                let report = fit_random_feature(&mut model, &system, &wick, cfg.ridge)?;
                let loss = nonfinite_guard(report.train_loss, "training loss")?;
                let test = test_loss_field(&system, &model, &wick, has_test)?;
                writeln!(trace, "{hash},0,{loss},{test},{}", started.elapsed().as_millis()).unwrap();
                loss
            }
            ModelChoice::Deterministic => {
                let adam_cfg = AdamTrainConfig {
                    adam: AdamConfig::with_learning_rate(cfg.learning_rate),
                    epochs: cfg.epochs,
                    batch: cfg.batch,
                    trace_every: 0,
                    shuffle_seed: cfg.seed ^ u64::from(order),
                };
                let plen = model.nets()[0].param_len();
                let mut params: Vec<f64> =
                    model.nets().iter().flat_map(|n| n.params_flat()).collect();
                let mut state = AdamState::new(params.len());
                let mut grads = vec![0.0; model.indices().len() * plen];
                let mut loss = f64::NAN;
                for epoch in 0..cfg.epochs {
                    train_adam_epoch(
                        &mut model, &system, &wick, &adam_cfg, epoch, &mut params, &mut state,
                        &mut grads,
                    )?;
                    loss = nonfinite_guard(
                        system.loss(&model, &wick, Split::Train)?,
                        "training loss",
                    )?;
                    let test = test_loss_field(&system, &model, &wick, has_test)?;
                    writeln!(
                        trace,
                        "{hash},{epoch},{loss},{test},{}",
                        started.elapsed().as_millis()
                    )
                    .unwrap();
                }
                loss
            }
        };
        let elapsed = started.elapsed().as_millis();
        std::fs::write(trace_path(out, order), trace)?;
        model_io::save_model(&model_path(out, order), &model, &hash)?;
        let test = test_loss_field(&system, &model, &wick, has_test)?;
        writeln!(
            summary,
            "{hash},{order},{},{final_train_loss},{test},{elapsed}",
            model.indices().len()
        )
        .unwrap();
    }
    std::fs::write(out.join("train_summary.csv"), summary)?;
    Ok(())
}

/// Emits the metrics CSV (one row per trained order) and the surface CSV for
/// the primary order.
pub fn cmd_evaluate(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let ctx = build_context(cfg)?;
    let hash = cfg.hash();
    // The reference is always available here: closed forms for the heat and
    // forward-rate problems, the particle filter for the filtering problem.
    let targets = match cfg.mode {
        Mode::Supervised => obtain_targets(cfg, &ctx, out)?,
        Mode::Unsupervised => build_targets(cfg, &ctx)?,
    };
    let system = build_system(
        cfg,
        &ctx,
        if cfg.mode == Mode::Supervised { Some(&targets) } else { None },
    )?;
    let has_test = ctx.grid.train_count() < ctx.grid.scenarios();
    let error_split = if has_test { Split::Test } else { Split::Train };
    let last_time = ctx.grid.times().len() - 1;

    let mut metrics = String::from(
        "config_hash,problem,mode,model,trunc_i,trunc_j,order,neurons,scenarios,time_points,\
         spatial_points,seed,train_error,oos_error,reference_error,wall_time_ms\n",
    );
    for order in cfg.train_orders() {
        let started = Instant::now();
        let model = model_io::load_model(&model_path(out, order), Some(&hash))?;
        if model.truncation() != cfg.truncation(order) {
            return Err(CliError::Config(
                "model file truncation disagrees with the configuration".into(),
            ));
        }
        let wick = WickMatrix::new(model.indices(), &ctx.panel)?;
        let train_error = system.loss(&model, &wick, Split::Train)?;
        let oos = test_loss_field(&system, &model, &wick, has_test)?;
        let reference_error =
            relative_error(&model, &ctx.grid, &wick, &targets, last_time, error_split)?;
        nonfinite_guard(train_error, "evaluation loss")?;
        writeln!(
            metrics,
            "{hash},{:?},{:?},{:?},{},{},{order},{},{},{},{},{},{train_error},{oos},\
             {reference_error},{}",
            cfg.problem,
            cfg.mode,
            cfg.model,
            cfg.trunc_i,
            cfg.trunc_j,
            cfg.neurons,
            cfg.scenarios,
            ctx.grid.times().len(),
            ctx.grid.point_count(),
            cfg.seed,
            started.elapsed().as_millis()
        )
        .unwrap();
    }
    std::fs::write(out.join("metrics.csv"), metrics)?;

    // Plot surfaces for the primary order over a few held-out scenarios.
    let model = model_io::load_model(&model_path(out, cfg.trunc_k), Some(&hash))?;
    let wick = WickMatrix::new(model.indices(), &ctx.panel)?;
    let value_beta = ctx
        .grid
        .derivative_orders()
        .iter()
        .position(|o| o.is_none())
        .ok_or_else(|| CliError::Config("grid has no value slot".into()))?;
    let scenario_pool: Vec<usize> = if has_test {
        (ctx.grid.train_count()..ctx.grid.scenarios()).take(3).collect()
    } else {
        (0..ctx.grid.scenarios()).take(3).collect()
    };
    let m = ctx.problem.space_dim;
    let mut surface = String::from("config_hash,scenario,t");
    for k in 0..m {
        write!(surface, ",u{}", k + 1).unwrap();
    }
    surface.push_str(",surrogate,reference\n");
    for &m1 in &scenario_pool {
        let xi = wick.row(m1);
        for (m2, &t) in ctx.grid.times().iter().enumerate() {
            for m3 in 0..ctx.grid.point_count() {
                let u = ctx.grid.point(m3);
                let val = model.eval(xi, t, u)?[0];
                let reference = targets.value(value_beta, m2, m3, m1);
                write!(surface, "{hash},{m1},{t}").unwrap();
                for &x in u {
                    write!(surface, ",{x}").unwrap();
                }
                writeln!(surface, ",{val},{reference}").unwrap();
            }
        }
    }
    std::fs::write(out.join("surface.csv"), surface)?;
    Ok(())
}

/// Writes the truncation-error diagnostics, one row per (I, J, K) up to the
/// configured truncation.
pub fn cmd_rates(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    let problem = cfg.build_problem()?;
    let hash = cfg.hash();
    let mut text = String::from(
        "config_hash,i_count,j_count,order,eigenvalue_tail,basis_tail_partial,basis_tail_bound,\
         order_term\n",
    );
    for j in 1..=cfg.trunc_j {
        for k in 0..=cfg.trunc_k {
            let report = rate_report(
                &problem.eigenvalues,
                cfg.horizon,
                cfg.trunc_i,
                j,
                k,
                cfg.rate_c_s,
                cfg.rate_c_fb,
            )?;
            writeln!(
                text,
                "{hash},{},{},{},{},{},{},{}",
                report.i_count,
                report.j_count,
                report.order,
                report.eigenvalue_tail,
                report.basis_tail_partial,
                report.basis_tail_bound,
                report.order_term
            )
            .unwrap();
        }
    }
    std::fs::write(out.join("rates.csv"), text)?;
    Ok(())
}

/// Full pipeline: generate, train, evaluate, rates.
pub fn cmd_all(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    cmd_generate(cfg, out)?;
    cmd_train(cfg, out)?;
    cmd_evaluate(cfg, out)?;
    cmd_rates(cfg, out)
}
