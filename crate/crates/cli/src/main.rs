mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::Serialize;

use wavetomo_core::config::RunConfig;
use wavetomo_core::grid::{sup_norm, wiener_norm};
use wavetomo_core::io;
use wavetomo_core::recover::{
    assemble_sinogram, reconstruct_report, AngleError, Sinogram, SinogramSetup, Source,
};
use wavetomo_core::solver::{cross_validate, evolve, uniform_times, SolverConfig};
use wavetomo_core::sweep::run_sweep;
use wavetomo_core::wavepacket::{compare_residuals, initial_data};
use wavetomo_core::{Error, Field};

/// Overrides `output_dir` from the config file.
const OUTPUT_DIR_ENV: &str = "WAVETOMO_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "wavetomo", version, about = "Wave-packet NLS experiments and line-integral tomography")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the initial packet over [-T, T]; dump fields and monitors.
    Simulate { config: PathBuf },
    /// Compare the closed-form residual of v with centred differences.
    ResidualCheck {
        config: PathBuf,
        /// Times at which to compare (default: -T/2, 0, T/2).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        times: Option<Vec<f64>>,
    },
    /// Error of v against the split-step solution across the epsilon list.
    Sweep { config: PathBuf },
    /// Assemble the sinogram from the configured source.
    Sinogram { config: PathBuf },
    /// Filtered backprojection, from a saved sinogram or a fresh one.
    Reconstruct {
        config: PathBuf,
        /// Sinogram CSV; the mask is read from the sibling `mask.csv`.
        #[arg(long)]
        sinogram: Option<PathBuf>,
    },
    /// Cross-check the Picard iteration against split-step.
    PicardCheck { config: PathBuf },
}

impl Command {
    fn config_path(&self) -> &Path {
        match self {
            Command::Simulate { config }
            | Command::ResidualCheck { config, .. }
            | Command::Sweep { config }
            | Command::Sinogram { config }
            | Command::Reconstruct { config, .. }
            | Command::PicardCheck { config } => config,
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numerical() => 3,
        Some(Error::Validation(_) | Error::InvalidGrid(_) | Error::InvalidParameter(_) | Error::Format(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::InvalidParameter("--workers must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker pool")?;
    }
    let path = cli.command.config_path();
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = RunConfig::from_toml_str(&text)?;
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
        cfg.output_dir = PathBuf::from(dir);
    }
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;

    match &cli.command {
        Command::Simulate { .. } => simulate(&cfg, &out),
        Command::ResidualCheck { times, .. } => residual_check(&cfg, &out, times.as_deref()),
        Command::Sweep { .. } => sweep(&cfg, &out),
        Command::Sinogram { .. } => sinogram(&cfg, &out).map(|_| ()),
        Command::Reconstruct { sinogram: saved, .. } => reconstruct(&cfg, &out, saved.as_deref()),
        Command::PicardCheck { .. } => picard_check(&cfg, &out),
    }
}

fn abs_slice(f: &Field) -> Vec<f64> {
    let n = f.grid.n();
    let plane = n * n;
    let start = if f.grid.d() == 3 { (n / 2) * plane } else { 0 };
    f.values[start..start + plane].iter().map(|z| z.norm()).collect()
}

#[derive(Serialize)]
struct SimulateSummary {
    steps: usize,
    dt: f64,
    record_times: Vec<f64>,
    initial_wiener: f64,
    max_wiener_ratio: f64,
    max_l2_drift: f64,
}

fn simulate(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let params = cfg.packet_params()?;
    let grid = cfg.grid()?;
    let u0 = initial_data(&params, &grid)?;
    let mut solver = cfg.solver.clone();
    if solver.record_times.is_empty() {
        solver.record_times = uniform_times(-params.horizon, params.horizon, 17);
    }
    let rec = evolve(&u0, &params.phantom, &solver, params.horizon)?;
    for (k, f) in rec.fields.iter().enumerate() {
        io::write_field(&out.join(format!("field_{k:03}.bin")), f)?;
    }
    io::write_monitors(&out.join("monitors.csv"), &rec)?;
    let summary = SimulateSummary {
        steps: rec.steps,
        dt: solver.dt_for(&grid),
        record_times: rec.record_times.clone(),
        initial_wiener: wiener_norm(&u0),
        max_wiener_ratio: rec.max_wiener_ratio(),
        max_l2_drift: rec.max_l2_drift(),
    };
    io::write_json(&out.join("summary.json"), &summary)?;
    plot::heatmap(&out.join("final_abs.png"), &abs_slice(rec.final_field()), grid.n(), grid.n())?;
    println!(
        "simulate: {} steps, max W(u)/W(u0) = {:.6}, max l2 drift = {:.3e}",
        rec.steps, summary.max_wiener_ratio, summary.max_l2_drift
    );
    Ok(())
}

fn residual_check(cfg: &RunConfig, out: &Path, times: Option<&[f64]>) -> anyhow::Result<()> {
    let params = cfg.packet_params()?;
    let grid = cfg.grid()?;
    let dt = cfg.solver.dt.unwrap_or(1e-4);
    let t_half = 0.5 * params.horizon;
    let times = times.map(<[f64]>::to_vec).unwrap_or_else(|| vec![-t_half, 0.0, t_half]);
    let mut reports = Vec::new();
    for &t in &times {
        let r = compare_residuals(&params, &grid, t, dt)?;
        println!("residual-check: t = {t}, dt = {dt}, relative L-inf = {:.3e}", r.relative_linf);
        reports.push(r);
    }
    io::write_json(&out.join("residual_check.json"), &reports)?;
    Ok(())
}

fn sweep(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let sweep = cfg.sweep_config()?.ok_or_else(|| Error::Validation(vec!["config has no [sweep] table".into()]))?;
    let res = run_sweep(&sweep)?;
    io::write_sweep_csv(&out.join("sweep.csv"), &res)?;
    io::write_json(&out.join("sweep.json"), &res)?;
    let pick = |f: fn(&wavetomo_core::sweep::SweepPoint) -> f64| {
        res.points.iter().filter(|p| p.is_reliable()).map(|p| (p.epsilon, f(p))).collect::<Vec<_>>()
    };
    let (sup, wien, delta) = (pick(|p| p.error_sup), pick(|p| p.error_wiener), pick(|p| p.residual_norm));
    plot::loglog(
        &out.join("sweep.png"),
        &[
            plot::Series { points: &sup, colour: [200, 30, 30] },
            plot::Series { points: &wien, colour: [30, 30, 200] },
            plot::Series { points: &delta, colour: [30, 150, 30] },
        ],
    )?;
    for p in &res.points {
        match &p.flagged {
            None => println!(
                "sweep: eps = {}, sup = {:.4e}, wiener = {:.4e}, residual = {:.4e}",
                p.epsilon, p.error_sup, p.error_wiener, p.residual_norm
            ),
            Some(why) => println!("sweep: eps = {} flagged: {why}", p.epsilon),
        }
    }
    if let Some(f) = res.fit_sup {
        println!("sweep: sup slope {:.4} (95% CI {:.4} .. {:.4}), predicted {}", f.slope, f.ci_low, f.ci_high, res.predicted_exponent);
    }
    if res.points.iter().all(|p| !p.is_reliable()) {
        return Err(Error::BlowUp { t: f64::NAN, detail: "every sweep point failed".into() }.into());
    }
    Ok(())
}

fn recover_inputs(cfg: &RunConfig) -> anyhow::Result<(Source, f64)> {
    let r = cfg.recover.as_ref().ok_or_else(|| Error::Validation(vec!["config has no [recover] table".into()]))?;
    Ok((r.source, r.theta_mask))
}

#[derive(Serialize)]
struct SinogramSummary<'a> {
    source: Source,
    angles: usize,
    offsets: usize,
    reliable_fraction: f64,
    failures: &'a [(usize, String)],
    angle_errors: &'a [AngleError],
}

fn sinogram(cfg: &RunConfig, out: &Path) -> anyhow::Result<Sinogram> {
    let (source, theta_mask) = recover_inputs(cfg)?;
    let params = cfg.packet_params()?;
    let grid = cfg.grid()?;
    let solver: SolverConfig = cfg.solver.clone();
    let setup = SinogramSetup { template: &params, grid: &grid, solver: &solver, theta_mask };
    let sino = assemble_sinogram(&cfg.phantom, &setup, &cfg.angles(), &cfg.offsets(), source)?;
    io::write_sinogram(&out.join("sinogram.csv"), &out.join("mask.csv"), &sino)?;
    let errors = if source == Source::Oracle {
        Vec::new()
    } else {
        wavetomo_core::recover::extraction_errors(&sino, &cfg.phantom, wavetomo_core::models::DEFAULT_ORACLE_TOL)
    };
    let total = sino.angles.len() * sino.offsets.len();
    let reliable = sino.mask.iter().flatten().filter(|&&m| m).count();
    let summary = SinogramSummary {
        source,
        angles: sino.angles.len(),
        offsets: sino.offsets.len(),
        reliable_fraction: reliable as f64 / total as f64,
        failures: &sino.failures,
        angle_errors: &errors,
    };
    io::write_json(&out.join("sinogram.json"), &summary)?;
    // Image rows are offsets, columns are angles.
    let cells: Vec<f64> = (0..sino.offsets.len())
        .flat_map(|j| sino.values.iter().map(move |row| row[j]))
        .collect();
    plot::heatmap(&out.join("sinogram.png"), &cells, sino.offsets.len(), sino.angles.len())?;
    let worst = errors.iter().map(|e| e.relative_l2).fold(0.0, f64::max);
    println!(
        "sinogram: {} x {} from {source:?}, reliable fraction {:.4}, worst angle relative L2 {worst:.4e}",
        summary.angles, summary.offsets, summary.reliable_fraction
    );
    Ok(sino)
}

#[derive(Serialize)]
struct ReconstructSummary<'a> {
    source: Source,
    relative_l2_error: f64,
    sup: f64,
    angle_errors: &'a [AngleError],
}

fn reconstruct(cfg: &RunConfig, out: &Path, saved: Option<&Path>) -> anyhow::Result<()> {
    let (source, _) = recover_inputs(cfg)?;
    let recover = cfg.recover.as_ref().expect("checked above");
    let sino = match saved {
        Some(values) => {
            let mask = values.with_file_name("mask.csv");
            io::read_sinogram(values, &mask)
                .with_context(|| format!("reading {} and {}", values.display(), mask.display()))?
        }
        None => sinogram(cfg, out)?,
    };
    let out_grid = cfg.reconstruction_grid()?.ok_or_else(|| anyhow!("no reconstruction grid"))?;
    let report = reconstruct_report(&sino, &cfg.phantom, &out_grid, recover.window, source)?;
    io::write_field(&out.join("reconstruction.bin"), &report.reconstruction)?;
    let re: Vec<f64> = report.reconstruction.values.iter().map(|z| z.re).collect();
    plot::heatmap(&out.join("reconstruction.png"), &re, out_grid.n(), out_grid.n())?;
    let summary = ReconstructSummary {
        source,
        relative_l2_error: report.relative_l2_error,
        sup: sup_norm(&report.reconstruction),
        angle_errors: &report.angle_errors,
    };
    io::write_json(&out.join("reconstruction.json"), &summary)?;
    println!("reconstruct: relative L2 error {:.6}", report.relative_l2_error);
    Ok(())
}

fn picard_check(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let params = cfg.packet_params()?;
    let grid = cfg.grid()?;
    let u0 = initial_data(&params, &grid)?;
    let dt = cfg.solver.dt_for(&grid);
    let cv = cross_validate(&u0, &params.phantom, params.horizon, &cfg.solver.picard, dt)?;
    io::write_json(&out.join("picard_check.json"), &cv)?;
    println!(
        "picard-check: max ratio {:.4}, relative Wiener distance {:.3e} ({} nodes), {:.3e} ({} nodes), extrapolated {:.3e}",
        cv.max_ratio, cv.fine_distance, cv.fine_nodes, cv.coarse_distance, cv.coarse_nodes, cv.extrapolated_distance
    );
    Ok(())
}
