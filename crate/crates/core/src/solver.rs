//! Strang split-step integrator and the Duhamel/Picard fixed-point solver.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{self, Direction};
use crate::grid::{free_propagate, l2_norm, norm2, sup_norm, wiener_norm, Field, GridSpec};
use crate::models::{eval_alpha, Phantom};

/// Fixed-point solver settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardConfig {
    pub n_quadrature_nodes: usize,
    pub max_iterations: usize,
    pub fixed_point_tol: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self { n_quadrature_nodes: 33, max_iterations: 60, fixed_point_tol: 1e-14 }
    }
}

impl PicardConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(2..=64).contains(&self.n_quadrature_nodes) {
            out.push(format!("picard.n_quadrature_nodes must be in [2, 64], got {}", self.n_quadrature_nodes));
        }
        if self.max_iterations == 0 {
            out.push("picard.max_iterations must be positive".into());
        }
        if !(self.fixed_point_tol > 0.0) {
            out.push(format!("picard.fixed_point_tol must be positive, got {}", self.fixed_point_tol));
        }
        out
    }
}

/// Split-step settings. `dt = None` selects `min(0.25·dx², 1e-2)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub dt: Option<f64>,
    pub record_times: Vec<f64>,
    /// Record monitors every this many steps (0 is treated as 1).
    pub monitor_stride: usize,
    pub picard: PicardConfig,
}

impl SolverConfig {
    pub fn with_dt(dt: f64) -> Self {
        Self { dt: Some(dt), ..Self::default() }
    }

    pub fn default_dt(grid: &GridSpec) -> f64 {
        (0.25 * grid.dx() * grid.dx()).min(1e-2)
    }

    pub fn dt_for(&self, grid: &GridSpec) -> f64 {
        self.dt.unwrap_or_else(|| Self::default_dt(grid))
    }

    pub fn violations(&self, horizon: f64) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                out.push(format!("solver.dt must be positive, got {dt}"));
            }
        }
        for (i, t) in self.record_times.iter().enumerate() {
            if !(t.abs() <= horizon + 1e-12) {
                out.push(format!("solver.record_times[{i}] = {t} lies outside [-T, T]"));
            }
        }
        if self.record_times.windows(2).any(|w| w[1] <= w[0]) {
            out.push("solver.record_times must be strictly increasing".into());
        }
        out.extend(self.picard.violations());
        out
    }
}

/// `count` equally spaced times covering `[t0, t1]`.
pub fn uniform_times(t0: f64, t1: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![t1];
    }
    (0..count).map(|k| t0 + (t1 - t0) * k as f64 / (count - 1) as f64).collect()
}

/// Fields at the record times plus per-step monitors.
#[derive(Clone, Debug)]
pub struct EvolutionRecord {
    pub record_times: Vec<f64>,
    pub fields: Vec<Field>,
    pub monitor_times: Vec<f64>,
    pub l2: Vec<f64>,
    pub wiener: Vec<f64>,
    pub sup: Vec<f64>,
    pub steps: usize,
}

impl EvolutionRecord {
    pub fn final_field(&self) -> &Field {
        self.fields.last().expect("evolution records at least the final field")
    }

    /// `max_t W(u(t)) / W(u₀)`.
    pub fn max_wiener_ratio(&self) -> f64 {
        let w0 = self.wiener[0];
        self.wiener.iter().fold(0.0, |m, w| m.max(w / w0))
    }

    /// `max_t |‖u(t)‖₂ − ‖u₀‖₂| / ‖u₀‖₂`.
    pub fn max_l2_drift(&self) -> f64 {
        let m0 = self.l2[0];
        self.l2.iter().fold(0.0, |m, v| m.max((v - m0).abs() / m0))
    }
}

/// Exact flow of `i∂_t u = α|u|²u`: `u ↦ u·exp(−i·dt·α|u|²)`.
pub fn nonlinear_substep(f: &Field, phantom: &Phantom, dt: f64) -> Field {
    f.map(|x, u| {
        let a = eval_alpha(phantom, x);
        if a == 0.0 {
            u
        } else {
            u * Complex64::from_polar(1.0, -dt * a * u.norm_sqr())
        }
    })
}

/// `N(dt/2) ∘ L(dt) ∘ N(dt/2)`; advances the time stamp.
pub fn strang_step(f: &Field, phantom: &Phantom, dt: f64) -> Result<Field> {
    let half = nonlinear_substep(f, phantom, 0.5 * dt);
    let mid = free_propagate(&half, dt)?;
    Ok(nonlinear_substep(&mid, phantom, 0.5 * dt))
}

/// Reusable split-step kernel: α sampled once and a cached linear
/// multiplier in FFT slot order with the `1/n^d` scale folded in.
pub struct Stepper {
    grid: GridSpec,
    alpha: Vec<f64>,
    dt: f64,
    symbol: Vec<Complex64>,
}

impl Stepper {
    pub fn new(grid: GridSpec, phantom: &Phantom, dt: f64) -> Self {
        let alpha = (0..grid.len()).into_par_iter().map(|i| eval_alpha(phantom, &grid.point(i))).collect();
        let mut s = Self { grid, alpha, dt: f64::NAN, symbol: Vec::new() };
        s.set_dt(dt);
        s
    }

    pub fn set_dt(&mut self, dt: f64) {
        if dt == self.dt {
            return;
        }
        let grid = self.grid;
        let scale = 1.0 / grid.len() as f64;
        self.symbol = (0..grid.len())
            .into_par_iter()
            .map(|i| Complex64::from_polar(scale, -0.5 * dt * norm2(&grid.wavevector(i))))
            .collect();
        self.dt = dt;
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn nonlinear(&self, u: &mut [Complex64], tau: f64) {
        u.par_iter_mut().zip(self.alpha.par_iter()).for_each(|(z, &a)| {
            if a != 0.0 {
                *z *= Complex64::from_polar(1.0, -tau * a * z.norm_sqr());
            }
        });
    }

    pub fn linear(&self, u: &mut [Complex64]) {
        let (n, d) = (self.grid.n(), self.grid.d());
        fft::transform(u, n, d, Direction::Forward);
        u.par_iter_mut().zip(self.symbol.par_iter()).for_each(|(z, m)| *z *= m);
        fft::transform(u, n, d, Direction::Inverse);
    }

    /// `steps` Strang steps with the interior half-steps fused.
    pub fn advance(&self, u: &mut [Complex64], steps: usize) {
        if steps == 0 {
            return;
        }
        self.nonlinear(u, 0.5 * self.dt);
        for k in 0..steps {
            self.linear(u);
            let tau = if k + 1 == steps { 0.5 * self.dt } else { self.dt };
            self.nonlinear(u, tau);
        }
    }
}

/// Evolves `u0` from its time stamp to `t_end`, emitting fields at the
/// configured record times (and always at `t_end`).
pub fn evolve(u0: &Field, phantom: &Phantom, config: &SolverConfig, t_end: f64) -> Result<EvolutionRecord> {
    u0.ensure_finite("initial data")?;
    let t0 = u0.t;
    if !(t_end >= t0) {
        return Err(Error::InvalidParameter(format!("evolution end {t_end} precedes start {t0}")));
    }
    let dt = config.dt_for(&u0.grid);
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    let stride = config.monitor_stride.max(1);
    let mut stops: Vec<f64> = config
        .record_times
        .iter()
        .copied()
        .filter(|&t| t >= t0 - 1e-12 && t <= t_end + 1e-12)
        .collect();
    if stops.last().map_or(true, |&t| (t - t_end).abs() > 1e-12) {
        stops.push(t_end);
    }

    let mut stepper = Stepper::new(u0.grid, phantom, dt);
    let mut u = u0.values.clone();
    let mut t = t0;
    let mut rec = EvolutionRecord {
        record_times: Vec::new(),
        fields: Vec::new(),
        monitor_times: Vec::new(),
        l2: Vec::new(),
        wiener: Vec::new(),
        sup: Vec::new(),
        steps: 0,
    };
    push_monitors(&mut rec, u0);
    let mut since_monitor = 0usize;
    for stop in stops {
        let gap = stop - t;
        let steps = if gap <= 1e-12 { 0 } else { (gap / dt - 1e-9).ceil() as usize };
        if steps > 0 {
            stepper.set_dt(gap / steps as f64);
            let mut done = 0;
            while done < steps {
                let chunk = (stride - since_monitor).min(steps - done);
                stepper.advance(&mut u, chunk);
                done += chunk;
                since_monitor += chunk;
                rec.steps += chunk;
                let now = t + gap * done as f64 / steps as f64;
                if since_monitor == stride {
                    since_monitor = 0;
                    let field = Field { grid: u0.grid, t: now, values: u.clone() };
                    if !field.is_finite() {
                        return Err(blow_up(now, &rec));
                    }
                    push_monitors(&mut rec, &field);
                }
            }
        }
        t = stop;
        let field = Field { grid: u0.grid, t: stop, values: u.clone() };
        if !field.is_finite() {
            return Err(blow_up(stop, &rec));
        }
        rec.record_times.push(stop);
        rec.fields.push(field);
    }
    Ok(rec)
}

fn push_monitors(rec: &mut EvolutionRecord, f: &Field) {
    rec.monitor_times.push(f.t);
    rec.l2.push(l2_norm(f));
    rec.wiener.push(wiener_norm(f));
    rec.sup.push(sup_norm(f));
}

fn blow_up(t: f64, rec: &EvolutionRecord) -> Error {
    let detail = match rec.wiener.last() {
        Some(w) => format!(
            "non-finite values after {} steps; last Wiener norm {w:.4e} ({:.3}× initial)",
            rec.steps,
            w / rec.wiener[0]
        ),
        None => "non-finite values".into(),
    };
    Error::BlowUp { t, detail }
}

/// `steps` Strang steps of signed size `dt` (negative runs backward).
pub fn evolve_steps(u0: &Field, phantom: &Phantom, dt: f64, steps: usize) -> Result<Field> {
    let stepper = Stepper::new(u0.grid, phantom, dt);
    let mut u = u0.values.clone();
    stepper.advance(&mut u, steps);
    let out = Field { grid: u0.grid, t: u0.t + dt * steps as f64, values: u };
    if !out.is_finite() {
        return Err(Error::BlowUp { t: out.t, detail: "non-finite values".into() });
    }
    Ok(out)
}

/// Fixed point of the Duhamel map on uniform nodes over `[−T, T]`.
#[derive(Clone, Debug)]
pub struct PicardSolution {
    pub times: Vec<f64>,
    pub fields: Vec<Field>,
    /// Successive distances `sup_j W(u^{k+1}(t_j) − u^k(t_j))`.
    pub increments: Vec<f64>,
    /// `increments[k] / increments[k−1]`.
    pub ratios: Vec<f64>,
    pub iterations: usize,
    /// `24·T·W(u₀)²·W(α)`, the a-priori contraction bound.
    pub contraction_estimate: f64,
}

pub fn contraction_estimate(u0: &Field, phantom: &Phantom, horizon: f64) -> f64 {
    let alpha = Field::from_fn(u0.grid, 0.0, |x| Complex64::new(eval_alpha(phantom, x), 0.0));
    24.0 * horizon * wiener_norm(u0).powi(2) * wiener_norm(&alpha)
}

/// Iterates `Ψ[u](t) = e^{i(t+T)Δ/2}u₀ − i∫_{−T}^{t} e^{i(t−s)Δ/2}[α|u|²u](s) ds`
/// with the trapezoidal rule on `n_quadrature_nodes` uniform nodes, starting
/// from the free evolution.
///
/// Works in the interaction picture `w(t) = e^{−i(t+T)Δ/2}u(t)`, where the
/// Duhamel integral becomes a cumulative sum of spectral samples.
pub fn picard_solve(u0: &Field, phantom: &Phantom, horizon: f64, config: &PicardConfig) -> Result<PicardSolution> {
    let errs = config.violations();
    if !errs.is_empty() {
        return Err(Error::Validation(errs));
    }
    let estimate = contraction_estimate(u0, phantom, horizon);
    if !(estimate < 0.5) {
        return Err(Error::NotSmallData { estimate });
    }
    let grid = u0.grid;
    let (n, d, len) = (grid.n(), grid.d(), grid.len());
    let nodes = config.n_quadrature_nodes;
    let h = 2.0 * horizon / (nodes - 1) as f64;
    let times: Vec<f64> = (0..nodes).map(|j| -horizon + h * j as f64).collect();
    let alpha: Vec<f64> = (0..len).map(|i| eval_alpha(phantom, &grid.point(i))).collect();
    let k2: Vec<f64> = (0..len).map(|i| norm2(&grid.wavevector(i))).collect();

    // Raw DFT of u₀; the interaction-picture state is constant for free flow.
    let mut w0 = u0.values.clone();
    fft::transform(&mut w0, n, d, Direction::Forward);
    let mut w: Vec<Vec<Complex64>> = vec![w0.clone(); nodes];

    let mut increments = Vec::new();
    let mut ratios = Vec::new();
    let mut over_one = 0;
    for iter in 1..=config.max_iterations {
        // G_m = e^{+i(s_m+T)|y|²/2} DFT[α|u|²u](s_m).
        let g: Vec<Vec<Complex64>> = times
            .par_iter()
            .zip(w.par_iter())
            .map(|(&s, wm)| {
                let tau = s + horizon;
                let mut buf: Vec<Complex64> = wm
                    .iter()
                    .zip(&k2)
                    .map(|(z, k)| z * Complex64::from_polar(1.0 / len as f64, -0.5 * tau * k))
                    .collect();
                fft::transform(&mut buf, n, d, Direction::Inverse);
                for (z, a) in buf.iter_mut().zip(&alpha) {
                    *z = *a * z.norm_sqr() * *z;
                }
                fft::transform(&mut buf, n, d, Direction::Forward);
                for (z, k) in buf.iter_mut().zip(&k2) {
                    *z *= Complex64::from_polar(1.0, 0.5 * tau * k);
                }
                buf
            })
            .collect();
        let mut next = Vec::with_capacity(nodes);
        let mut acc = vec![Complex64::default(); len];
        for j in 0..nodes {
            // Trapezoid on [s_0, s_j]: h(½G_0 + G_1 + … + G_{j−1} + ½G_j).
            if j > 0 {
                for ((a, g1), g0) in acc.iter_mut().zip(&g[j]).zip(&g[j - 1]) {
                    *a += 0.5 * h * (g1 + g0);
                }
            }
            let wj: Vec<Complex64> = w0.iter().zip(&acc).map(|(z, a)| z - Complex64::i() * a).collect();
            next.push(wj);
        }
        // W(u^{k+1} − u^k) = n^{-d} Σ |ΔDFT|, propagator-invariant.
        let delta = next
            .iter()
            .zip(&w)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum::<f64>() / len as f64)
            .fold(0.0, f64::max);
        w = next;
        if let Some(&prev) = increments.last() {
            let r = if prev > 0.0 { delta / prev } else { 0.0 };
            ratios.push(r);
            over_one = if r >= 1.0 { over_one + 1 } else { 0 };
            if over_one >= 3 {
                return Err(Error::Diverged { iterations: iter, ratios });
            }
        }
        increments.push(delta);
        if delta < config.fixed_point_tol {
            let fields = times
                .iter()
                .zip(&w)
                .map(|(&t, wj)| {
                    let tau = t + horizon;
                    let mut buf: Vec<Complex64> = wj
                        .iter()
                        .zip(&k2)
                        .map(|(z, k)| z * Complex64::from_polar(1.0 / len as f64, -0.5 * tau * k))
                        .collect();
                    fft::transform(&mut buf, n, d, Direction::Inverse);
                    Field { grid, t, values: buf }
                })
                .collect();
            return Ok(PicardSolution {
                times,
                fields,
                increments,
                ratios,
                iterations: iter,
                contraction_estimate: estimate,
            });
        }
    }
    Err(Error::NotConverged { iterations: config.max_iterations, tol: config.fixed_point_tol })
}

/// Picard on `n` and `(n+1)/2` nested nodes against split-step at the
/// shared node times. Trapezoid error is `O(h²)`, so `(4u_fine − u_coarse)/3`
/// removes the leading term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub fine_nodes: usize,
    pub coarse_nodes: usize,
    pub split_step_dt: f64,
    /// `max_t W(u_picard − u_split) / W(u_split)` on the coarse node times.
    pub fine_distance: f64,
    pub coarse_distance: f64,
    pub extrapolated_distance: f64,
    /// `log2(coarse_distance / fine_distance)`.
    pub observed_order: f64,
    pub max_ratio: f64,
    pub iterations: usize,
    pub contraction_estimate: f64,
}

pub fn cross_validate(
    u0: &Field,
    phantom: &Phantom,
    horizon: f64,
    picard: &PicardConfig,
    dt: f64,
) -> Result<CrossValidation> {
    let fine_nodes = picard.n_quadrature_nodes;
    if fine_nodes % 2 == 0 || fine_nodes < 3 {
        return Err(Error::InvalidParameter(format!("nested refinement needs an odd node count, got {fine_nodes}")));
    }
    let coarse_nodes = (fine_nodes + 1) / 2;
    let fine = picard_solve(u0, phantom, horizon, picard)?;
    let coarse = picard_solve(u0, phantom, horizon, &PicardConfig { n_quadrature_nodes: coarse_nodes, ..picard.clone() })?;
    let solver = SolverConfig { dt: Some(dt), record_times: coarse.times.clone(), ..SolverConfig::default() };
    let rec = evolve(u0, phantom, &solver, horizon)?;
    let (mut df, mut dc, mut de) = (0.0f64, 0.0f64, 0.0f64);
    for (k, reference) in rec.fields.iter().enumerate() {
        let (f, c) = (&fine.fields[2 * k], &coarse.fields[k]);
        let scale = wiener_norm(reference);
        let extrapolated = f.zip_with(c, |a, b| (4.0 * a - b) / 3.0)?;
        df = df.max(wiener_norm(&f.sub(reference)?) / scale);
        dc = dc.max(wiener_norm(&c.sub(reference)?) / scale);
        de = de.max(wiener_norm(&extrapolated.sub(reference)?) / scale);
    }
    let max_ratio = fine.ratios.iter().chain(&coarse.ratios).copied().fold(0.0, f64::max);
    Ok(CrossValidation {
        fine_nodes,
        coarse_nodes,
        split_step_dt: dt,
        fine_distance: df,
        coarse_distance: dc,
        extrapolated_distance: de,
        observed_order: (dc / df).log2(),
        max_ratio,
        iterations: fine.iterations,
        contraction_estimate: fine.contraction_estimate,
    })
}
