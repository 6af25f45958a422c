//! ε-sweeps of `‖u − v‖` with log-log slope fits, and the propagated
//! residual norm `sup_t W(∫_{−T}^{t} e^{i(t−s)Δ/2} E(s) ds)`.

use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::fft::{self, Direction};
use crate::grid::{norm2, sup_norm, wiener_norm, GridSpec};
use crate::models::{EnvelopeSpec, Phantom};
use crate::quad::gauss_legendre;
use crate::solver::{evolve, uniform_times, SolverConfig};
use crate::wavepacket::{approx_solution, initial_data, residual_closed_form, WavePacketParams};

/// Gauss–Legendre nodes per gap between record times.
pub const RESIDUAL_NODES_PER_GAP: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Sup,
    Wiener,
}

/// Everything except `ε` that defines one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepBase {
    pub grid: GridSpec,
    pub horizon: f64,
    pub direction: Vec<f64>,
    pub envelope: EnvelopeSpec,
    pub phantom: Phantom,
    pub solver: SolverConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    pub p: f64,
    pub sigma: f64,
    pub norms: Vec<NormKind>,
    pub dt_refinement: bool,
    pub base: SweepBase,
}

impl SweepConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.epsilons.len() < 4 {
            out.push(format!("sweep needs at least 4 epsilons, got {}", self.epsilons.len()));
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            out.push("sweep epsilons must be strictly decreasing".into());
        }
        if !(self.sigma > 0.0) {
            out.push(format!("sweep sigma must be positive, got {}", self.sigma));
        }
        if self.norms.is_empty() {
            out.push("sweep norms must name at least one of sup, wiener".into());
        }
        for &eps in &self.epsilons {
            if let Err(Error::Validation(list)) = self.params(eps) {
                out.extend(list.into_iter().map(|m| format!("epsilon = {eps}: {m}")));
            }
        }
        out.extend(self.base.solver.violations(self.base.horizon));
        out
    }

    pub fn params(&self, epsilon: f64) -> Result<WavePacketParams> {
        WavePacketParams::new(
            epsilon,
            self.p,
            self.base.horizon,
            &self.base.direction,
            self.base.envelope,
            self.base.phantom.clone(),
            &self.base.grid,
        )
    }

    /// `min(p + 2, 3p − 2)`.
    pub fn predicted_exponent(&self) -> f64 {
        (self.p + 2.0).min(3.0 * self.p - 2.0)
    }

    fn record_times(&self) -> Vec<f64> {
        if self.base.solver.record_times.is_empty() {
            uniform_times(-self.base.horizon, self.base.horizon, 17)
        } else {
            self.base.solver.record_times.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub error_sup: f64,
    pub error_wiener: f64,
    pub residual_norm: f64,
    /// `max_t W(u(t)) / W(u₀)`.
    pub wiener_growth: f64,
    pub runtime_s: f64,
    /// Set when the solve failed; the errors are then NaN and excluded from fits.
    pub flagged: Option<String>,
}

impl SweepPoint {
    pub fn is_reliable(&self) -> bool {
        self.flagged.is_none() && self.error_sup > 0.0 && self.error_wiener > 0.0
    }
}

/// Least-squares line `log y = slope·log x + c` with a 95% interval on the slope.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub points: usize,
}

pub fn fit_log_slope(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("slope fit needs 2 positive points, got {n}")));
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (ci_low, ci_high) = if n > 2 {
        let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        let se = (rss / (n - 2) as f64 / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, (n - 2) as f64)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .inverse_cdf(0.975);
        (slope - t * se, slope + t * se)
    } else {
        (f64::NEG_INFINITY, f64::INFINITY)
    };
    Ok(SlopeFit { slope, intercept, ci_low, ci_high, points: n })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtRefinement {
    pub epsilon: f64,
    pub dt: f64,
    pub error_sup: f64,
    pub error_sup_half_dt: f64,
    pub relative_change: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub p: f64,
    pub sigma: f64,
    pub horizon: f64,
    pub predicted_exponent: f64,
    pub points: Vec<SweepPoint>,
    pub fit_sup: Option<SlopeFit>,
    pub fit_wiener: Option<SlopeFit>,
    pub fit_residual: Option<SlopeFit>,
    /// Sup-norm slope after dropping the largest ε.
    pub fit_sup_drop_largest: Option<SlopeFit>,
    pub dt_refinement: Option<DtRefinement>,
    /// `error_wiener / residual_norm` per reliable point.
    pub stability_constants: Vec<f64>,
}

impl SweepResult {
    pub fn stability_spread(&self) -> f64 {
        let max = self.stability_constants.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.stability_constants.iter().copied().fold(f64::INFINITY, f64::min);
        max / min
    }

    pub fn max_wiener_growth(&self) -> f64 {
        self.points.iter().map(|p| p.wiener_growth).fold(0.0, f64::max)
    }
}

/// `(max_t sup|u − v|, max_t W(u − v), max_t W(u)/W(u₀))` over the record times.
pub fn measure_errors(params: &WavePacketParams, grid: &GridSpec, solver: &SolverConfig) -> Result<(f64, f64, f64)> {
    let u0 = initial_data(params, grid)?;
    let rec = evolve(&u0, &params.phantom, solver, params.horizon)?;
    let per_time: Vec<Result<(f64, f64)>> = rec
        .fields
        .par_iter()
        .map(|u| {
            let v = approx_solution(params, grid, u.t)?;
            let diff = u.sub(&v)?;
            Ok((sup_norm(&diff), wiener_norm(&diff)))
        })
        .collect();
    let (mut es, mut ew) = (0.0f64, 0.0f64);
    for r in per_time {
        let (s, w) = r?;
        es = es.max(s);
        ew = ew.max(w);
    }
    Ok((es, ew, rec.max_wiener_ratio()))
}

/// `sup_k W(∫_{−T}^{t_k} e^{i(t_k−s)Δ/2} E(s) ds)` with `E` the closed-form
/// residual, Gauss–Legendre in `s` on each gap between record times.
///
/// The propagator is unimodular in frequency, so only the accumulated
/// `Σ w_m e^{i s_m |y|²/2} Ê(s_m)` is needed.
pub fn duhamel_residual_norm(params: &WavePacketParams, grid: &GridSpec, record_times: &[f64]) -> Result<f64> {
    let (n, d, len) = (grid.n(), grid.d(), grid.len());
    let mut stops: Vec<f64> = record_times.iter().copied().filter(|&t| t > -params.horizon).collect();
    if stops.is_empty() {
        stops.push(params.horizon);
    }
    let (gl_x, gl_w) = gauss_legendre(RESIDUAL_NODES_PER_GAP);
    let k2: Vec<f64> = (0..len).map(|i| norm2(&grid.wavevector(i))).collect();
    let mut acc = vec![Complex64::default(); len];
    let mut start = -params.horizon;
    let mut best = 0.0f64;
    for stop in stops {
        let (mid, half) = (0.5 * (start + stop), 0.5 * (stop - start));
        let contributions: Vec<Result<Vec<Complex64>>> = gl_x
            .par_iter()
            .zip(&gl_w)
            .map(|(&xk, &wk)| {
                let s = mid + half * xk;
                let mut e = residual_closed_form(params, grid, s)?.values;
                fft::transform(&mut e, n, d, Direction::Forward);
                let weight = half * wk;
                for (z, k) in e.iter_mut().zip(&k2) {
                    *z *= Complex64::from_polar(weight, 0.5 * s * k);
                }
                Ok(e)
            })
            .collect();
        for c in contributions {
            for (a, b) in acc.iter_mut().zip(c?) {
                *a += b;
            }
        }
        let w = acc.iter().map(|z| z.norm_sqr().sqrt()).sum::<f64>() / len as f64;
        best = best.max(w);
        start = stop;
    }
    Ok(best)
}

fn sweep_point(config: &SweepConfig, epsilon: f64, times: &[f64]) -> SweepPoint {
    let started = Instant::now();
    let grid = config.base.grid;
    let solver = SolverConfig { record_times: times.to_vec(), ..config.base.solver.clone() };
    let outcome = config.params(epsilon).and_then(|params| {
        let (es, ew, growth) = measure_errors(&params, &grid, &solver)?;
        let delta = duhamel_residual_norm(&params, &grid, times)?;
        Ok((es, ew, growth, delta))
    });
    let runtime_s = started.elapsed().as_secs_f64();
    match outcome {
        Ok((error_sup, error_wiener, wiener_growth, residual_norm)) => SweepPoint {
            epsilon,
            error_sup,
            error_wiener,
            residual_norm,
            wiener_growth,
            runtime_s,
            flagged: None,
        },
        Err(e) => SweepPoint {
            epsilon,
            error_sup: f64::NAN,
            error_wiener: f64::NAN,
            residual_norm: f64::NAN,
            wiener_growth: f64::NAN,
            runtime_s,
            flagged: Some(e.to_string()),
        },
    }
}

/// Runs every ε (concurrently), then fits slopes over the reliable points.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    let errs = config.violations();
    if !errs.is_empty() {
        return Err(Error::Validation(errs));
    }
    let times = config.record_times();
    let points: Vec<SweepPoint> = config.epsilons.par_iter().map(|&eps| sweep_point(config, eps, &times)).collect();

    let good: Vec<&SweepPoint> = points.iter().filter(|p| p.is_reliable()).collect();
    let eps: Vec<f64> = good.iter().map(|p| p.epsilon).collect();
    let col = |f: fn(&SweepPoint) -> f64| good.iter().map(|p| f(p)).collect::<Vec<f64>>();
    let wants = |k: NormKind| config.norms.contains(&k);
    let fit_sup = wants(NormKind::Sup).then(|| fit_log_slope(&eps, &col(|p| p.error_sup)).ok()).flatten();
    let fit_wiener = wants(NormKind::Wiener).then(|| fit_log_slope(&eps, &col(|p| p.error_wiener)).ok()).flatten();
    let fit_residual = fit_log_slope(&eps, &col(|p| p.residual_norm)).ok();
    let fit_sup_drop_largest = if eps.len() > 2 {
        fit_log_slope(&eps[1..], &col(|p| p.error_sup)[1..]).ok()
    } else {
        None
    };
    let stability_constants = good.iter().map(|p| p.error_wiener / p.residual_norm).collect();

    let dt_refinement = if config.dt_refinement {
        match good.last() {
            Some(smallest) => Some(refine_dt(config, smallest, &times)?),
            None => None,
        }
    } else {
        None
    };
    Ok(SweepResult {
        p: config.p,
        sigma: config.sigma,
        horizon: config.base.horizon,
        predicted_exponent: config.predicted_exponent(),
        points,
        fit_sup,
        fit_wiener,
        fit_residual,
        fit_sup_drop_largest,
        dt_refinement,
        stability_constants,
    })
}

fn refine_dt(config: &SweepConfig, point: &SweepPoint, times: &[f64]) -> Result<DtRefinement> {
    let grid = config.base.grid;
    let params = config.params(point.epsilon)?;
    let dt = config.base.solver.dt_for(&grid);
    let solver = SolverConfig { dt: Some(0.5 * dt), record_times: times.to_vec(), ..config.base.solver.clone() };
    let (fine, _, _) = measure_errors(&params, &grid, &solver)?;
    Ok(DtRefinement {
        epsilon: point.epsilon,
        dt,
        error_sup: point.error_sup,
        error_sup_half_dt: fine,
        relative_change: (fine - point.error_sup).abs() / point.error_sup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn slope_fit_recovers_power_law() {
        let x = [0.4, 0.3, 0.2, 0.1];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(2.5)).collect();
        let fit = fit_log_slope(&x, &y).unwrap();
        assert!((fit.slope - 2.5).abs() < 1e-12);
        assert!((fit.intercept - 3.0f64.ln()).abs() < 1e-12);
        assert!(fit.ci_high - fit.ci_low < 1e-9);
    }

    #[test]
    fn slope_interval_matches_textbook_formula() {
        // Residuals (+δ, −δ, −δ, +δ) around slope 2 on log x = 0, 1, 2, 3.
        let lx = [0.0f64, 1.0, 2.0, 3.0];
        let delta = 0.1;
        let ly: Vec<f64> = lx.iter().zip([1.0, -1.0, -1.0, 1.0]).map(|(x, s)| 2.0 * x + s * delta).collect();
        let x: Vec<f64> = lx.iter().map(|v| v.exp()).collect();
        let y: Vec<f64> = ly.iter().map(|v| v.exp()).collect();
        let fit = fit_log_slope(&x, &y).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        // se = sqrt(4δ²/2/5); t_{0.975,2} = 4.302652729911275.
        let se = (4.0 * delta * delta / 2.0 / 5.0f64).sqrt();
        assert!((fit.ci_high - 2.0 - 4.302652729911275 * se).abs() < 1e-9);
    }

    #[test]
    fn free_residual_norm_matches_closed_form() {
        let grid = GridSpec::new(2, 128, 12.0 * PI).unwrap();
        let env = EnvelopeSpec { amplitude: 1.3, width: 1.0 };
        let params = WavePacketParams::new(0.35, 2.0, 3.0, &[1.0, 0.0], env, Phantom::default(), &grid).unwrap();
        let times = uniform_times(-3.0, 3.0, 17);
        let measured = duhamel_residual_norm(&params, &grid, &times).unwrap();
        // |FT[i(v(t) − e^{i(t+T)Δ/2}u₀)]| = 2ε^p |ĝ₀(η)| |sin((t+T)|η|²/4)|, η = y − ξ.
        let (e, w, a) = (params.epsilon, env.width, env.amplitude);
        let expect = times[1..]
            .iter()
            .map(|&t| {
                (0..grid.len())
                    .map(|i| {
                        let y = grid.wavevector(i);
                        let eta2 = (y[0] - params.xi[0]).powi(2) + (y[1] - params.xi[1]).powi(2);
                        let g_hat = a * 2.0 * PI * w * w / (e * e) * (-w * w * eta2 / (2.0 * e * e)).exp();
                        2.0 * e.powf(2.0) * g_hat * ((t + 3.0) * eta2 / 4.0).sin().abs()
                    })
                    .sum::<f64>()
                    * grid.spectral_weight()
            })
            .fold(0.0, f64::max);
        assert!((measured - expect).abs() < 1e-8 * expect, "{measured} vs {expect}");
    }
}
