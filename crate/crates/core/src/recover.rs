//! Line integrals of α from the nonlinear phase at `t = T`, sinogram
//! assembly over directions and filtered backprojection in two dimensions.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{free_propagate, norm2, Field, GridSpec, Point, SpectralInterpolator};
use crate::models::{eval_alpha, eval_envelope, full_line_integral, Phantom, DEFAULT_ORACLE_TOL};
use crate::solver::{evolve, SolverConfig};
use crate::wavepacket::{approx_value, initial_data, WavePacketParams};

pub const DEFAULT_THETA_MASK: f64 = 0.5;

/// Where the sinogram values come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Direct quadrature of α along each line.
    Oracle,
    /// Phase of the approximate solution `v(T, ·)`.
    ExactFormula,
    /// Phase of the split-step solution `u(T, ·)`.
    PdeSolver,
}

/// What the measured field is divided by before taking the phase.
#[derive(Clone, Copy, Debug)]
pub enum Reference<'a> {
    /// The transported envelope `ε^p a₀(ε(x − Tξ)) e^{iΦ(T, x)}`.
    Envelope,
    /// A field evolved without α from the same initial data.
    FreeFlow(&'a Field),
}

/// Pointwise access to a complex field at arbitrary positions.
pub trait PointSampler: Sync {
    fn sample(&self, x: &Point) -> Complex64;
}

impl PointSampler for SpectralInterpolator<'_> {
    fn sample(&self, x: &Point) -> Complex64 {
        self.eval(x)
    }
}

/// The approximate solution evaluated in closed form at a fixed time.
pub struct ExactSampler<'a> {
    pub params: &'a WavePacketParams,
    pub t: f64,
}

impl PointSampler for ExactSampler<'_> {
    fn sample(&self, x: &Point) -> Complex64 {
        approx_value(self.params, self.t, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineSample {
    pub offset: f64,
    /// Arclength integral of α over the segment `[x − 2Tξ, x]`.
    pub value: f64,
    pub reliable: bool,
}

/// Unit normal `e⊥` used for offsets in two dimensions.
pub fn normal_2d(xi: &Point) -> Point {
    let len = norm2(xi).sqrt();
    [-xi[1] / len, xi[0] / len, 0.0]
}

/// `x = Tξ + b e⊥`.
pub fn sample_point(params: &WavePacketParams, offset: f64) -> Point {
    let e = normal_2d(&params.xi);
    let t = params.horizon;
    [t * params.xi[0] + offset * e[0], t * params.xi[1] + offset * e[1], 0.0]
}

/// Line integrals from a field stamped `t = T` (two dimensions).
pub fn extract_line_integrals(
    u_final: &Field,
    params: &WavePacketParams,
    offsets: &[f64],
    theta_mask: f64,
    reference: Reference<'_>,
) -> Result<Vec<LineSample>> {
    if (u_final.t - params.horizon).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "extraction needs the field at t = T = {}, got t = {}",
            params.horizon, u_final.t
        )));
    }
    let interp = SpectralInterpolator::new(u_final)?;
    match reference {
        Reference::Envelope => extract_with_sampler(&interp, params, offsets, theta_mask, None),
        Reference::FreeFlow(f) => {
            let r = SpectralInterpolator::new(f)?;
            extract_with_sampler(&interp, params, offsets, theta_mask, Some(&r))
        }
    }
}

/// Extraction from any sampler of `u(T, ·)`; `reference = None` uses the envelope.
pub fn extract_with_sampler(
    sampler: &dyn PointSampler,
    params: &WavePacketParams,
    offsets: &[f64],
    theta_mask: f64,
    reference: Option<&dyn PointSampler>,
) -> Result<Vec<LineSample>> {
    if params.d != 2 {
        return Err(Error::InvalidParameter("offset extraction is parametrized for d = 2".into()));
    }
    let points: Vec<Point> = offsets.iter().map(|&b| sample_point(params, b)).collect();
    let raw = extract_at_points(sampler, params, &points, theta_mask, reference)?;
    Ok(raw
        .into_iter()
        .zip(offsets)
        .map(|((value, reliable), &offset)| LineSample { offset, value, reliable })
        .collect())
}

/// Extraction at arbitrary sample points in any dimension: `(value, reliable)`.
pub fn extract_at_points(
    sampler: &dyn PointSampler,
    params: &WavePacketParams,
    points: &[Point],
    theta_mask: f64,
    reference: Option<&dyn PointSampler>,
) -> Result<Vec<(f64, bool)>> {
    let t = params.horizon;
    let eps_p = params.epsilon.powf(params.p);
    let eps_2p = params.epsilon.powf(2.0 * params.p);
    let speed = params.speed();
    let threshold = theta_mask * params.envelope.amplitude;
    let out: Vec<(f64, bool)> = points
        .par_iter()
        .map(|x| {
            let g = eval_envelope(&params.envelope, &params.envelope_arg(t, x));
            let denom = match reference {
                Some(r) => r.sample(x),
                None => Complex64::from_polar(eps_p * g, params.carrier_phase(t, x)),
            };
            let ratio = sampler.sample(x) / denom;
            // Time-parametrized integral times |ξ| is the arclength integral.
            let value = -ratio.arg() / (eps_2p * g * g) * speed;
            let reliable = g >= threshold && value.is_finite();
            (if reliable { value } else { 0.0 }, reliable)
        })
        .collect();
    if !out.iter().any(|(_, r)| *r) {
        return Err(Error::NoReliableSamples(format!(
            "envelope below {theta_mask}·A at every sample point"
        )));
    }
    Ok(out)
}

/// Sampled X-ray transform indexed `[angle][offset]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sinogram {
    /// Directions actually used (after lattice snapping for PDE sources).
    pub angles: Vec<f64>,
    pub offsets: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    /// Per-angle failures that were masked out instead of aborting.
    #[serde(default)]
    pub failures: Vec<(usize, String)>,
}

impl Sinogram {
    pub fn zeros(angles: Vec<f64>, offsets: Vec<f64>) -> Self {
        let (na, no) = (angles.len(), offsets.len());
        Self { angles, offsets, values: vec![vec![0.0; no]; na], mask: vec![vec![true; no]; na], failures: Vec::new() }
    }

    pub fn max_abs_difference(&self, other: &Sinogram) -> f64 {
        let mut worst = 0.0f64;
        for (ra, rb) in self.values.iter().zip(&other.values) {
            for (a, b) in ra.iter().zip(rb) {
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }
}

/// `count` equally spaced angles in `[0, π)`.
pub fn uniform_angles(count: usize) -> Vec<f64> {
    (0..count).map(|j| PI * j as f64 / count as f64).collect()
}

/// `count` equally spaced offsets in `[−b_max, b_max]`.
pub fn uniform_offsets(count: usize, b_max: f64) -> Vec<f64> {
    if count == 1 {
        return vec![0.0];
    }
    (0..count).map(|i| -b_max + 2.0 * b_max * i as f64 / (count - 1) as f64).collect()
}

/// Ground-truth integral of α over the line `{x·e⊥ = b}` with direction angle `θ`.
pub fn oracle_line(phantom: &Phantom, angle: f64, offset: f64, tol: f64) -> f64 {
    let xi = [angle.cos(), angle.sin(), 0.0];
    let x = [-offset * xi[1], offset * xi[0], 0.0];
    full_line_integral(phantom, &x, &xi, tol).expect("unit direction by construction")
}

pub fn oracle_sinogram(phantom: &Phantom, angles: &[f64], offsets: &[f64], tol: f64) -> Sinogram {
    let mut sino = Sinogram::zeros(angles.to_vec(), offsets.to_vec());
    sino.values = angles
        .par_iter()
        .map(|&th| offsets.iter().map(|&b| oracle_line(phantom, th, b, tol)).collect())
        .collect();
    sino
}

/// Inputs shared by every direction of a sinogram run.
#[derive(Clone, Debug)]
pub struct SinogramSetup<'a> {
    pub template: &'a WavePacketParams,
    pub grid: &'a GridSpec,
    pub solver: &'a SolverConfig,
    pub theta_mask: f64,
}

/// One sinogram row per angle. Failures in a row are recorded and masked.
pub fn assemble_sinogram(
    phantom: &Phantom,
    setup: &SinogramSetup<'_>,
    angles: &[f64],
    offsets: &[f64],
    source: Source,
) -> Result<Sinogram> {
    if setup.grid.d() != 2 {
        return Err(Error::InvalidParameter("sinograms are parametrized for d = 2".into()));
    }
    for (i, a) in angles.iter().enumerate() {
        if angles[..i].iter().any(|b| (a - b).abs() < 1e-12) {
            return Err(Error::InvalidParameter(format!("angle {a} repeated")));
        }
    }
    if source == Source::Oracle {
        return Ok(oracle_sinogram(phantom, angles, offsets, DEFAULT_ORACLE_TOL));
    }
    let rows: Vec<(f64, Result<Vec<LineSample>>)> = angles
        .par_iter()
        .map(|&theta| sinogram_row(phantom, setup, theta, offsets, source))
        .collect();
    let mut sino = Sinogram::zeros(angles.to_vec(), offsets.to_vec());
    for (j, (actual, row)) in rows.into_iter().enumerate() {
        sino.angles[j] = actual;
        match row {
            Ok(samples) => {
                sino.values[j] = samples.iter().map(|s| s.value).collect();
                sino.mask[j] = samples.iter().map(|s| s.reliable).collect();
            }
            Err(e) => {
                sino.mask[j] = vec![false; offsets.len()];
                sino.failures.push((j, e.to_string()));
            }
        }
    }
    Ok(sino)
}

/// Returns the snapped angle and that direction's samples.
fn sinogram_row(
    phantom: &Phantom,
    setup: &SinogramSetup<'_>,
    theta: f64,
    offsets: &[f64],
    source: Source,
) -> (f64, Result<Vec<LineSample>>) {
    let tpl = setup.template;
    let params = match WavePacketParams::new(
        tpl.epsilon,
        tpl.p,
        tpl.horizon,
        &[theta.cos(), theta.sin()],
        tpl.envelope,
        phantom.clone(),
        setup.grid,
    ) {
        Ok(p) => p,
        Err(e) => return (theta, Err(e)),
    };
    let actual = params.xi[1].atan2(params.xi[0]).rem_euclid(PI);
    let run = || -> Result<Vec<LineSample>> {
        match source {
            Source::ExactFormula => {
                let exact = ExactSampler { params: &params, t: params.horizon };
                extract_with_sampler(&exact, &params, offsets, setup.theta_mask, None)
            }
            Source::PdeSolver => {
                let u0 = initial_data(&params, setup.grid)?;
                let rec = evolve(&u0, &params.phantom, &SolverConfig { record_times: Vec::new(), ..setup.solver.clone() }, params.horizon)?;
                let free = free_propagate(&u0, 2.0 * params.horizon)?;
                extract_line_integrals(rec.final_field(), &params, offsets, setup.theta_mask, Reference::FreeFlow(&free))
            }
            Source::Oracle => unreachable!("handled by the caller"),
        }
    };
    (actual, run())
}

/// Extraction error of one sinogram row against the oracle at the same angle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleError {
    pub angle: f64,
    /// `‖value − oracle‖₂ / ‖oracle‖₂` over reliable offsets.
    pub relative_l2: f64,
    pub max_abs: f64,
    pub reliable: usize,
}

pub fn extraction_errors(sino: &Sinogram, phantom: &Phantom, tol: f64) -> Vec<AngleError> {
    sino.angles
        .par_iter()
        .enumerate()
        .map(|(j, &angle)| {
            let (mut num, mut den, mut max_abs, mut count) = (0.0, 0.0, 0.0f64, 0);
            for (i, &b) in sino.offsets.iter().enumerate() {
                if !sino.mask[j][i] {
                    continue;
                }
                let o = oracle_line(phantom, angle, b, tol);
                let e = sino.values[j][i] - o;
                num += e * e;
                den += o * o;
                max_abs = max_abs.max(e.abs());
                count += 1;
            }
            let relative_l2 = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
            AngleError { angle, relative_l2, max_abs, reliable: count }
        })
        .collect()
}

/// Frequency window applied on top of the ramp.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    RamLak,
    Cosine,
}

/// Ramp-filtered profile sampled at the input offsets.
///
/// Convolution with the band-limited ramp kernel `h(0) = 1/(4τ²)`,
/// `h(k odd) = −1/(π²k²τ²)`, `h(k even) = 0`, done by zero-padded FFT.
fn ramp_filter(profile: &[f64], spacing: f64, window: Window) -> Vec<f64> {
    let n = profile.len();
    let size = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut kernel = vec![Complex64::default(); size];
    for (slot, k) in kernel.iter_mut().enumerate() {
        let m = if slot <= size / 2 { slot as i64 } else { slot as i64 - size as i64 };
        let h = if m == 0 {
            1.0 / (4.0 * spacing * spacing)
        } else if m % 2 != 0 {
            -1.0 / (PI * PI * (m * m) as f64 * spacing * spacing)
        } else {
            0.0
        };
        *k = Complex64::new(h, 0.0);
    }
    fwd.process(&mut kernel);
    if window == Window::Cosine {
        for (slot, k) in kernel.iter_mut().enumerate() {
            let m = if slot <= size / 2 { slot as f64 } else { slot as f64 - size as f64 };
            *k *= (PI * m / size as f64).cos();
        }
    }
    let mut buf: Vec<Complex64> = profile.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(size, Complex64::default());
    fwd.process(&mut buf);
    for (b, k) in buf.iter_mut().zip(&kernel) {
        *b *= k;
    }
    inv.process(&mut buf);
    let scale = spacing / size as f64;
    buf[..n].iter().map(|z| z.re * scale).collect()
}

/// Per-angle quadrature weights: half the gap to each neighbour, wrapping at π.
fn angle_weights(angles: &[f64]) -> Vec<f64> {
    let n = angles.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| angles[a].total_cmp(&angles[b]));
    let mut w = vec![0.0; n];
    for k in 0..n {
        let prev = if k == 0 { angles[order[n - 1]] - PI } else { angles[order[k - 1]] };
        let next = if k + 1 == n { angles[order[0]] + PI } else { angles[order[k + 1]] };
        w[order[k]] = 0.5 * (next - prev);
    }
    w
}

/// Filtered backprojection onto the nodes of `out_grid`, clipped at zero and
/// zero outside the disc of radius `min |offset|`.
pub fn fbp_reconstruct(sino: &Sinogram, out_grid: &GridSpec, window: Window) -> Result<Field> {
    if out_grid.d() != 2 {
        return Err(Error::InvalidParameter("reconstruction grid must be two-dimensional".into()));
    }
    if sino.angles.len() < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 angles, got {}", sino.angles.len())));
    }
    let offsets = &sino.offsets;
    if offsets.len() < 2 {
        return Err(Error::InvalidParameter("need at least 2 offsets".into()));
    }
    let spacing = offsets[1] - offsets[0];
    if !(spacing > 0.0) || offsets.windows(2).any(|w| ((w[1] - w[0]) - spacing).abs() > 1e-9 * spacing.abs().max(1.0)) {
        return Err(Error::InvalidParameter("offsets must be uniformly spaced and increasing".into()));
    }
    let weights = angle_weights(&sino.angles);
    let filtered: Vec<Vec<f64>> = sino
        .values
        .par_iter()
        .zip(&sino.mask)
        .map(|(row, mask)| {
            let masked: Vec<f64> = row.iter().zip(mask).map(|(v, &m)| if m { *v } else { 0.0 }).collect();
            ramp_filter(&masked, spacing, window)
        })
        .collect();
    let b0 = offsets[0];
    let last = offsets.len() - 1;
    // Only the disc seen by every line is reconstructed.
    let fov2 = b0.abs().min(offsets[last].abs()).powi(2);
    let frames: Vec<(f64, f64, f64)> = sino.angles.iter().zip(&weights).map(|(a, w)| (-a.sin(), a.cos(), *w)).collect();
    let values = (0..out_grid.len())
        .into_par_iter()
        .map(|i| {
            let x = out_grid.point(i);
            if x[0] * x[0] + x[1] * x[1] > fov2 {
                return Complex64::default();
            }
            let mut acc = 0.0;
            for ((ex, ey, w), q) in frames.iter().zip(&filtered) {
                let s = (x[0] * ex + x[1] * ey - b0) / spacing;
                if s < 0.0 || s > last as f64 {
                    continue;
                }
                let k = (s.floor() as usize).min(last - 1);
                let f = s - k as f64;
                acc += w * ((1.0 - f) * q[k] + f * q[k + 1]);
            }
            Complex64::new(acc.max(0.0), 0.0)
        })
        .collect();
    Field::new(*out_grid, 0.0, values)
}

/// `‖rec − α‖₂ / ‖α‖₂` over the nodes of the reconstruction grid.
pub fn relative_l2_error(reconstruction: &Field, phantom: &Phantom) -> f64 {
    let grid = reconstruction.grid;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, z) in reconstruction.values.iter().enumerate() {
        let a = eval_alpha(phantom, &grid.point(i));
        num += (z.re - a).powi(2);
        den += a * a;
    }
    (num / den).sqrt()
}

#[derive(Clone, Debug)]
pub struct ReconstructionReport {
    pub reconstruction: Field,
    pub relative_l2_error: f64,
    pub angle_errors: Vec<AngleError>,
}

/// Reconstruct and score against the phantom; angle errors are skipped for
/// oracle sinograms.
pub fn reconstruct_report(
    sino: &Sinogram,
    phantom: &Phantom,
    out_grid: &GridSpec,
    window: Window,
    source: Source,
) -> Result<ReconstructionReport> {
    let reconstruction = fbp_reconstruct(sino, out_grid, window)?;
    let relative_l2_error = relative_l2_error(&reconstruction, phantom);
    let angle_errors = if source == Source::Oracle { Vec::new() } else { extraction_errors(sino, phantom, DEFAULT_ORACLE_TOL) };
    Ok(ReconstructionReport { reconstruction, relative_l2_error, angle_errors })
}
