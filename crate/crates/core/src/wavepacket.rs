//! Wave-packet data, the transported amplitude, the approximate solution and
//! its closed-form residual.
//!
//! With `Φ(t, x) = x·ξ − |ξ|²t/2` and `z = ε(x − tξ)`,
//!
//! ```text
//! v(t, x) = ε^p a₀(z) exp{iΦ} exp{−i ε^{2p} a₀(z)² ∫_{−T}^{t} α(x − (t − s)ξ) ds}.
//! ```
//!
//! The lattice-snapped `ξ` is not exactly unit length, so the carrier uses
//! `|ξ|²` and line integrals are parametrized by time rather than arclength.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dot, norm2, Field, GridSpec, Point};
use crate::models::{
    eval_alpha, eval_envelope, eval_envelope_grad, eval_envelope_laplacian, line_integral_jet,
    line_integral_raw, EnvelopeSpec, Phantom, DEFAULT_ORACLE_TOL,
};
use crate::quad::{adaptive_simpson, DEFAULT_MAX_DEPTH};

/// Envelope widths kept between the packet's path and the box edge.
pub const BOX_TAIL_WIDTHS: f64 = 8.0;

/// Parameters of one packet experiment. Construct with [`WavePacketParams::new`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavePacketParams {
    pub d: usize,
    pub epsilon: f64,
    pub p: f64,
    pub horizon: f64,
    /// Lattice-snapped direction actually used.
    pub xi: Point,
    pub envelope: EnvelopeSpec,
    pub phantom: Phantom,
}

impl WavePacketParams {
    /// Snaps `direction` (normalized first) to the frequency lattice of `grid`
    /// and validates every guard, reporting all violations together.
    pub fn new(
        epsilon: f64,
        p: f64,
        horizon: f64,
        direction: &[f64],
        envelope: EnvelopeSpec,
        phantom: Phantom,
        grid: &GridSpec,
    ) -> Result<Self> {
        let d = grid.d();
        let mut errors = Vec::new();
        let mut target = [0.0; 3];
        if direction.len() != d {
            errors.push(format!("direction has {} components, expected {d}", direction.len()));
        } else {
            target[..d].copy_from_slice(direction);
        }
        let len = norm2(&target).sqrt();
        let xi = if len > 0.0 && len.is_finite() {
            grid.snap_to_lattice(&[target[0] / len, target[1] / len, target[2] / len])
        } else {
            errors.push("direction must be a nonzero finite vector".into());
            [0.0; 3]
        };
        let params = Self { d, epsilon, p, horizon, xi, envelope, phantom };
        errors.extend(params.violations(grid));
        if errors.is_empty() {
            Ok(params)
        } else {
            Err(Error::Validation(errors))
        }
    }

    /// Same packet at a different `ε`, revalidated.
    pub fn with_epsilon(&self, epsilon: f64, grid: &GridSpec) -> Result<Self> {
        let params = Self { epsilon, ..self.clone() };
        let errors = params.violations(grid);
        if errors.is_empty() {
            Ok(params)
        } else {
            Err(Error::Validation(errors))
        }
    }

    /// Every violated guard with the computed bound.
    pub fn violations(&self, grid: &GridSpec) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            out.push(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            out.push(format!("p must exceed 1, got {}", self.p));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            out.push(format!("horizon T must be positive, got {}", self.horizon));
        }
        let speed = self.speed();
        if speed > 0.0 && (speed - 1.0).abs() > 2.0 * grid.dy() {
            out.push(format!(
                "snapped direction has |ξ| = {speed:.6}, further than 2·dy = {:.6} from 1; refine the box",
                2.0 * grid.dy()
            ));
        }
        out.extend(self.envelope.violations());
        out.extend(self.phantom.violations(self.d));
        let support = self.phantom.support_radius();
        if !self.phantom.bumps.is_empty() && support >= self.horizon {
            out.push(format!("phantom support reaches radius {support:.4}, must stay inside |x| < T = {}", self.horizon));
        }
        let phase = self.phase_bound();
        if !(phase < std::f64::consts::PI) {
            out.push(format!("phase-wrap guard: ε^(2p)·A²·max line integral = {phase:.6} must be < π"));
        }
        let need = self.required_half_width();
        if grid.box_half_width() < need {
            out.push(format!(
                "box half-width {} too small: need ≥ 2T + {BOX_TAIL_WIDTHS}·w/ε = {need:.4}",
                grid.box_half_width()
            ));
        }
        out
    }

    pub fn speed(&self) -> f64 {
        norm2(&self.xi).sqrt()
    }

    /// Largest possible nonlinear phase, `ε^{2p} A² max_ℓ ∫_ℓ α`.
    pub fn phase_bound(&self) -> f64 {
        self.epsilon.powf(2.0 * self.p) * self.envelope.amplitude.powi(2) * self.phantom.max_line_integral()
    }

    /// `2T + 8w/ε`.
    pub fn required_half_width(&self) -> f64 {
        2.0 * self.horizon + BOX_TAIL_WIDTHS * self.envelope.width / self.epsilon
    }

    pub fn carrier_phase(&self, t: f64, x: &Point) -> f64 {
        dot(x, &self.xi) - 0.5 * norm2(&self.xi) * t
    }

    /// `z = ε(x − tξ)`, the envelope argument.
    pub fn envelope_arg(&self, t: f64, x: &Point) -> Point {
        let e = self.epsilon;
        [e * (x[0] - t * self.xi[0]), e * (x[1] - t * self.xi[1]), e * (x[2] - t * self.xi[2])]
    }

    /// `∫_{−T}^{t} α(x − (t − s)ξ) ds`, negative for `t < −T`.
    pub fn path_integral(&self, t: f64, x: &Point) -> f64 {
        let reach = t + self.horizon;
        if reach >= 0.0 {
            line_integral_raw(&self.phantom, x, &self.xi, reach, DEFAULT_ORACLE_TOL)
        } else {
            let back = [-self.xi[0], -self.xi[1], -self.xi[2]];
            -line_integral_raw(&self.phantom, x, &back, -reach, DEFAULT_ORACLE_TOL)
        }
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if grid.d() != self.d {
            return Err(Error::GridMismatch);
        }
        let need = self.required_half_width();
        if grid.box_half_width() < need {
            return Err(Error::InvalidParameter(format!(
                "box half-width {} too small: need ≥ {need:.4}",
                grid.box_half_width()
            )));
        }
        Ok(())
    }
}

/// `u₀(x) = ε^p a₀(ε(x + Tξ)) exp{i(x·ξ + |ξ|²T/2)}`, stamped `t = −T`.
pub fn initial_data(params: &WavePacketParams, grid: &GridSpec) -> Result<Field> {
    params.check_grid(grid)?;
    let t0 = -params.horizon;
    let scale = params.epsilon.powf(params.p);
    Ok(Field::from_fn(*grid, t0, |x| {
        let g = eval_envelope(&params.envelope, &params.envelope_arg(t0, x));
        Complex64::from_polar(scale * g, params.carrier_phase(t0, x))
    }))
}

/// Transported amplitude `a(t′, x′)` in slow variables.
///
/// The phase integral is evaluated on the physical line after substituting
/// `s = ε²(σ + T)`.
pub fn amplitude_a(params: &WavePacketParams, t_slow: f64, x_slow: &Point) -> Complex64 {
    let (t, x) = fast_coordinates(params, t_slow, x_slow);
    let g = eval_envelope(&params.envelope, &params.envelope_arg(t, &x));
    let theta = -params.epsilon.powf(2.0 * params.p) * g * g * params.path_integral(t, &x);
    Complex64::from_polar(g, theta)
}

/// [`amplitude_a`] with the phase integral taken literally in the slow time
/// `s ∈ [0, t′]`, `α[x′/ε − (t′ − s)ξ/ε² − Tξ]`.
pub fn amplitude_a_direct(params: &WavePacketParams, t_slow: f64, x_slow: &Point) -> Complex64 {
    let e = params.epsilon;
    let xi = &params.xi;
    let z = [
        x_slow[0] - t_slow * xi[0] / e,
        x_slow[1] - t_slow * xi[1] / e,
        x_slow[2] - t_slow * xi[2] / e,
    ];
    let g = eval_envelope(&params.envelope, &z);
    // y(s) = q + sξ/ε² with q = x′/ε − Tξ − t′ξ/ε².
    let k = 1.0 / (e * e);
    let q = [
        x_slow[0] / e - (params.horizon + t_slow * k) * xi[0],
        x_slow[1] / e - (params.horizon + t_slow * k) * xi[1],
        x_slow[2] / e - (params.horizon + t_slow * k) * xi[2],
    ];
    let (lo, hi, sign) = if t_slow >= 0.0 { (0.0, t_slow, 1.0) } else { (t_slow, 0.0, -1.0) };
    let tol = DEFAULT_ORACLE_TOL * e * e / params.phantom.bumps.len().max(1) as f64;
    let mut integral = 0.0;
    for bump in &params.phantom.bumps {
        let c = bump.center_point();
        let rel = [q[0] - c[0], q[1] - c[1], q[2] - c[2]];
        // |rel + s k ξ|² = R²
        let qa = k * k * norm2(xi);
        let qb = 2.0 * k * dot(&rel, xi);
        let qc = norm2(&rel) - bump.radius * bump.radius;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc <= 0.0 {
            continue;
        }
        let root = disc.sqrt();
        let s0 = ((-qb - root) / (2.0 * qa)).max(lo);
        let s1 = ((-qb + root) / (2.0 * qa)).min(hi);
        if s1 <= s0 {
            continue;
        }
        let f = |s: f64| {
            let y = [rel[0] + c[0] + s * k * xi[0], rel[1] + c[1] + s * k * xi[1], rel[2] + c[2] + s * k * xi[2]];
            bump.eval(&y)
        };
        integral += adaptive_simpson(&f, s0, s1, tol, DEFAULT_MAX_DEPTH);
    }
    let theta = -sign * e.powf(2.0 * params.p - 2.0) * g * g * integral;
    Complex64::from_polar(g, theta)
}

/// `(t, x)` from slow variables `t′ = ε²(t + T)`, `x′ = ε(x + Tξ)`.
fn fast_coordinates(params: &WavePacketParams, t_slow: f64, x_slow: &Point) -> (f64, Point) {
    let e = params.epsilon;
    let t = t_slow / (e * e) - params.horizon;
    let x = [
        x_slow[0] / e - params.horizon * params.xi[0],
        x_slow[1] / e - params.horizon * params.xi[1],
        x_slow[2] / e - params.horizon * params.xi[2],
    ];
    (t, x)
}

fn slow_coordinates(params: &WavePacketParams, t: f64, x: &Point) -> (f64, Point) {
    let e = params.epsilon;
    let t_slow = e * e * (t + params.horizon);
    let x_slow = [
        e * (x[0] + params.horizon * params.xi[0]),
        e * (x[1] + params.horizon * params.xi[1]),
        e * (x[2] + params.horizon * params.xi[2]),
    ];
    (t_slow, x_slow)
}

/// `v(t, x)` through the slow amplitude: `ε^p a(ε²(t + T), ε(x + Tξ)) e^{iΦ}`.
pub fn approx_value(params: &WavePacketParams, t: f64, x: &Point) -> Complex64 {
    let (ts, xs) = slow_coordinates(params, t, x);
    amplitude_a(params, ts, &xs) * Complex64::from_polar(params.epsilon.powf(params.p), params.carrier_phase(t, x))
}

/// `v(t, x)` through the slow amplitude with the literal slow-time integral.
pub fn approx_value_via_slow_integral(params: &WavePacketParams, t: f64, x: &Point) -> Complex64 {
    let (ts, xs) = slow_coordinates(params, t, x);
    amplitude_a_direct(params, ts, &xs)
        * Complex64::from_polar(params.epsilon.powf(params.p), params.carrier_phase(t, x))
}

/// `v(t, x)` from the closed formula in physical variables.
pub fn approx_value_direct(params: &WavePacketParams, t: f64, x: &Point) -> Complex64 {
    let g = eval_envelope(&params.envelope, &params.envelope_arg(t, x));
    let amp = params.epsilon.powf(params.p) * g;
    Complex64::from_polar(amp, params.carrier_phase(t, x) + nonlinear_phase_with(params, t, x, g))
}

pub fn approx_solution(params: &WavePacketParams, grid: &GridSpec, t: f64) -> Result<Field> {
    params.check_grid(grid)?;
    Ok(Field::from_fn(*grid, t, |x| approx_value(params, t, x)))
}

pub fn approx_solution_direct(params: &WavePacketParams, grid: &GridSpec, t: f64) -> Result<Field> {
    params.check_grid(grid)?;
    Ok(Field::from_fn(*grid, t, |x| approx_value_direct(params, t, x)))
}

/// `φ(t, x) = −ε^{2p} a₀(ε(x − tξ))² ∫_{−T}^{t} α(x − (t − s)ξ) ds`.
pub fn nonlinear_phase(params: &WavePacketParams, t: f64, x: &Point) -> f64 {
    let g = eval_envelope(&params.envelope, &params.envelope_arg(t, x));
    nonlinear_phase_with(params, t, x, g)
}

fn nonlinear_phase_with(params: &WavePacketParams, t: f64, x: &Point, g: f64) -> f64 {
    if g == 0.0 {
        return 0.0;
    }
    -params.epsilon.powf(2.0 * params.p) * g * g * params.path_integral(t, x)
}

/// `a(t′, ·)` sampled on the slow-variable image of `grid`, i.e. `v e^{−iΦ}/ε^p`.
///
/// The discrete Wiener norm does not depend on the cell size, so this is
/// also the norm of `a(t′, ·)` on the rescaled grid.
pub fn slow_amplitude_field(params: &WavePacketParams, grid: &GridSpec, t: f64) -> Result<Field> {
    params.check_grid(grid)?;
    Ok(Field::from_fn(*grid, t, |x| {
        let (ts, xs) = slow_coordinates(params, t, x);
        amplitude_a(params, ts, &xs)
    }))
}

/// `½ ε^p Δ_x(g e^{iθ}) e^{iΦ}` at one point, `g = a₀(z)` and `θ` the nonlinear phase.
///
/// This is `½ ε^{p+2} (Δa)(t′, x′) e^{iΦ}` written in physical variables.
pub fn residual_value(params: &WavePacketParams, t: f64, x: &Point) -> Complex64 {
    let d = params.d;
    let e = params.epsilon;
    let z = params.envelope_arg(t, x);
    let g = eval_envelope(&params.envelope, &z);
    // Chain rule from z to x.
    let gz = eval_envelope_grad(&params.envelope, &z);
    let grad_g = [e * gz[0], e * gz[1], e * gz[2]];
    let lap_g = e * e * eval_envelope_laplacian(&params.envelope, &z, d);

    let l = path_jet(params, t, x);
    let k = -e.powf(2.0 * params.p);
    let mut grad_theta = [0.0; 3];
    for axis in 0..3 {
        grad_theta[axis] = k * (2.0 * g * grad_g[axis] * l.value + g * g * l.grad[axis]);
    }
    let lap_theta = k
        * (2.0 * norm2(&grad_g) * l.value
            + 2.0 * g * lap_g * l.value
            + 4.0 * g * dot(&grad_g, &l.grad)
            + g * g * l.laplacian);
    let theta = k * g * g * l.value;
    let bracket = Complex64::new(lap_g - g * norm2(&grad_theta), 2.0 * dot(&grad_g, &grad_theta) + g * lap_theta);
    let scale = 0.5 * e.powf(params.p);
    bracket * Complex64::from_polar(scale, theta + params.carrier_phase(t, x))
}

/// Line integral from `−T` to `t` of α, ∇α and Δα along the packet path.
fn path_jet(params: &WavePacketParams, t: f64, x: &Point) -> crate::models::Jet {
    let reach = t + params.horizon;
    if reach >= 0.0 {
        line_integral_jet(&params.phantom, x, &params.xi, reach, params.d, DEFAULT_ORACLE_TOL)
    } else {
        let back = [-params.xi[0], -params.xi[1], -params.xi[2]];
        let j = line_integral_jet(&params.phantom, x, &back, -reach, params.d, DEFAULT_ORACLE_TOL);
        crate::models::Jet { value: -j.value, grad: j.grad.map(|g| -g), laplacian: -j.laplacian }
    }
}

/// Closed-form residual `(i∂_t + ½Δ)v − α|v|²v` on the grid at time `t`.
pub fn residual_closed_form(params: &WavePacketParams, grid: &GridSpec, t: f64) -> Result<Field> {
    params.check_grid(grid)?;
    Ok(Field::from_fn(*grid, t, |x| residual_value(params, t, x)))
}

/// `(i∂_t + ½Δ)v − α|v|²v` from three slices `t ± dt`, `t`: centered time
/// difference and spectral Laplacian.
pub fn residual_numeric(u_plus: &Field, u_minus: &Field, u_mid: &Field, dt: f64, phantom: &Phantom) -> Result<Field> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    if u_plus.grid != u_mid.grid || u_minus.grid != u_mid.grid {
        return Err(Error::GridMismatch);
    }
    let lap = crate::grid::spectral_laplacian(u_mid)?;
    let grid = u_mid.grid;
    let inv = 1.0 / (2.0 * dt);
    let values = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let dtv = (u_plus.values[i] - u_minus.values[i]) * inv;
            let mid = u_mid.values[i];
            let a = eval_alpha(phantom, &grid.point(i));
            Complex64::i() * dtv + 0.5 * lap.values[i] - a * mid.norm_sqr() * mid
        })
        .collect();
    Field::new(grid, u_mid.t, values)
}

/// Closed-form residual against the centred-difference residual of `v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualComparison {
    pub t: f64,
    pub dt: f64,
    /// `sup|E_numeric − E_closed| / sup|E_closed|`.
    pub relative_linf: f64,
    pub closed_sup: f64,
    pub numeric_sup: f64,
}

pub fn compare_residuals(params: &WavePacketParams, grid: &GridSpec, t: f64, dt: f64) -> Result<ResidualComparison> {
    let closed = residual_closed_form(params, grid, t)?;
    let numeric = residual_numeric(
        &approx_solution(params, grid, t + dt)?,
        &approx_solution(params, grid, t - dt)?,
        &approx_solution(params, grid, t)?,
        dt,
        &params.phantom,
    )?;
    let closed_sup = crate::grid::sup_norm(&closed);
    let diff = crate::grid::sup_norm(&numeric.sub(&closed)?);
    Ok(ResidualComparison {
        t,
        dt,
        relative_linf: diff / closed_sup,
        closed_sup,
        numeric_sup: crate::grid::sup_norm(&numeric),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{sup_norm, wiener_norm};
    use crate::models::{full_line_integral, line_integral_oracle};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // M = 20π puts ξ = (1, 0) on the frequency lattice.
    fn setup_with_horizon(height: f64, horizon: f64) -> (GridSpec, WavePacketParams) {
        let grid = GridSpec::new(2, 128, 20.0 * std::f64::consts::PI).unwrap();
        let phantom = Phantom::single([0.3, -0.2, 0.0], 2.0, height, 2);
        let params = WavePacketParams::new(
            0.3,
            2.0,
            horizon,
            &[1.0, 0.0],
            EnvelopeSpec { amplitude: 1.0, width: 1.0 },
            phantom,
            &grid,
        )
        .unwrap();
        (grid, params)
    }

    fn setup(height: f64) -> (GridSpec, WavePacketParams) {
        setup_with_horizon(height, 3.0)
    }

    #[test]
    fn snapped_direction_within_tolerance() {
        let grid = GridSpec::new(2, 128, 64.0).unwrap();
        let theta = 0.7f64;
        let params = WavePacketParams::new(
            0.3,
            2.0,
            3.0,
            &[theta.cos(), theta.sin()],
            EnvelopeSpec::default(),
            Phantom::default(),
            &grid,
        )
        .unwrap();
        assert!((params.speed() - 1.0).abs() <= 2.0 * grid.dy());
        for axis in 0..2 {
            let k = params.xi[axis] / grid.dy();
            assert!((k - k.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn validation_lists_every_violation() {
        let grid = GridSpec::new(2, 64, 5.0).unwrap();
        let phantom = Phantom::single([0.0; 3], 4.0, 1e6, 2);
        let err = WavePacketParams::new(0.3, 0.5, 3.0, &[1.0, 0.0], EnvelopeSpec::default(), phantom, &grid)
            .unwrap_err();
        let Error::Validation(list) = err else { panic!("expected validation error") };
        let joined = list.join("\n");
        assert!(joined.contains("p must exceed 1"));
        assert!(joined.contains("phantom support"));
        assert!(joined.contains("phase-wrap"));
        assert!(joined.contains("box half-width"));
    }

    #[test]
    fn initial_data_peak_and_norm() {
        // T = 10·dx puts the envelope peak −Tξ on a node.
        let dx = 40.0 * std::f64::consts::PI / 128.0;
        let (grid, params) = setup_with_horizon(5.0, 10.0 * dx);
        assert_eq!(params.xi, [1.0, 0.0, 0.0]);
        let u0 = initial_data(&params, &grid).unwrap();
        assert_eq!(u0.t, -10.0 * dx);
        let eps_p = params.epsilon.powf(params.p);
        assert!((sup_norm(&u0) - eps_p).abs() < 1e-15);
        let envelope_only = Field::from_fn(grid, 0.0, |x| {
            Complex64::new(eval_envelope(&params.envelope, &params.envelope_arg(-params.horizon, x)), 0.0)
        });
        let w = wiener_norm(&u0);
        assert!((w - eps_p * wiener_norm(&envelope_only)).abs() < 1e-12 * w);
        let (_, other) = setup_with_horizon(0.0, 10.0 * dx);
        assert_eq!(initial_data(&other, &grid).unwrap().values, u0.values);
    }

    #[test]
    fn approx_solution_matches_initial_data() {
        let (grid, params) = setup(5.0);
        let u0 = initial_data(&params, &grid).unwrap();
        let v = approx_solution(&params, &grid, -params.horizon).unwrap();
        for (a, b) in u0.values.iter().zip(&v.values) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn amplitude_modulus_transported() {
        let (_, params) = setup(5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let ts = rng.gen_range(0.0..0.6);
            let xs = [rng.gen_range(-1.0..2.5), rng.gen_range(-1.5..1.5), 0.0];
            let a = amplitude_a(&params, ts, &xs);
            let z = [xs[0] - ts * params.xi[0] / params.epsilon, xs[1], 0.0];
            assert!((a.norm() - eval_envelope(&params.envelope, &z)).abs() < 1e-14);
        }
        let x = [0.4, 0.1, 0.0];
        let a = amplitude_a(&params, 0.0, &x);
        assert!((a - Complex64::new(eval_envelope(&params.envelope, &x), 0.0)).norm() < 1e-15);
    }

    #[test]
    fn zero_phantom_is_pure_transport() {
        let (_, params) = setup(0.0);
        let x = [0.7, -0.3, 0.0];
        let ts = 0.4;
        let a = amplitude_a(&params, ts, &x);
        let z = [x[0] - ts * params.xi[0] / params.epsilon, x[1], 0.0];
        // Exact up to the round trip through fast coordinates.
        assert_eq!(a.im, 0.0);
        assert!((a.re - eval_envelope(&params.envelope, &z)).abs() < 1e-15);
        assert_eq!(nonlinear_phase(&params, 2.0, &[1.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn three_routes_agree_pointwise() {
        let (_, params) = setup(40.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let t = rng.gen_range(-3.0..3.0);
            let x = [t + rng.gen_range(-3.0..3.0), rng.gen_range(-2.5..2.5), 0.0];
            let a = approx_value(&params, t, &x);
            let b = approx_value_direct(&params, t, &x);
            let c = approx_value_via_slow_integral(&params, t, &x);
            assert!((a - b).norm() <= 1e-10, "{}", (a - b).norm());
            assert!((c - b).norm() <= 1e-10, "{}", (c - b).norm());
        }
    }

    #[test]
    fn nonlinear_phase_limits() {
        let (_, params) = setup(40.0);
        assert_eq!(nonlinear_phase(&params, -3.0, &[-3.0, 0.0, 0.0]), 0.0);
        let xi_unit = [1.0, 0.0, 0.0];
        let x = [3.0, 0.0, 0.0];
        let full = full_line_integral(&params.phantom, &[0.0; 3], &xi_unit, 1e-11).unwrap();
        let seg = line_integral_oracle(&params.phantom, &x, &xi_unit, (-3.0, 3.0), 1e-11).unwrap();
        assert!((full - seg).abs() < 1e-9);
        let expect = -params.epsilon.powf(4.0) * full;
        assert!((nonlinear_phase(&params, 3.0, &x) - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_phantom_residual_is_envelope_dispersion() {
        let (_, params) = setup(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let t = rng.gen_range(-3.0..3.0);
            let x = [rng.gen_range(-6.0..6.0), rng.gen_range(-4.0..4.0), 0.0];
            let z = params.envelope_arg(t, &x);
            let e = params.epsilon;
            let expect = Complex64::from_polar(
                0.5 * e.powf(params.p + 2.0) * eval_envelope_laplacian(&params.envelope, &z, 2),
                params.carrier_phase(t, &x),
            );
            assert!((residual_value(&params, t, &x) - expect).norm() < 1e-16);
        }
    }

    #[test]
    fn closed_form_residual_matches_pointwise_differences() {
        // Fourth-order finite differences of v in t and x, away from the grid.
        let (_, params) = setup(40.0);
        let h = 2e-3;
        let v = |t: f64, x: &Point| approx_value_direct(&params, t, x);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let t = rng.gen_range(-1.0..2.5);
            let x = [t + rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), 0.0];
            let d1 = |f: &dyn Fn(f64) -> Complex64| (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h);
            let d2 = |f: &dyn Fn(f64) -> Complex64| {
                (-f(-2.0 * h) + 16.0 * f(-h) - 30.0 * f(0.0) + 16.0 * f(h) - f(2.0 * h)) / (12.0 * h * h)
            };
            let vt = d1(&|s| v(t + s, &x));
            let lap = d2(&|s| v(t, &[x[0] + s, x[1], 0.0])) + d2(&|s| v(t, &[x[0], x[1] + s, 0.0]));
            let v0 = v(t, &x);
            let numeric = Complex64::i() * vt + 0.5 * lap - eval_alpha(&params.phantom, &x) * v0.norm_sqr() * v0;
            let closed = residual_value(&params, t, &x);
            let scale = 0.5 * params.epsilon.powf(params.p + 2.0);
            assert!((numeric - closed).norm() < 1e-4 * scale, "{} vs {}", numeric, closed);
        }
    }
}
