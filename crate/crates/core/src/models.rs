//! Analytic coefficient phantoms, Gaussian envelopes and the line-integral
//! quadrature oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dot, norm2, Point};
use crate::quad::{adaptive_simpson, Vector, DEFAULT_MAX_DEPTH};

pub const DEFAULT_ORACLE_TOL: f64 = 1e-10;

/// Tolerance on `|ξ| = 1` accepted by the oracle.
const UNIT_TOL: f64 = 1e-12;

/// Mollifier bump `c·exp(1 − 1/(1 − |x−x₀|²/R²))` on the ball of radius `R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    pub center: Vec<f64>,
    pub radius: f64,
    pub height: f64,
}

/// Value, gradient and Laplacian of a coefficient at one point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: Point,
    pub laplacian: f64,
}

impl BumpSpec {
    pub fn center_point(&self) -> Point {
        let mut c = [0.0; 3];
        for (dst, src) in c.iter_mut().zip(&self.center) {
            *dst = *src;
        }
        c
    }

    pub fn eval(&self, x: &Point) -> f64 {
        let c = self.center_point();
        let u = dist2(x, &c) / (self.radius * self.radius);
        if u >= 1.0 {
            return 0.0;
        }
        self.height * (1.0 - 1.0 / (1.0 - u)).exp()
    }

    /// Analytic jet in dimension `d`.
    ///
    /// With `u = |x − x₀|²` and `f(u) = c·exp(1 − R²/(R² − u))`:
    /// `∇f = 2 f′ (x − x₀)` and `Δf = 2d f′ + 4u f″`.
    pub fn jet(&self, x: &Point, d: usize) -> Jet {
        let c = self.center_point();
        let r2 = self.radius * self.radius;
        let u = dist2(x, &c);
        if u >= r2 {
            return Jet::default();
        }
        let gap = r2 - u;
        let f = self.height * (1.0 - r2 / gap).exp();
        let h = -r2 / (gap * gap);
        let dh = -2.0 * r2 / (gap * gap * gap);
        let f1 = f * h;
        let f2 = f * (h * h + dh);
        let mut grad = [0.0; 3];
        for axis in 0..d {
            grad[axis] = 2.0 * f1 * (x[axis] - c[axis]);
        }
        Jet { value: f, grad, laplacian: 2.0 * d as f64 * f1 + 4.0 * u * f2 }
    }

    /// Parameter interval `(r₋, r₊)` where `x − rξ` lies inside the ball.
    fn chord(&self, x: &Point, xi: &Point) -> Option<(f64, f64)> {
        let c = self.center_point();
        let rel = [x[0] - c[0], x[1] - c[1], x[2] - c[2]];
        let b = dot(xi, &rel);
        let disc = b * b - (norm2(&rel) - self.radius * self.radius);
        if disc <= 0.0 {
            return None;
        }
        let s = disc.sqrt();
        Some((b - s, b + s))
    }

    /// Largest integral of this bump over any line (the one through its center).
    pub fn max_line_integral(&self) -> f64 {
        self.height * self.radius * unit_bump_diameter_integral()
    }
}

/// `∫_{-1}^{1} exp(1 − 1/(1 − s²)) ds`.
pub fn unit_bump_diameter_integral() -> f64 {
    use std::sync::OnceLock;
    static VALUE: OnceLock<f64> = OnceLock::new();
    *VALUE.get_or_init(|| {
        adaptive_simpson(
            &|s: f64| {
                let u = s * s;
                if u >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - u)).exp()
                }
            },
            -1.0,
            1.0,
            1e-14,
            30,
        )
    })
}

fn dist2(a: &Point, b: &Point) -> f64 {
    let r = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    norm2(&r)
}

/// Sum of bumps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phantom {
    #[serde(default)]
    pub bumps: Vec<BumpSpec>,
}

impl Phantom {
    pub fn new(bumps: Vec<BumpSpec>) -> Self {
        Self { bumps }
    }

    pub fn single(center: Point, radius: f64, height: f64, d: usize) -> Self {
        Self::new(vec![BumpSpec { center: center[..d].to_vec(), radius, height }])
    }

    pub fn is_zero(&self) -> bool {
        self.bumps.iter().all(|b| b.height == 0.0)
    }

    /// Structural checks for dimension `d`, one message per violation.
    pub fn violations(&self, d: usize) -> Vec<String> {
        let mut out = Vec::new();
        for (i, b) in self.bumps.iter().enumerate() {
            if b.center.len() != d {
                out.push(format!("bump {i}: center has {} components, expected {d}", b.center.len()));
            }
            if !(b.radius > 0.0 && b.radius.is_finite()) {
                out.push(format!("bump {i}: radius must be positive, got {}", b.radius));
            }
            if !(b.height >= 0.0 && b.height.is_finite()) {
                out.push(format!("bump {i}: height must be nonnegative, got {}", b.height));
            }
        }
        out
    }

    /// Radius of the smallest origin-centered ball containing every support.
    pub fn support_radius(&self) -> f64 {
        self.bumps
            .iter()
            .map(|b| norm2(&b.center_point()).sqrt() + b.radius)
            .fold(0.0, f64::max)
    }

    /// Upper bound on the integral of α over any line.
    pub fn max_line_integral(&self) -> f64 {
        self.bumps.iter().map(BumpSpec::max_line_integral).sum()
    }

    pub fn translated(&self, shift: &Point) -> Phantom {
        Phantom::new(
            self.bumps
                .iter()
                .map(|b| BumpSpec {
                    center: b.center.iter().zip(shift).map(|(c, s)| c + s).collect(),
                    ..b.clone()
                })
                .collect(),
        )
    }
}

pub fn eval_alpha(phantom: &Phantom, x: &Point) -> f64 {
    phantom.bumps.iter().map(|b| b.eval(x)).sum()
}

pub fn alpha_jet(phantom: &Phantom, x: &Point, d: usize) -> Jet {
    let mut acc = Jet::default();
    for b in &phantom.bumps {
        let j = b.jet(x, d);
        acc.value += j.value;
        for axis in 0..3 {
            acc.grad[axis] += j.grad[axis];
        }
        acc.laplacian += j.laplacian;
    }
    acc
}

/// Gaussian envelope `A·exp(−|z|²/(2w²))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeSpec {
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_width")]
    pub width: f64,
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_width() -> f64 {
    1.0
}

impl Default for EnvelopeSpec {
    fn default() -> Self {
        Self { amplitude: 1.0, width: 1.0 }
    }
}

impl EnvelopeSpec {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            out.push(format!("envelope amplitude must be positive, got {}", self.amplitude));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            out.push(format!("envelope width must be positive, got {}", self.width));
        }
        out
    }
}

pub fn eval_envelope(env: &EnvelopeSpec, z: &Point) -> f64 {
    env.amplitude * (-norm2(z) / (2.0 * env.width * env.width)).exp()
}

pub fn eval_envelope_grad(env: &EnvelopeSpec, z: &Point) -> Point {
    let a = eval_envelope(env, z);
    let w2 = env.width * env.width;
    [-z[0] / w2 * a, -z[1] / w2 * a, -z[2] / w2 * a]
}

pub fn eval_envelope_laplacian(env: &EnvelopeSpec, z: &Point, d: usize) -> f64 {
    let w2 = env.width * env.width;
    (norm2(z) / (w2 * w2) - d as f64 / w2) * eval_envelope(env, z)
}

fn check_unit(xi: &Point) -> Result<()> {
    let len = norm2(xi).sqrt();
    if (len - 1.0).abs() > UNIT_TOL {
        return Err(Error::InvalidParameter(format!("direction must be a unit vector, |ξ| = {len}")));
    }
    Ok(())
}

/// `∫_{s0}^{s1} α(x − (s1 − s)ξ) ds` by adaptive Simpson to absolute `tol`.
///
/// Each bump is integrated over its own chord, so lines that miss every
/// support return exactly zero.
pub fn line_integral_oracle(
    phantom: &Phantom,
    x: &Point,
    xi: &Point,
    s_range: (f64, f64),
    tol: f64,
) -> Result<f64> {
    check_unit(xi)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let (s0, s1) = s_range;
    let reach = s1 - s0;
    let per_bump = tol / phantom.bumps.len().max(1) as f64;
    let mut total = 0.0;
    for bump in &phantom.bumps {
        if let Some((lo, hi)) = clip(bump.chord(x, xi), reach) {
            let f = |r: f64| bump.eval(&along(x, xi, r));
            total += adaptive_simpson(&f, lo, hi, per_bump, DEFAULT_MAX_DEPTH);
        }
    }
    Ok(total)
}

/// Integral over the whole line through `x` with direction `ξ`.
pub fn full_line_integral(phantom: &Phantom, x: &Point, xi: &Point, tol: f64) -> Result<f64> {
    check_unit(xi)?;
    let per_bump = tol / phantom.bumps.len().max(1) as f64;
    let mut total = 0.0;
    for bump in &phantom.bumps {
        if let Some((lo, hi)) = bump.chord(x, xi) {
            let f = |r: f64| bump.eval(&along(x, xi, r));
            total += adaptive_simpson(&f, lo, hi, per_bump, DEFAULT_MAX_DEPTH);
        }
    }
    Ok(total)
}

/// Line integrals of α, ∇α and Δα over `x − rξ`, `r ∈ [0, reach]`.
///
/// `xi` need not be unit length; `r` is the raw parameter.
pub fn line_integral_jet(phantom: &Phantom, x: &Point, xi: &Point, reach: f64, d: usize, tol: f64) -> Jet {
    let speed = norm2(xi).sqrt();
    if speed == 0.0 || reach <= 0.0 {
        return Jet::default();
    }
    let unit = [xi[0] / speed, xi[1] / speed, xi[2] / speed];
    let per_bump = tol / phantom.bumps.len().max(1) as f64;
    let mut acc = [0.0; 5];
    for bump in &phantom.bumps {
        // Chord in arclength, converted back to the raw parameter.
        let Some((lo, hi)) = clip(bump.chord(x, &unit), reach * speed) else {
            continue;
        };
        let f = |s: f64| {
            let j = bump.jet(&along(x, &unit, s), d);
            Vector([j.value, j.grad[0], j.grad[1], j.grad[2], j.laplacian])
        };
        let v: Vector<5> = adaptive_simpson(&f, lo, hi, per_bump * speed, DEFAULT_MAX_DEPTH);
        for (a, b) in acc.iter_mut().zip(v.0) {
            *a += b / speed;
        }
    }
    Jet { value: acc[0], grad: [acc[1], acc[2], acc[3]], laplacian: acc[4] }
}

/// Like [`line_integral_jet`] but only the value.
pub fn line_integral_raw(phantom: &Phantom, x: &Point, xi: &Point, reach: f64, tol: f64) -> f64 {
    let speed = norm2(xi).sqrt();
    if speed == 0.0 || reach <= 0.0 {
        return 0.0;
    }
    let unit = [xi[0] / speed, xi[1] / speed, xi[2] / speed];
    let per_bump = tol / phantom.bumps.len().max(1) as f64;
    let mut total = 0.0;
    for bump in &phantom.bumps {
        if let Some((lo, hi)) = clip(bump.chord(x, &unit), reach * speed) {
            let f = |s: f64| bump.eval(&along(x, &unit, s));
            total += adaptive_simpson(&f, lo, hi, per_bump * speed, DEFAULT_MAX_DEPTH);
        }
    }
    total / speed
}

fn clip(chord: Option<(f64, f64)>, reach: f64) -> Option<(f64, f64)> {
    let (lo, hi) = chord?;
    let lo = lo.max(0.0);
    let hi = hi.min(reach);
    (hi > lo).then_some((lo, hi))
}

fn along(x: &Point, xi: &Point, r: f64) -> Point {
    [x[0] - r * xi[0], x[1] - r * xi[1], x[2] - r * xi[2]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bump() -> Phantom {
        Phantom::single([0.5, -0.25, 0.0], 2.0, 3.0, 2)
    }

    #[test]
    fn bump_values() {
        let p = bump();
        let c = [0.5, -0.25, 0.0];
        assert!((eval_alpha(&p, &c) - 3.0).abs() < 1e-15);
        assert_eq!(eval_alpha(&p, &[2.5, -0.25, 0.0]), 0.0);
        assert_eq!(eval_alpha(&p, &[10.0, 3.0, 0.0]), 0.0);
        let mid = [1.5, -0.25, 0.0];
        assert!((eval_alpha(&p, &mid) - 3.0 * (-1.0f64 / 3.0).exp()).abs() < 1e-14);
    }

    #[test]
    fn bump_jet_matches_finite_differences() {
        let p = bump();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-4;
        for _ in 0..20 {
            let x = [rng.gen_range(-1.0..2.0), rng.gen_range(-1.5..1.0), 0.0];
            let j = alpha_jet(&p, &x, 2);
            assert!((j.value - eval_alpha(&p, &x)).abs() < 1e-14);
            let mut lap = 0.0;
            for axis in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[axis] += h;
                xm[axis] -= h;
                let (fp, fm, f0) = (eval_alpha(&p, &xp), eval_alpha(&p, &xm), eval_alpha(&p, &x));
                let g = (fp - fm) / (2.0 * h);
                assert!((g - j.grad[axis]).abs() < 1e-6 * (1.0 + j.grad[axis].abs()));
                lap += (fp - 2.0 * f0 + fm) / (h * h);
            }
            assert!((lap - j.laplacian).abs() < 1e-4 * (1.0 + j.laplacian.abs()), "{lap} {}", j.laplacian);
        }
    }

    #[test]
    fn finite_differences_converge_at_expected_rates() {
        // Central differences: error ratio ≈ 4 when h halves, at interior points.
        let p = bump();
        let x = [1.1, 0.3, 0.0];
        let exact = alpha_jet(&p, &x, 2);
        let fd1 = |h: f64| {
            let xp = [x[0] + h, x[1], 0.0];
            let xm = [x[0] - h, x[1], 0.0];
            (eval_alpha(&p, &xp) - eval_alpha(&p, &xm)) / (2.0 * h)
        };
        let fd2 = |h: f64| {
            let xp = [x[0] + h, x[1], 0.0];
            let xm = [x[0] - h, x[1], 0.0];
            (eval_alpha(&p, &xp) - 2.0 * eval_alpha(&p, &x) + eval_alpha(&p, &xm)) / (h * h)
        };
        let e1 = |h| (fd1(h) - exact.grad[0]).abs();
        let ratio1 = e1(1e-2) / e1(5e-3);
        assert!((ratio1 - 4.0).abs() < 0.2, "first-order ratio {ratio1}");
        // Second derivative along x from the Hessian: Δ minus the y-part.
        let yy = {
            let h = 1e-4;
            let xp = [x[0], x[1] + h, 0.0];
            let xm = [x[0], x[1] - h, 0.0];
            (eval_alpha(&p, &xp) - 2.0 * eval_alpha(&p, &x) + eval_alpha(&p, &xm)) / (h * h)
        };
        let xx = exact.laplacian - yy;
        let e2 = |h| (fd2(h) - xx).abs();
        let ratio2 = e2(2e-2) / e2(1e-2);
        assert!((ratio2 - 4.0).abs() < 0.3, "second-order ratio {ratio2}");
    }

    #[test]
    fn alpha_nonnegative_and_compact() {
        let p = Phantom::new(vec![
            BumpSpec { center: vec![0.0, 0.0], radius: 1.0, height: 2.0 },
            BumpSpec { center: vec![1.5, 0.5], radius: 0.7, height: 0.3 },
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..2000 {
            let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), 0.0];
            let v = eval_alpha(&p, &x);
            assert!(v >= 0.0);
            let inside = norm2(&x) < 1.0 || dist2(&x, &[1.5, 0.5, 0.0]) < 0.49;
            if !inside {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn envelope_values_and_derivatives() {
        let env = EnvelopeSpec { amplitude: 1.7, width: 0.8 };
        assert!((eval_envelope(&env, &[0.0; 3]) - 1.7).abs() < 1e-15);
        assert!((eval_envelope_laplacian(&env, &[0.0; 3], 2) + 1.7 * 2.0 / 0.64).abs() < 1e-13);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = 1e-5;
        for _ in 0..20 {
            let z = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 0.0];
            let g = eval_envelope_grad(&env, &z);
            for axis in 0..2 {
                let mut zp = z;
                let mut zm = z;
                zp[axis] += h;
                zm[axis] -= h;
                let fd = (eval_envelope(&env, &zp) - eval_envelope(&env, &zm)) / (2.0 * h);
                assert!((fd - g[axis]).abs() <= 1e-7 * g[axis].abs().max(1e-3));
            }
        }
    }

    #[test]
    fn oracle_misses_return_zero() {
        let p = bump();
        let v = line_integral_oracle(&p, &[0.0, 5.0, 0.0], &[1.0, 0.0, 0.0], (-10.0, 10.0), 1e-10).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn oracle_rejects_non_unit_direction() {
        let p = bump();
        assert!(line_integral_oracle(&p, &[0.0; 3], &[1.0, 1.0, 0.0], (0.0, 1.0), 1e-10).is_err());
    }

    #[test]
    fn oracle_through_center_matches_symmetric_half_integral() {
        // 2·∫₀^R c·exp(1 − 1/(1 − r²/R²)) dr by step-halving midpoint refinement
        // until successive values agree (Richardson-checked).
        let (c, r) = (3.0, 2.0);
        let f = |s: f64| {
            let u = s * s / (r * r);
            if u >= 1.0 {
                0.0
            } else {
                c * (1.0 - 1.0 / (1.0 - u)).exp()
            }
        };
        let midpoint = |m: usize| {
            let h = r / m as f64;
            (0..m).map(|k| f((k as f64 + 0.5) * h) * h).sum::<f64>()
        };
        let mut m = 64;
        let mut prev = midpoint(m);
        loop {
            m *= 2;
            let next = midpoint(m);
            if (next - prev).abs() < 1e-13 {
                prev = next;
                break;
            }
            prev = next;
        }
        let oracle_1d = 2.0 * prev;
        let p = bump();
        let centre = [0.5, -0.25, 0.0];
        let x = [centre[0] + 5.0, centre[1], 0.0];
        let v = line_integral_oracle(&p, &x, &[1.0, 0.0, 0.0], (0.0, 10.0), 1e-10).unwrap();
        assert!((v - oracle_1d).abs() < 1e-9, "{v} vs {oracle_1d}");
        assert!((p.max_line_integral() - oracle_1d).abs() < 1e-9);
    }

    #[test]
    fn oracle_is_additive_over_split_ranges() {
        let p = bump();
        let x = [3.0, 0.4, 0.0];
        let xi = [(0.3f64).cos(), (0.3f64).sin(), 0.0];
        let tol = 1e-10;
        let whole = line_integral_oracle(&p, &x, &xi, (0.0, 8.0), tol).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let m = rng.gen_range(0.5..7.5);
            // ∫_0^8 = ∫_0^m (ending at x − (8 − m)ξ) + ∫_m^8 (ending at x).
            let end = along(&x, &xi, 8.0 - m);
            let a = line_integral_oracle(&p, &end, &xi, (0.0, m), tol).unwrap();
            let b = line_integral_oracle(&p, &x, &xi, (m, 8.0), tol).unwrap();
            assert!((a + b - whole).abs() <= 2.0 * tol, "{}", a + b - whole);
        }
    }

    #[test]
    fn oracle_invariant_under_reparametrization() {
        let p = bump();
        let xi = [0.6, 0.8, 0.0];
        let x = [2.0, 2.5, 0.0];
        let a = line_integral_oracle(&p, &x, &xi, (0.0, 6.0), 1e-10).unwrap();
        let b = line_integral_oracle(&p, &x, &xi, (-3.0, 3.0), 1e-10).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn jet_value_agrees_with_oracle() {
        let p = bump();
        let x = [3.0, 0.1, 0.0];
        let xi = [0.9, 0.1, 0.0];
        let speed = norm2(&xi).sqrt();
        let unit = [xi[0] / speed, xi[1] / speed, 0.0];
        let j = line_integral_jet(&p, &x, &xi, 5.0, 2, 1e-11);
        let o = line_integral_oracle(&p, &x, &unit, (0.0, 5.0 * speed), 1e-11).unwrap() / speed;
        assert!((j.value - o).abs() < 1e-10);
        assert!((line_integral_raw(&p, &x, &xi, 5.0, 1e-11) - o).abs() < 1e-10);
    }
}
