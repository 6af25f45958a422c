//! Run configuration: one TOML file with a table per module. Unknown keys
//! are rejected and validation reports every violated guard at once.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::models::{EnvelopeSpec, Phantom};
use crate::recover::{uniform_angles, uniform_offsets, Source, Window, DEFAULT_THETA_MASK};
use crate::solver::SolverConfig;
use crate::sweep::{NormKind, SweepBase, SweepConfig};
use crate::wavepacket::{WavePacketParams, BOX_TAIL_WIDTHS};

/// Envelope widths `w/ε` that must cover the largest sampling offset.
pub const OFFSET_COVER_FACTOR: f64 = 1.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_d")]
    pub d: usize,
    pub n: usize,
    /// When absent: the smallest multiple of π meeting the box guard for
    /// every ε in the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_half_width: Option<f64>,
}

fn default_d() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketSection {
    pub epsilon: f64,
    pub p: f64,
    pub horizon: f64,
    pub direction: Vec<f64>,
    #[serde(default)]
    pub envelope: EnvelopeSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub epsilons: Vec<f64>,
    pub sigma: f64,
    #[serde(default = "default_norms")]
    pub norms: Vec<NormKind>,
    #[serde(default = "default_true")]
    pub dt_refinement: bool,
}

fn default_norms() -> Vec<NormKind> {
    vec![NormKind::Sup, NormKind::Wiener]
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructionGrid {
    pub n: usize,
    pub box_half_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverSection {
    /// Number of angles, uniform on `[0, π)`.
    pub angles: usize,
    /// Number of offsets, uniform on `[−max_offset, max_offset]`.
    pub offsets: usize,
    pub max_offset: f64,
    #[serde(default = "default_theta_mask")]
    pub theta_mask: f64,
    pub source: Source,
    #[serde(default)]
    pub window: Window,
    pub reconstruction: ReconstructionGrid,
}

fn default_theta_mask() -> f64 {
    DEFAULT_THETA_MASK
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub rng_seed: u64,
    pub grid: GridSection,
    pub packet: PacketSection,
    #[serde(default)]
    pub phantom: Phantom,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recover: Option<RecoverSection>,
}

impl RunConfig {
    /// Parse only; no guards are checked.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(vec![e.to_string()]))
    }

    /// Parse and validate.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg = Self::parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    fn smallest_epsilon(&self) -> f64 {
        let sweep_min = self.sweep.iter().flat_map(|s| s.epsilons.iter().copied()).fold(f64::INFINITY, f64::min);
        self.packet.epsilon.min(sweep_min)
    }

    /// `2T + 8w/ε_min`.
    pub fn required_half_width(&self) -> f64 {
        2.0 * self.packet.horizon + BOX_TAIL_WIDTHS * self.packet.envelope.width / self.smallest_epsilon()
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let m = match self.grid.box_half_width {
            Some(m) => m,
            None => {
                let need = self.required_half_width();
                if !need.is_finite() || need <= 0.0 {
                    return Err(Error::InvalidGrid(format!("cannot size the box from required half-width {need}")));
                }
                (need / PI).ceil() * PI
            }
        };
        GridSpec::new(self.grid.d, self.grid.n, m)
    }

    pub fn packet_params(&self) -> Result<WavePacketParams> {
        let grid = self.grid()?;
        self.packet_params_on(&grid, self.packet.epsilon)
    }

    fn packet_params_on(&self, grid: &GridSpec, epsilon: f64) -> Result<WavePacketParams> {
        WavePacketParams::new(
            epsilon,
            self.packet.p,
            self.packet.horizon,
            &self.packet.direction,
            self.packet.envelope,
            self.phantom.clone(),
            grid,
        )
    }

    pub fn sweep_config(&self) -> Result<Option<SweepConfig>> {
        let Some(s) = &self.sweep else { return Ok(None) };
        Ok(Some(SweepConfig {
            epsilons: s.epsilons.clone(),
            p: self.packet.p,
            sigma: s.sigma,
            norms: s.norms.clone(),
            dt_refinement: s.dt_refinement,
            base: SweepBase {
                grid: self.grid()?,
                horizon: self.packet.horizon,
                direction: self.packet.direction.clone(),
                envelope: self.packet.envelope,
                phantom: self.phantom.clone(),
                solver: self.solver.clone(),
            },
        }))
    }

    pub fn angles(&self) -> Vec<f64> {
        self.recover.as_ref().map(|r| uniform_angles(r.angles)).unwrap_or_default()
    }

    pub fn offsets(&self) -> Vec<f64> {
        self.recover.as_ref().map(|r| uniform_offsets(r.offsets, r.max_offset)).unwrap_or_default()
    }

    pub fn reconstruction_grid(&self) -> Result<Option<GridSpec>> {
        match &self.recover {
            Some(r) => Ok(Some(GridSpec::new(2, r.reconstruction.n, r.reconstruction.box_half_width)?)),
            None => Ok(None),
        }
    }

    /// Every violated guard, with the computed bound.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let grid = match self.grid() {
            Ok(g) => Some(g),
            Err(e) => {
                out.push(e.to_string());
                None
            }
        };
        if let Some(grid) = &grid {
            match self.packet_params_on(grid, self.packet.epsilon) {
                Err(Error::Validation(list)) => out.extend(list.into_iter().map(|m| format!("packet: {m}"))),
                Err(e) => out.push(format!("packet: {e}")),
                Ok(_) => {}
            }
        }
        out.extend(self.solver.violations(self.packet.horizon).into_iter().map(|m| format!("solver: {m}")));
        if grid.is_some() {
            if let Ok(Some(sweep)) = self.sweep_config() {
                out.extend(sweep.violations().into_iter().map(|m| format!("sweep: {m}")));
            }
        }
        if let Some(r) = &self.recover {
            out.extend(self.recover_violations(r).into_iter().map(|m| format!("recover: {m}")));
        }
        out.sort();
        out.dedup();
        out
    }

    fn recover_violations(&self, r: &RecoverSection) -> Vec<String> {
        let mut out = Vec::new();
        if self.grid.d != 2 {
            out.push(format!("recovery runs in d = 2 only, grid has d = {}", self.grid.d));
        }
        if r.angles < 2 {
            out.push(format!("need at least 2 angles, got {}", r.angles));
        }
        if r.offsets < 2 {
            out.push(format!("need at least 2 offsets, got {}", r.offsets));
        }
        if !(r.max_offset > 0.0 && r.max_offset.is_finite()) {
            out.push(format!("max_offset must be positive, got {}", r.max_offset));
        }
        if !(r.theta_mask > 0.0 && r.theta_mask < 1.0) {
            out.push(format!("theta_mask must lie in (0, 1), got {}", r.theta_mask));
        }
        let cover = self.packet.envelope.width / self.packet.epsilon;
        if cover < OFFSET_COVER_FACTOR * r.max_offset {
            out.push(format!(
                "envelope width w/ε = {cover:.4} must be ≥ {OFFSET_COVER_FACTOR}·max_offset = {:.4}",
                OFFSET_COVER_FACTOR * r.max_offset
            ));
        }
        let support = self.phantom.support_radius();
        if !self.phantom.is_zero() && r.max_offset < support {
            out.push(format!("max_offset {} does not cover the phantom support radius {support:.4}", r.max_offset));
        }
        if let Err(e) = GridSpec::new(2, r.reconstruction.n, r.reconstruction.box_half_width) {
            out.push(format!("reconstruction {e}"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
output_dir = "out"
rng_seed = 3

[grid]
n = 256

[packet]
epsilon = 0.3
p = 2.0
horizon = 3.0
direction = [1.0, 0.0]

[[phantom.bumps]]
center = [0.0, 0.0]
radius = 1.0
height = 2.0
"#;

    #[test]
    fn base_config_loads_with_auto_box() {
        let cfg = RunConfig::from_toml_str(BASE).unwrap();
        let grid = cfg.grid().unwrap();
        let need = 6.0 + 8.0 / 0.3;
        assert!(grid.box_half_width() >= need && grid.box_half_width() < need + PI);
        let k = grid.box_half_width() / PI;
        assert!((k - k.round()).abs() < 1e-12);
        assert_eq!(cfg.packet_params().unwrap().xi, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = BASE.replace("p = 2.0", "p = 2.0\nepsilonn = 0.2");
        assert!(matches!(RunConfig::parse(&text), Err(Error::Validation(_))));
        let text = format!("{BASE}\n[solver]\ndtt = 0.1\n");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn every_violation_is_listed() {
        let text = BASE
            .replace("epsilon = 0.3", "epsilon = 0.3\n")
            .replace("[grid]\nn = 256", "[grid]\nn = 256\nbox_half_width = 10.0")
            .replace("height = 2.0", "height = 5000.0")
            .replace("radius = 1.0", "radius = 2.9");
        let text = format!(
            "{text}\n[recover]\nangles = 1\noffsets = 9\nmax_offset = 4.0\nsource = \"oracle\"\n[recover.reconstruction]\nn = 64\nbox_half_width = 3.0\n"
        );
        let Err(Error::Validation(list)) = RunConfig::from_toml_str(&text) else { panic!("accepted") };
        let joined = list.join("\n");
        for needle in ["box half-width", "phase-wrap", "at least 2 angles", "w/ε"] {
            assert!(joined.contains(needle), "missing {needle} in\n{joined}");
        }
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = RunConfig::from_toml_str(BASE).unwrap();
        let again = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }
}
