//! Run configuration: a versioned JSON document read by every experiment.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lattice::{BoseHubbardParams, LatticeSpec, TunnelingFit};
use crate::lindblad::SolverOptions;
use crate::modulation::{ModulationKind, ModulationScheme};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub lattice: LatticeSpec,
    #[serde(default)]
    pub occupancy: Occupancy,
    #[serde(default)]
    pub reservoirs: Reservoirs,
    #[serde(default)]
    pub modulation: ModulationConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub sweeps: Sweeps,
    /// Explicit stationary parameters (gauged ω, U, J) used instead of the
    /// lattice-derived ones; effective models are written this way.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<BoseHubbardParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Occupancy {
    pub n_max: usize,
}

impl Default for Occupancy {
    fn default() -> Self {
        Occupancy { n_max: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reservoirs {
    /// J_max/κ.
    pub j_over_kappa: f64,
}

impl Default for Reservoirs {
    fn default() -> Self {
        Reservoirs { j_over_kappa: 15.0 }
    }
}

/// The drive as written in a config. Frequencies default to the lattice's
/// distinct offsets and β to the tunneling fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulationConfig {
    pub kind: ModulationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequencies: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phases: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

impl Default for ModulationConfig {
    fn default() -> Self {
        ModulationConfig {
            kind: ModulationKind::Polychromatic,
            frequencies: None,
            phases: Vec::new(),
            beta: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by the steady current of the flat lattice with uniform J_max.
    #[default]
    IdealFlat,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub paths: OutputPaths,
}

/// File names, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputPaths {
    pub params: String,
    pub evolve: String,
    pub evolve_effective: String,
    pub steady: String,
    pub table1: String,
    pub sweep_vmax: String,
    pub sweep_alpha: String,
}

impl Default for OutputPaths {
    fn default() -> Self {
        OutputPaths {
            params: "params.csv".into(),
            evolve: "evolve.csv".into(),
            evolve_effective: "evolve_effective.csv".into(),
            steady: "steady.csv".into(),
            table1: "table1.csv".into(),
            sweep_vmax: "sweep_vmax.csv".into(),
            sweep_alpha: "sweep_alpha.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sweeps {
    /// Depth grid of the `params` table, uniform over [v_min, v_max].
    pub depth_points: usize,
    pub vmax_grid: Vec<f64>,
    /// Uniform α points in (0, 1.2·|δ₂ − ⟨U⟩|], besides the two resonances.
    pub alpha_points: usize,
    pub table1_offsets: Vec<Vec<f64>>,
}

impl Default for Sweeps {
    fn default() -> Self {
        Sweeps {
            depth_points: 36,
            vmax_grid: vec![15.5, 16.0, 17.0, 18.0, 20.0, 23.0, 26.0, 30.0, 35.0, 40.0, 50.0],
            alpha_points: 24,
            table1_offsets: vec![
                vec![0.0, 0.1, 0.0, 0.0],
                vec![0.2, 0.0, -0.2, 0.0],
                vec![0.0, 0.1, 0.3, -0.3],
                vec![-0.1, 0.3, -0.4, 0.2],
            ],
        }
    }
}

impl RunConfig {
    /// Defaults for an N-site lattice with the given link offsets.
    pub fn for_offsets(delta: &[f64]) -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            lattice: LatticeSpec::with_offsets(delta),
            occupancy: Occupancy::default(),
            reservoirs: Reservoirs::default(),
            modulation: ModulationConfig::default(),
            solver: SolverOptions::default(),
            outputs: Outputs::default(),
            sweeps: Sweeps::default(),
            hamiltonian: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        self.lattice.validate()?;
        if self.occupancy.n_max == 0 {
            return Err(Error::Config("occupancy.n_max must be at least 1".into()));
        }
        if !(self.reservoirs.j_over_kappa > 0.0) || !self.reservoirs.j_over_kappa.is_finite() {
            return Err(Error::Config(format!(
                "reservoirs.j_over_kappa must be positive, got {}",
                self.reservoirs.j_over_kappa
            )));
        }
        self.solver.validate()?;
        if let Some(b) = self.modulation.beta {
            if !(b > 0.0) {
                return Err(Error::Config(format!("modulation.beta must be positive, got {b}")));
            }
        }
        match (self.modulation.kind, &self.modulation.frequencies) {
            (ModulationKind::None, Some(f)) if !f.is_empty() => {
                return Err(Error::Config("modulation kind `none` takes no frequencies".into()))
            }
            (ModulationKind::Monochromatic, f) if f.as_ref().map_or(true, |f| f.len() != 1) => {
                return Err(Error::Config("a monochromatic drive needs exactly one frequency".into()))
            }
            _ => {}
        }
        if let Some(h) = &self.hamiltonian {
            let n = self.lattice.n_sites;
            if h.omega.len() != n || h.u.len() != n || h.j.len() + 1 != n {
                return Err(Error::Config(format!("hamiltonian does not describe {n} sites")));
            }
            if self.modulation.kind != ModulationKind::None {
                return Err(Error::Config("an explicit hamiltonian is stationary; set modulation.kind to `none`".into()));
            }
        }
        if self.sweeps.depth_points == 0 || self.sweeps.alpha_points == 0 {
            return Err(Error::Config("sweep grids need at least one point".into()));
        }
        if let Some(v) = self.sweeps.vmax_grid.iter().find(|&&v| !(v >= self.lattice.v_min)) {
            return Err(Error::Config(format!("sweeps.vmax_grid entry {v} is below v_min")));
        }
        Ok(())
    }

    /// κ = J_max / (J/κ).
    pub fn kappa(&self, fit: &TunnelingFit) -> f64 {
        fit.j_max / self.reservoirs.j_over_kappa
    }

    /// The depth waveform for this lattice.
    pub fn scheme(&self, fit: &TunnelingFit) -> Result<ModulationScheme> {
        let m = &self.modulation;
        let (v_min, v_max) = (self.lattice.v_min, self.lattice.v_max);
        let beta = m.beta.unwrap_or(fit.beta);
        let scheme = match m.kind {
            ModulationKind::None => return Ok(ModulationScheme::none(v_min)),
            ModulationKind::Polychromatic => {
                let freqs = m.frequencies.clone().unwrap_or_else(|| self.lattice.link_offsets());
                ModulationScheme::new(ModulationKind::Polychromatic, &freqs, v_min, v_max, beta)?
            }
            ModulationKind::Monochromatic => {
                let f = m.frequencies.as_ref().map_or(0.0, |f| f[0]);
                ModulationScheme::monochromatic(f, v_min, v_max, beta)?
            }
        };
        if m.phases.is_empty() {
            Ok(scheme)
        } else {
            scheme.with_phases(m.phases.clone())
        }
    }
}
