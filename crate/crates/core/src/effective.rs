//! Stationary effective Hamiltonians of the modulated lattice.
//!
//! Under polychromatic modulation every link keeps a static tunneling J̃_j:
//! links without an offset see the mean of the drive, J/2, and links with an
//! offset pick up the single resonant sideband, J/(4M). For two sites with
//! double occupancy the drive is tuned to δ₂ − ⟨U⟩, which leaves an effective
//! site gap of ⟨U⟩ and tunneling J/4.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{BoseHubbardParams, LatticeSpec, TunnelingFit};
use crate::modulation::{unique_offsets, DEDUP_TOLERANCE};

/// Tolerance on the resonant drive frequency of the two-site model.
pub const RESONANCE_TOLERANCE: f64 = 1e-6;

/// The rule that set one effective link tunneling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum LinkRule {
    /// δ_j = 0: J/2.
    Flat,
    /// δ_j ≠ 0 among `m` distinct drive frequencies: J/(4M).
    Offset { m: usize },
    /// Two sites driven at δ₂ − ⟨U⟩: J/4.
    Resonant,
}

impl LinkRule {
    pub fn factor(self) -> f64 {
        match self {
            LinkRule::Flat => 0.5,
            LinkRule::Offset { m } => 1.0 / (4.0 * m as f64),
            LinkRule::Resonant => 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveModel {
    /// Gauged parameters: the first site sits at zero energy.
    pub params: BoseHubbardParams,
    /// One rule per link, in link order.
    pub provenance: Vec<LinkRule>,
}

impl EffectiveModel {
    /// max ω − min ω.
    pub fn energy_spread(&self) -> f64 {
        let (lo, hi) = self
            .params
            .omega
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| (lo.min(w), hi.max(w)));
        hi - lo
    }
}

/// Flat effective lattice for single occupancy. `mean_u` fills the (inert)
/// interaction entries.
pub fn build_effective_single(spec: &LatticeSpec, fit: &TunnelingFit, mean_u: f64) -> Result<EffectiveModel> {
    spec.validate()?;
    let offsets = spec.link_offsets();
    let m = unique_offsets(&offsets).len();
    if m == 0 {
        return Err(Error::Precondition(
            "every link offset vanishes, so there is no drive frequency to build an effective model from".into(),
        ));
    }
    let provenance: Vec<LinkRule> = offsets
        .iter()
        .map(|d| {
            if d.abs() > DEDUP_TOLERANCE {
                LinkRule::Offset { m }
            } else {
                LinkRule::Flat
            }
        })
        .collect();
    let j = provenance.iter().map(|r| fit.j_max * r.factor()).collect();
    Ok(EffectiveModel {
        params: BoseHubbardParams {
            omega: vec![0.0; spec.n_sites],
            u: vec![mean_u; spec.n_sites],
            j,
            depth: spec.v_min,
        },
        provenance,
    })
}

/// Two-site model for a drive at `alpha` = δ₂ − ⟨U⟩. The sign of `alpha` is
/// irrelevant to a cos² drive, so only magnitudes are compared.
pub fn build_effective_two_site(
    spec: &LatticeSpec,
    fit: &TunnelingFit,
    mean_u: f64,
    alpha: f64,
) -> Result<EffectiveModel> {
    spec.validate()?;
    if spec.n_sites != 2 {
        return Err(Error::Precondition(format!(
            "the resonant double-occupancy model needs 2 sites, got {}",
            spec.n_sites
        )));
    }
    let delta = spec.link_offsets()[0];
    let resonance = delta - mean_u;
    if (alpha.abs() - resonance.abs()).abs() > RESONANCE_TOLERANCE {
        return Err(Error::Precondition(format!(
            "drive {alpha} E_r is off the resonance |δ₂ − ⟨U⟩| = {} E_r",
            resonance.abs()
        )));
    }
    Ok(EffectiveModel {
        params: BoseHubbardParams {
            omega: vec![0.0, mean_u],
            u: vec![mean_u; 2],
            j: vec![fit.j_max * LinkRule::Resonant.factor()],
            depth: spec.v_min,
        },
        provenance: vec![LinkRule::Resonant],
    })
}

/// Candidate drive frequencies for transport through a two-site lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resonances {
    pub candidates: Vec<f64>,
    /// The candidate expected to carry the largest current.
    pub dominant: f64,
}

/// |δ₂| opens single-particle transport; with double occupancy |δ₂ − ⟨U⟩|
/// moves the second atom and dominates. For more than two sites the same
/// rule is applied link by link, which is a heuristic.
pub fn resonance_frequencies(spec: &LatticeSpec, mean_u: f64, n_max: usize) -> Resonances {
    let offsets = spec.link_offsets();
    let mut candidates = unique_offsets(&offsets);
    let mut dominant = candidates.first().copied().unwrap_or(0.0);
    if n_max >= 2 {
        let shifted: Vec<f64> = offsets.iter().map(|d| (d - mean_u).abs()).collect();
        dominant = shifted.first().copied().unwrap_or(0.0);
        for f in shifted {
            if !candidates.iter().any(|c| (c - f).abs() <= DEDUP_TOLERANCE) {
                candidates.push(f);
            }
        }
    }
    Resonances { candidates, dominant }
}
