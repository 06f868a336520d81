//! Lattice-depth waveforms and the time-dependent parameters they induce.
//!
//! The polychromatic waveform is
//!
//! ```text
//! V(t) = V_min − (1/β) ln[(1/M) Σ_{k=1..M} cos²(δ_k t/2 + φ_k)]
//! ```
//!
//! so that J(V(t)) = J_max·(1/M)Σcos²(δ_k t/2 + φ_k) under the exponential
//! tunneling law. The depth is clamped at V_max; the clamp appears in
//! tunneling space as the floor exp(−β(V_max − V_min)).

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::lattice::{self, LatticeSpec, TunnelingFit};
use crate::quadrature::{self, Tolerance};

/// Frequencies are exact multiples of this quantum (in E_r).
pub const FREQUENCY_QUANTUM: f64 = 1e-3;

/// Offsets closer than this (in E_r) are the same drive frequency.
pub const DEDUP_TOLERANCE: f64 = 1e-9;

/// Relative accuracy of the period average in [`mean_interaction`].
pub const MEAN_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModulationKind {
    None,
    Polychromatic,
    Monochromatic,
}

/// A depth waveform V(t) between `v_min` and `v_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScheme", into = "RawScheme")]
pub struct ModulationScheme {
    kind: ModulationKind,
    frequencies: Vec<f64>,
    /// Polychromatic frequencies in units of [`FREQUENCY_QUANTUM`].
    quanta: Vec<u64>,
    phases: Vec<f64>,
    v_min: f64,
    v_max: f64,
    beta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScheme {
    kind: ModulationKind,
    #[serde(default)]
    frequencies: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    phases: Vec<f64>,
    v_min: f64,
    v_max: f64,
    beta: f64,
}

impl TryFrom<RawScheme> for ModulationScheme {
    type Error = Error;

    fn try_from(raw: RawScheme) -> Result<Self> {
        let scheme = ModulationScheme::new(raw.kind, &raw.frequencies, raw.v_min, raw.v_max, raw.beta)?;
        if raw.phases.is_empty() {
            Ok(scheme)
        } else {
            scheme.with_phases(raw.phases)
        }
    }
}

impl From<ModulationScheme> for RawScheme {
    fn from(s: ModulationScheme) -> Self {
        RawScheme {
            kind: s.kind,
            frequencies: s.frequencies(),
            phases: if s.phases.iter().all(|&p| p == 0.0) {
                Vec::new()
            } else {
                s.phases.clone()
            },
            v_min: s.v_min,
            v_max: s.v_max,
            beta: s.beta,
        }
    }
}

fn to_quanta(f: f64) -> Result<u64> {
    let q = (f / FREQUENCY_QUANTUM).round();
    if !f.is_finite() || (q * FREQUENCY_QUANTUM - f).abs() > DEDUP_TOLERANCE {
        return Err(Error::Config(format!(
            "drive frequency {f} E_r is not a multiple of {FREQUENCY_QUANTUM} E_r"
        )));
    }
    Ok(q as u64)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Distinct non-zero |δ_j|, sorted, duplicates merged within [`DEDUP_TOLERANCE`].
pub fn unique_offsets(offsets: &[f64]) -> Vec<f64> {
    let mut mags: Vec<f64> = offsets
        .iter()
        .map(|d| d.abs())
        .filter(|&d| d > DEDUP_TOLERANCE)
        .collect();
    mags.sort_by(f64::total_cmp);
    mags.dedup_by(|a, b| (*a - *b).abs() <= DEDUP_TOLERANCE);
    mags
}

impl ModulationScheme {
    pub fn new(kind: ModulationKind, frequencies: &[f64], v_min: f64, v_max: f64, beta: f64) -> Result<Self> {
        if !(v_min > 0.0 && v_min <= v_max) {
            return Err(Error::Config(format!(
                "need 0 < v_min <= v_max, got [{v_min}, {v_max}]"
            )));
        }
        if !(beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        let (frequencies, quanta) = match kind {
            ModulationKind::None => {
                if !frequencies.is_empty() {
                    return Err(Error::Config("an unmodulated scheme takes no frequencies".into()));
                }
                (Vec::new(), Vec::new())
            }
            ModulationKind::Monochromatic => {
                if frequencies.len() != 1 || !frequencies[0].is_finite() {
                    return Err(Error::Config(format!(
                        "monochromatic drive needs exactly one finite frequency, got {frequencies:?}"
                    )));
                }
                (vec![frequencies[0].abs()], Vec::new())
            }
            ModulationKind::Polychromatic => {
                let mut q = unique_offsets(frequencies)
                    .into_iter()
                    .map(to_quanta)
                    .collect::<Result<Vec<_>>>()?;
                q.dedup();
                (q.iter().map(|&k| k as f64 * FREQUENCY_QUANTUM).collect(), q)
            }
        };
        if kind != ModulationKind::None && frequencies.iter().all(|&f| f == 0.0) {
            return Err(Error::Precondition(
                "modulation requested but every drive frequency is zero".into(),
            ));
        }
        let phases = vec![0.0; frequencies.len()];
        Ok(ModulationScheme {
            kind,
            frequencies,
            quanta,
            phases,
            v_min,
            v_max,
            beta,
        })
    }

    pub fn none(v_min: f64) -> Self {
        ModulationScheme {
            kind: ModulationKind::None,
            frequencies: Vec::new(),
            quanta: Vec::new(),
            phases: Vec::new(),
            v_min,
            v_max: v_min,
            beta: 1.0,
        }
    }

    /// One cos² term per distinct non-zero link offset of `spec`.
    pub fn polychromatic_for(spec: &LatticeSpec, fit: &TunnelingFit) -> Result<Self> {
        Self::new(
            ModulationKind::Polychromatic,
            &spec.link_offsets(),
            spec.v_min,
            spec.v_max,
            fit.beta,
        )
    }

    pub fn monochromatic(alpha: f64, v_min: f64, v_max: f64, beta: f64) -> Result<Self> {
        Self::new(ModulationKind::Monochromatic, &[alpha], v_min, v_max, beta)
    }

    /// Per-frequency phase offsets φ_k added inside each cos² argument.
    pub fn with_phases(mut self, phases: Vec<f64>) -> Result<Self> {
        if phases.len() != self.frequencies.len() {
            return Err(Error::Config(format!(
                "{} phases given for {} frequencies",
                phases.len(),
                self.frequencies.len()
            )));
        }
        self.phases = phases;
        Ok(self)
    }

    pub fn with_v_max(mut self, v_max: f64) -> Result<Self> {
        if !(v_max >= self.v_min) {
            return Err(Error::Config(format!("v_max {v_max} below v_min {}", self.v_min)));
        }
        self.v_max = v_max;
        Ok(self)
    }

    pub fn kind(&self) -> ModulationKind {
        self.kind
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.frequencies.clone()
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Number of distinct drive frequencies M.
    pub fn n_frequencies(&self) -> usize {
        self.frequencies.len()
    }

    pub fn max_frequency(&self) -> f64 {
        self.frequencies().into_iter().fold(0.0, f64::max)
    }

    /// Least common period of the drive: 2π/α for a single frequency, 2π/gcd
    /// of the quantized frequencies otherwise; `None` when undriven.
    pub fn common_period(&self) -> Option<f64> {
        match self.kind {
            ModulationKind::None => None,
            ModulationKind::Monochromatic => Some(2.0 * PI / self.frequencies[0]),
            ModulationKind::Polychromatic => {
                let g = self.quanta.iter().copied().fold(0, gcd);
                (g > 0).then(|| 2.0 * PI / (g as f64 * FREQUENCY_QUANTUM))
            }
        }
    }

    /// exp(−β (V_max − V_min)): the smallest tunneling factor the clamp allows.
    pub fn floor(&self) -> f64 {
        (-self.beta * (self.v_max - self.v_min)).exp()
    }

    /// (1/M) Σ cos²(δ_k t/2 + φ_k) before clamping.
    pub fn raw_factor(&self, t: f64) -> f64 {
        if self.kind == ModulationKind::None {
            return 1.0;
        }
        let sum: f64 = self
            .frequencies
            .iter()
            .zip(&self.phases)
            .map(|(&f, &phi)| (0.5 * f * t + phi).cos().powi(2))
            .sum();
        sum / self.frequencies.len() as f64
    }

    /// J(t)/J_max, clamped below at [`floor`](Self::floor).
    pub fn tunneling_factor(&self, t: f64) -> f64 {
        if self.kind == ModulationKind::None {
            return 1.0;
        }
        self.raw_factor(t).max(self.floor())
    }

    pub fn depth_at(&self, t: f64) -> f64 {
        if self.kind == ModulationKind::None {
            return self.v_min;
        }
        let g = self.raw_factor(t);
        if g <= self.floor() {
            return self.v_max;
        }
        (self.v_min - g.ln() / self.beta).min(self.v_max)
    }
}

/// U(V(t)) from the closed form.
pub fn interaction_at(s: &ModulationScheme, spec: &LatticeSpec, t: f64) -> Result<f64> {
    lattice::onsite_interaction(spec, s.depth_at(t))
}

/// ⟨U⟩: the average of [`interaction_at`] over one common period.
pub fn mean_interaction(s: &ModulationScheme, spec: &LatticeSpec) -> Result<f64> {
    if s.kind() == ModulationKind::None || s.v_max() == s.v_min() {
        return lattice::onsite_interaction(spec, s.v_min());
    }
    let period = s.common_period().ok_or_else(|| {
        Error::Precondition("mean interaction needs a periodic drive".into())
    })?;
    // Every cos² term is symmetric about t = 0 when the phases vanish, which
    // halves the window.
    let symmetric = s.phases.iter().all(|&p| p == 0.0);
    let end = if symmetric { 0.5 * period } else { period };
    // Split at the points where a single drive term reaches its clamp so the
    // integrand is smooth on every panel.
    let panels = if s.n_frequencies() == 1 { 2 } else { 8 * s.n_frequencies() };
    let mut total = 0.0;
    let mut last_err = None;
    for k in 0..panels {
        let a = end * k as f64 / panels as f64;
        let b = end * (k + 1) as f64 / panels as f64;
        let mut failed = None;
        let part = quadrature::integrate(
            |t| match interaction_at(s, spec, t) {
                Ok(u) => u,
                Err(e) => {
                    failed.get_or_insert(e);
                    f64::NAN
                }
            },
            a,
            b,
            Tolerance {
                rel: MEAN_REL_TOL,
                abs: 0.0,
                max_intervals: 20_000,
            },
        );
        if let Some(e) = failed {
            return Err(e);
        }
        match part {
            Ok(v) => total += v,
            Err(e) => last_err = Some(e),
        }
    }
    if let Some(e) = last_err {
        return Err(e);
    }
    Ok(total / end)
}
