//! Depth-dependent Bose–Hubbard parameters of a deep one-dimensional lattice.
//!
//! Site energies and interactions use the harmonic-well closed forms; the
//! tunneling matrix element is integrated numerically between neighbouring
//! harmonic-oscillator ground states. All energies are in recoil units.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quadrature::{self, Tolerance};
use crate::units;

/// Lowest depth for which the harmonic-well ansatz is accepted.
pub const MIN_ANSATZ_DEPTH: f64 = 2.0;

/// Relative accuracy demanded of the tunneling quadrature.
pub const TUNNELING_REL_TOL: f64 = 1e-8;

/// Number of abscissae used by [`fit_tunneling`].
pub const FIT_POINTS: usize = 36;

/// Largest accepted max-relative deviation of the exponential tunneling law.
pub const FIT_RESIDUAL_LIMIT: f64 = 0.10;

fn default_spacing() -> f64 {
    640.0
}
fn default_scattering() -> f64 {
    5.2
}
fn default_mass() -> f64 {
    units::RB87_MASS / units::ATOMIC_MASS_UNIT
}
fn default_v_perp() -> f64 {
    50.0
}
fn default_v_min() -> f64 {
    15.0
}
fn default_v_max() -> f64 {
    50.0
}

/// Geometry, atomic constants and external offsets of an N-site lattice.
///
/// Offsets are given either per link (`delta`, δ_j = ω_j − ω_{j−1}) or per
/// site (`v_ext_site`), never both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub n_sites: usize,
    #[serde(default = "default_spacing")]
    pub lattice_spacing_nm: f64,
    #[serde(default = "default_scattering")]
    pub scattering_length_nm: f64,
    #[serde(default = "default_mass")]
    pub atom_mass_amu: f64,
    #[serde(default = "default_v_perp")]
    pub v_perp: f64,
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_ext_site: Option<Vec<f64>>,
}

impl LatticeSpec {
    /// Lattice with default constants and the given link offsets.
    pub fn with_offsets(delta: &[f64]) -> Self {
        LatticeSpec {
            n_sites: delta.len() + 1,
            delta: Some(delta.to_vec()),
            ..LatticeSpec::flat(delta.len() + 1)
        }
    }

    /// Offset-free lattice with default constants.
    pub fn flat(n_sites: usize) -> Self {
        LatticeSpec {
            n_sites,
            lattice_spacing_nm: default_spacing(),
            scattering_length_nm: default_scattering(),
            atom_mass_amu: default_mass(),
            v_perp: default_v_perp(),
            v_min: default_v_min(),
            v_max: default_v_max(),
            delta: None,
            v_ext_site: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites < 2 {
            return Err(Error::Config(format!(
                "a lattice needs at least 2 sites, got {}",
                self.n_sites
            )));
        }
        if !(self.v_min > 0.0) || !(self.v_min <= self.v_max) {
            return Err(Error::Config(format!(
                "need 0 < v_min <= v_max, got v_min = {}, v_max = {}",
                self.v_min, self.v_max
            )));
        }
        for (name, v) in [
            ("lattice_spacing_nm", self.lattice_spacing_nm),
            ("atom_mass_amu", self.atom_mass_amu),
            ("v_perp", self.v_perp),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.scattering_length_nm >= 0.0) {
            return Err(Error::Config(format!(
                "scattering_length_nm must be non-negative, got {}",
                self.scattering_length_nm
            )));
        }
        match (&self.delta, &self.v_ext_site) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "`delta` and `v_ext_site` are mutually exclusive".into(),
                ))
            }
            (Some(d), None) if d.len() != self.n_sites - 1 => {
                return Err(Error::Config(format!(
                    "`delta` needs {} link offsets, got {}",
                    self.n_sites - 1,
                    d.len()
                )))
            }
            (None, Some(v)) if v.len() != self.n_sites => {
                return Err(Error::Config(format!(
                    "`v_ext_site` needs {} site offsets, got {}",
                    self.n_sites,
                    v.len()
                )))
            }
            _ => {}
        }
        if self.link_offsets().iter().any(|d| !d.is_finite()) {
            return Err(Error::Config("offsets must be finite".into()));
        }
        for (j, d) in self.link_offsets().iter().enumerate() {
            if d.abs() >= self.v_min / 10.0 {
                log::warn!(
                    "offset δ_{} = {d} E_r is not small against v_min = {} E_r",
                    j + 2,
                    self.v_min
                );
            }
        }
        Ok(())
    }

    /// External potential V_ext(x_j) for every site. With link offsets the
    /// first site is the reference (V_ext(x_1) = 0).
    pub fn site_offsets(&self) -> Vec<f64> {
        if let Some(v) = &self.v_ext_site {
            return v.clone();
        }
        let mut out = Vec::with_capacity(self.n_sites);
        let mut acc = 0.0;
        out.push(acc);
        for j in 1..self.n_sites {
            acc += self.delta.as_ref().map_or(0.0, |d| d[j - 1]);
            out.push(acc);
        }
        out
    }

    /// δ_j = V_ext(x_j) − V_ext(x_{j−1}) for j = 2..N.
    pub fn link_offsets(&self) -> Vec<f64> {
        match (&self.delta, &self.v_ext_site) {
            (Some(d), _) => d.clone(),
            (None, Some(v)) => v.windows(2).map(|w| w[1] - w[0]).collect(),
            (None, None) => vec![0.0; self.n_sites.saturating_sub(1)],
        }
    }

    pub fn recoil_energy_joules(&self) -> f64 {
        units::recoil_energy(
            self.atom_mass_amu * units::ATOMIC_MASS_UNIT,
            self.lattice_spacing_nm * 1e-9,
        )
    }
}

/// Bose–Hubbard parameters at one lattice depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoseHubbardParams {
    pub omega: Vec<f64>,
    pub u: Vec<f64>,
    /// Link tunnelings; `j[k]` couples sites k and k+1 (0-based).
    pub j: Vec<f64>,
    pub depth: f64,
}

impl BoseHubbardParams {
    pub fn n_sites(&self) -> usize {
        self.omega.len()
    }
}

/// Exponential tunneling law J(V) ≈ j_max·exp(−β (V − v_min)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunnelingFit {
    pub j_max: f64,
    pub beta: f64,
    pub v_min: f64,
    /// Max relative deviation from the quadrature J over the fitted window.
    pub residual: f64,
}

impl TunnelingFit {
    pub fn at(&self, depth: f64) -> f64 {
        self.j_max * (-self.beta * (depth - self.v_min)).exp()
    }

    pub fn ensure_residual_below(&self, limit: f64) -> Result<()> {
        if self.residual > limit {
            return Err(Error::FitResidual {
                residual: self.residual,
                limit,
            });
        }
        Ok(())
    }
}

fn check_depth(depth: f64) -> Result<()> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::Precondition(format!(
            "lattice depth must be positive, got {depth}"
        )));
    }
    Ok(())
}

/// ω_j(V) = 2√V + V_ext(x_j).
pub fn site_energy(spec: &LatticeSpec, site: usize, depth: f64) -> Result<f64> {
    check_depth(depth)?;
    if site >= spec.n_sites {
        return Err(Error::SiteOutOfRange {
            index: site,
            len: spec.n_sites,
        });
    }
    Ok(2.0 * depth.sqrt() + spec.site_offsets()[site])
}

/// U(V) = √(8π)(a_s/a_l)√V_⊥ V^{1/4}.
pub fn onsite_interaction(spec: &LatticeSpec, depth: f64) -> Result<f64> {
    check_depth(depth)?;
    Ok((8.0 * PI).sqrt()
        * (spec.scattering_length_nm / spec.lattice_spacing_nm)
        * spec.v_perp.sqrt()
        * depth.powf(0.25))
}

/// |J(V)| between neighbouring harmonic-well ground states.
///
/// In the coordinate y = πx/a_l the single-particle Hamiltonian is
/// −d²/dy² + V sin²y, the wells sit at y = 0 and y = π, and the harmonic
/// ground state has width σ = V^{−1/4}. The integrand is
/// ψ_π(y)·[Hψ_0](y) with the Gaussian's second derivative taken analytically.
pub fn tunneling(depth: f64) -> Result<f64> {
    if !(depth >= MIN_ANSATZ_DEPTH) || !depth.is_finite() {
        return Err(Error::Precondition(format!(
            "harmonic-well tunneling needs depth >= {MIN_ANSATZ_DEPTH} E_r, got {depth}"
        )));
    }
    let sigma = depth.powf(-0.25);
    let s2 = sigma * sigma;
    let norm = (PI * s2).powf(-0.5);
    let integrand = |y: f64| {
        let left = y * y / (2.0 * s2);
        let right = (y - PI) * (y - PI) / (2.0 * s2);
        let product = norm * (-(left + right)).exp();
        let kinetic = 1.0 / s2 - y * y / (s2 * s2);
        let potential = depth * y.sin().powi(2);
        product * (kinetic + potential)
    };
    let value = quadrature::integrate(
        integrand,
        -5.0 * sigma,
        PI + 5.0 * sigma,
        Tolerance::relative(TUNNELING_REL_TOL),
    )?;
    Ok(value.abs())
}

/// Least-squares fit of ln J(V) on a uniform grid over `[v_min, v_max]`.
///
/// The law is anchored at the first grid point, so `j_max` is the quadrature
/// J(v_min) and only β is fitted. The residual is recorded, not enforced; use
/// [`fit_tunneling_checked`] to reject fits above [`FIT_RESIDUAL_LIMIT`].
pub fn fit_tunneling(spec: &LatticeSpec) -> Result<TunnelingFit> {
    if !(spec.v_min < spec.v_max) {
        return Err(Error::Precondition(format!(
            "fit needs v_min < v_max, got [{}, {}]",
            spec.v_min, spec.v_max
        )));
    }
    let step = (spec.v_max - spec.v_min) / (FIT_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..FIT_POINTS).map(|i| spec.v_min + step * i as f64).collect();
    let values = grid.iter().map(|&v| tunneling(v)).collect::<Result<Vec<_>>>()?;

    let j_max = values[0];
    let ln0 = j_max.ln();
    let (num, den) = grid
        .iter()
        .zip(&values)
        .fold((0.0, 0.0), |(num, den), (&v, &j)| {
            let x = v - spec.v_min;
            (num + x * (j.ln() - ln0), den + x * x)
        });
    let beta = -num / den;
    let mut fit = TunnelingFit {
        j_max,
        beta,
        v_min: spec.v_min,
        residual: 0.0,
    };
    fit.residual = grid
        .iter()
        .zip(&values)
        .map(|(&v, &j)| (fit.at(v) / j - 1.0).abs())
        .fold(0.0, f64::max);
    if fit.residual > FIT_RESIDUAL_LIMIT {
        log::warn!(
            "exponential tunneling law deviates by up to {:.1}% on [{}, {}] E_r",
            100.0 * fit.residual,
            spec.v_min,
            spec.v_max
        );
    }
    Ok(fit)
}

/// [`fit_tunneling`], rejecting fits whose residual exceeds [`FIT_RESIDUAL_LIMIT`].
pub fn fit_tunneling_checked(spec: &LatticeSpec) -> Result<TunnelingFit> {
    let fit = fit_tunneling(spec)?;
    fit.ensure_residual_below(FIT_RESIDUAL_LIMIT)?;
    Ok(fit)
}

/// Source of the tunneling amplitude in [`params_at_depth`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TunnelingSource<'a> {
    Fit(&'a TunnelingFit),
    Quadrature,
}

/// Assembles ω, U and J for every site and link at `depth`.
pub fn params_at_depth(
    spec: &LatticeSpec,
    depth: f64,
    source: TunnelingSource<'_>,
) -> Result<BoseHubbardParams> {
    spec.validate()?;
    if depth < spec.v_min {
        return Err(Error::Precondition(format!(
            "depth {depth} E_r is below v_min = {} E_r",
            spec.v_min
        )));
    }
    let uniform = 2.0 * depth.sqrt();
    let omega = spec.site_offsets().iter().map(|o| uniform + o).collect();
    let u = vec![onsite_interaction(spec, depth)?; spec.n_sites];
    let j = match source {
        TunnelingSource::Fit(fit) => fit.at(depth),
        TunnelingSource::Quadrature => tunneling(depth)?,
    };
    Ok(BoseHubbardParams {
        omega,
        u,
        j: vec![j; spec.n_sites - 1],
        depth,
    })
}
