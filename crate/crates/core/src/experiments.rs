//! End-to-end scenarios behind the command-line tools: parameter tables,
//! modulated and stationary steady currents, Table I style gain reports and
//! the V_max and α sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::config::{Normalization, RunConfig};
use crate::effective::{self, EffectiveModel};
use crate::error::{Error, Result};
use crate::fock::{self, FockBasis};
use crate::lattice::{self, BoseHubbardParams, LatticeSpec, TunnelingFit, TunnelingSource};
use crate::lindblad::{self, CurrentTrace, DensityMatrix, DrivenHamiltonian, Lindbladian, ReservoirSpec, SolverOptions};
use crate::modulation::{self, ModulationKind, ModulationScheme};
use crate::format_sig;

/// Environment variable holding the number of sweep workers.
pub const THREADS_ENV: &str = "POLYLATTICE_THREADS";

/// Thread pool sized by [`THREADS_ENV`], defaulting to rayon's choice.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// A lattice with its tunneling law, truncation, reservoirs and solver settings.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: LatticeSpec,
    pub n_max: usize,
    pub fit: TunnelingFit,
    pub kappa: f64,
    pub solver: SolverOptions,
}

impl Scenario {
    pub fn new(spec: LatticeSpec, n_max: usize, j_over_kappa: f64, solver: SolverOptions) -> Result<Self> {
        spec.validate()?;
        let fit = lattice::fit_tunneling(&spec)?;
        Ok(Scenario {
            kappa: fit.j_max / j_over_kappa,
            spec,
            n_max,
            fit,
            solver,
        })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Self::new(cfg.lattice.clone(), cfg.occupancy.n_max, cfg.reservoirs.j_over_kappa, cfg.solver)
    }

    /// Same constants and reservoirs, different link offsets.
    pub fn with_offsets(&self, delta: &[f64]) -> Result<Self> {
        let spec = LatticeSpec {
            n_sites: delta.len() + 1,
            delta: Some(delta.to_vec()),
            v_ext_site: None,
            ..self.spec.clone()
        };
        spec.validate()?;
        Ok(Scenario { spec, ..self.clone() })
    }

    pub fn basis(&self) -> Result<FockBasis> {
        FockBasis::new(self.spec.n_sites, self.n_max)
    }

    pub fn lindbladian(&self, basis: &FockBasis) -> Result<Lindbladian> {
        Lindbladian::new(basis, ReservoirSpec::ends(self.spec.n_sites, self.kappa))
    }

    /// Undriven parameters at v_min with the uniform 2√V removed.
    pub fn stationary_params(&self) -> Result<BoseHubbardParams> {
        let p = lattice::params_at_depth(&self.spec, self.spec.v_min, TunnelingSource::Fit(&self.fit))?;
        Ok(fock::gauge_out_uniform(&p))
    }

    /// The offset-free lattice with uniform J_max: the normalization reference.
    pub fn ideal_params(&self) -> Result<BoseHubbardParams> {
        let mut p = self.stationary_params()?;
        p.omega.iter_mut().for_each(|w| *w = 0.0);
        Ok(p)
    }

    /// Steady current of a stationary Hamiltonian from the Liouvillian kernel.
    pub fn kernel_current(&self, params: &BoseHubbardParams) -> Result<f64> {
        let basis = self.basis()?;
        let l = self.lindbladian(&basis)?;
        let h = fock::build_hamiltonian(&basis, params)?;
        let rho = lindblad::stationary_state(&h, &l)?;
        Ok(l.current(&rho))
    }

    pub fn ideal_current(&self) -> Result<f64> {
        self.kernel_current(&self.ideal_params()?)
    }

    pub fn stationary_current(&self) -> Result<f64> {
        self.kernel_current(&self.stationary_params()?)
    }

    /// Polychromatic drive at the lattice's own offsets.
    pub fn polychromatic(&self) -> Result<ModulationScheme> {
        ModulationScheme::polychromatic_for(&self.spec, &self.fit)
    }

    /// H(t) = offsets + U(V(t))·interaction + J_max·f(t)·hopping, in the frame
    /// without the uniform 2√V(t).
    pub fn driven_hamiltonian(&self, basis: &FockBasis, scheme: &ModulationScheme) -> Result<DrivenHamiltonian> {
        let n = self.spec.n_sites;
        if scheme.kind() == ModulationKind::None {
            let h = fock::build_hamiltonian(basis, &self.stationary_params()?)?;
            return Ok(DrivenHamiltonian::stationary(h));
        }
        let period = scheme
            .common_period()
            .ok_or_else(|| Error::Precondition("a driven Hamiltonian needs a periodic drive".into()))?;
        let offsets = fock::onsite_part(basis, &self.spec.site_offsets(), &vec![0.0; n]);
        let hopping = fock::hopping_part(basis, &vec![self.fit.j_max; n - 1]);
        // U(V) = c·V^{1/4}
        let prefactor = lattice::onsite_interaction(&self.spec, 1.0)?;
        let interacting = self.n_max >= 2 && prefactor > 0.0;
        let mut parts = vec![offsets, hopping];
        if interacting {
            parts.push(fock::onsite_part(basis, &vec![0.0; n], &vec![1.0; n]));
        }
        let u_scale = if interacting { prefactor * scheme.v_max().powf(0.25) } else { 0.0 };
        let fastest = scheme.max_frequency().max(u_scale);
        let s = scheme.clone();
        DrivenHamiltonian::new(
            parts,
            move |t, c| {
                c[0] = 1.0;
                c[1] = s.tunneling_factor(t);
                if interacting {
                    c[2] = prefactor * s.depth_at(t).powf(0.25);
                }
            },
            period,
            fastest,
        )
    }

    /// Propagates the driven system from the vacuum until the window-averaged
    /// current settles.
    pub fn modulated_run(&self, scheme: &ModulationScheme) -> Result<CurrentTrace> {
        let basis = self.basis()?;
        let l = self.lindbladian(&basis)?;
        let h = self.driven_hamiltonian(&basis, scheme)?;
        let (trace, _) = lindblad::run_to_steady_state(&h, &l, &DensityMatrix::vacuum(basis.dim()), &self.solver)?;
        Ok(trace)
    }

    pub fn modulated_current(&self, scheme: &ModulationScheme) -> Result<f64> {
        let trace = self.modulated_run(scheme)?;
        Ok(trace.steady_value.expect("converged runs carry a steady value"))
    }

    /// ⟨U⟩ over one period of `scheme`.
    pub fn mean_interaction(&self, scheme: &ModulationScheme) -> Result<f64> {
        modulation::mean_interaction(scheme, &self.spec)
    }

    /// Flat effective model of the polychromatic drive.
    pub fn effective_single(&self) -> Result<EffectiveModel> {
        let mean_u = self.mean_interaction(&self.polychromatic()?)?;
        effective::build_effective_single(&self.spec, &self.fit, mean_u)
    }
}

/// One row of the `params` table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamsRow {
    pub depth: f64,
    /// Site energy of the first site, 2√V + V_ext(x_1).
    pub omega: f64,
    pub u: f64,
    /// Quadrature J(V).
    pub j: f64,
}

/// ω, U and J on a uniform depth grid over [v_min, v_max], plus the fit.
pub fn params_table(cfg: &RunConfig) -> Result<(TunnelingFit, Vec<ParamsRow>)> {
    cfg.validate()?;
    let spec = &cfg.lattice;
    let fit = lattice::fit_tunneling(spec)?;
    let n = cfg.sweeps.depth_points;
    let rows = (0..n)
        .map(|k| {
            let depth = if n == 1 {
                spec.v_min
            } else {
                spec.v_min + (spec.v_max - spec.v_min) * k as f64 / (n - 1) as f64
            };
            Ok(ParamsRow {
                depth,
                omega: lattice::site_energy(spec, 0, depth)?,
                u: lattice::onsite_interaction(spec, depth)?,
                j: lattice::tunneling(depth)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((fit, rows))
}

pub fn write_params_csv<W: Write>(mut w: W, rows: &[ParamsRow]) -> std::io::Result<()> {
    writeln!(w, "V,omega,U,J")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", format_sig(r.depth), format_sig(r.omega), format_sig(r.u), format_sig(r.j))?;
    }
    Ok(())
}

/// Currents of one lattice with and without modulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub offsets: Vec<f64>,
    pub i_stationary: f64,
    pub i_modulated: f64,
    pub i_ideal: f64,
    pub i_effective: Option<f64>,
    /// i_modulated / i_stationary; absent for the offset-free lattice.
    pub gain: Option<f64>,
    /// i_modulated / i_ideal, as a fraction.
    pub percent_recovered: f64,
    /// |i_effective − i_modulated| / i_modulated, as a fraction.
    pub heff_percent_error: Option<f64>,
}

/// Stationary, modulated, ideal and effective currents for one offset list.
pub fn gain_report(base: &Scenario, offsets: &[f64], i_ideal: f64) -> Result<GainReport> {
    let sc = base.with_offsets(offsets)?;
    let i_stationary = sc.stationary_current()?;
    let driven = modulation::unique_offsets(offsets).len() > 0;
    let (i_modulated, i_effective) = if driven {
        let i_mod = sc.modulated_current(&sc.polychromatic()?)?;
        let i_eff = sc.kernel_current(&sc.effective_single()?.params)?;
        (i_mod, Some(i_eff))
    } else {
        (i_stationary, None)
    };
    Ok(GainReport {
        offsets: offsets.to_vec(),
        i_stationary,
        i_modulated,
        i_ideal,
        i_effective,
        gain: (driven && i_stationary > 0.0).then(|| i_modulated / i_stationary),
        percent_recovered: i_modulated / i_ideal,
        heff_percent_error: i_effective.map(|e| (e - i_modulated).abs() / i_modulated),
    })
}

/// Gain reports for every offset list in the config; a failing row does not
/// stop the others.
pub fn table1(cfg: &RunConfig) -> Result<Vec<(Vec<f64>, Result<GainReport>)>> {
    cfg.validate()?;
    let base = Scenario::from_config(cfg)?;
    let rows = &cfg.sweeps.table1_offsets;
    let mut ideal = std::collections::BTreeMap::new();
    for n in rows.iter().map(|r| r.len()) {
        if let std::collections::btree_map::Entry::Vacant(e) = ideal.entry(n) {
            e.insert(base.with_offsets(&vec![0.0; n])?.ideal_current()?);
        }
    }
    let pool = worker_pool()?;
    let reports: Vec<Result<GainReport>> =
        pool.install(|| rows.par_iter().map(|r| gain_report(&base, r, ideal[&r.len()])).collect());
    Ok(rows.iter().cloned().zip(reports).collect())
}

fn join_offsets(offsets: &[f64]) -> String {
    offsets.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ")
}

fn opt_sig(x: Option<f64>) -> String {
    x.map(format_sig).unwrap_or_default()
}

/// Table I layout; fractions are printed as percentages.
pub fn write_table1_csv<W: Write>(mut w: W, rows: &[(Vec<f64>, Result<GainReport>)]) -> std::io::Result<()> {
    writeln!(
        w,
        "delta,i_stationary,i_modulated,i_ideal,i_effective,gain,percent_recovered,heff_percent_error,status"
    )?;
    for (offsets, row) in rows {
        match row {
            Ok(r) => writeln!(
                w,
                "{},{},{},{},{},{},{},{},ok",
                join_offsets(offsets),
                format_sig(r.i_stationary),
                format_sig(r.i_modulated),
                format_sig(r.i_ideal),
                opt_sig(r.i_effective),
                opt_sig(r.gain),
                format_sig(100.0 * r.percent_recovered),
                opt_sig(r.heff_percent_error.map(|e| 100.0 * e)),
            )?,
            Err(e) => writeln!(w, "{},,,,,,,,error: {}", join_offsets(offsets), e.to_string().replace(',', ";"))?,
        }
    }
    Ok(())
}

fn normalization(cfg: &RunConfig, sc: &Scenario) -> Result<f64> {
    match cfg.outputs.normalization {
        Normalization::IdealFlat => sc.ideal_current(),
        Normalization::None => Ok(1.0),
    }
}

/// Steady state of the configured system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyReport {
    pub steady_current: f64,
    pub stationary_current: f64,
    pub normalization: f64,
    pub normalized: f64,
    /// Time at which the convergence rule was met; zero for kernel solutions.
    pub settled_at: f64,
}

pub fn steady(cfg: &RunConfig) -> Result<SteadyReport> {
    cfg.validate()?;
    let sc = Scenario::from_config(cfg)?;
    let norm = normalization(cfg, &sc)?;
    let stationary = match &cfg.hamiltonian {
        Some(p) => sc.kernel_current(p)?,
        None => sc.stationary_current()?,
    };
    let scheme = cfg.scheme(&sc.fit)?;
    let (current, settled_at) = if scheme.kind() == ModulationKind::None {
        (stationary, 0.0)
    } else {
        let trace = sc.modulated_run(&scheme)?;
        (trace.steady_value.unwrap_or(f64::NAN), trace.times.last().copied().unwrap_or(0.0))
    };
    Ok(SteadyReport {
        steady_current: current,
        stationary_current: stationary,
        normalization: norm,
        normalized: current / norm,
        settled_at,
    })
}

pub fn write_steady_csv<W: Write>(mut w: W, r: &SteadyReport) -> std::io::Result<()> {
    writeln!(w, "quantity,value")?;
    for (k, v) in [
        ("steady_current", r.steady_current),
        ("stationary_current", r.stationary_current),
        ("normalization", r.normalization),
        ("current_normalized", r.normalized),
        ("settled_at", r.settled_at),
    ] {
        writeln!(w, "{k},{}", format_sig(v))?;
    }
    Ok(())
}

/// Time traces of the configured system and, where one exists, its
/// effective model sampled at the same times.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub full: CurrentTrace,
    pub effective: Option<CurrentTrace>,
    pub normalization: f64,
}

/// The effective model matching the configured drive, if the theory has one.
pub fn effective_model(cfg: &RunConfig, sc: &Scenario, scheme: &ModulationScheme) -> Result<Option<EffectiveModel>> {
    match scheme.kind() {
        ModulationKind::Polychromatic if sc.n_max == 1 && cfg.modulation.frequencies.is_none() => {
            Ok(Some(sc.effective_single()?))
        }
        ModulationKind::Monochromatic if sc.spec.n_sites == 2 && sc.n_max >= 2 => {
            let mean_u = sc.mean_interaction(scheme)?;
            let alpha = scheme.frequencies()[0];
            Ok(effective::build_effective_two_site(&sc.spec, &sc.fit, mean_u, alpha).ok())
        }
        _ => Ok(None),
    }
}

pub fn evolve(cfg: &RunConfig) -> Result<Evolution> {
    cfg.validate()?;
    let sc = Scenario::from_config(cfg)?;
    let norm = normalization(cfg, &sc)?;
    let basis = sc.basis()?;
    let l = sc.lindbladian(&basis)?;
    let scheme = cfg.scheme(&sc.fit)?;
    let h = match &cfg.hamiltonian {
        Some(p) => DrivenHamiltonian::stationary(fock::build_hamiltonian(&basis, p)?),
        None => sc.driven_hamiltonian(&basis, &scheme)?,
    };
    let vacuum = DensityMatrix::vacuum(basis.dim());
    let (full, _) = lindblad::run_to_steady_state(&h, &l, &vacuum, &sc.solver)?;
    let effective = match effective_model(cfg, &sc, &scheme)? {
        Some(m) if cfg.hamiltonian.is_none() => {
            let h_eff = DrivenHamiltonian::stationary(fock::build_hamiltonian(&basis, &m.params)?);
            let t_end = full.times.last().copied().unwrap_or(0.0);
            let (trace, _) = lindblad::propagate(&h_eff, &l, &vacuum, t_end, &full.times, &sc.solver)?;
            Some(trace)
        }
        _ => None,
    };
    Ok(Evolution {
        full,
        effective,
        normalization: norm,
    })
}

/// Steady current against the clamp depth, normalized to the configured v_max.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmaxPoint {
    pub v_max: f64,
    pub current: f64,
    pub normalized: f64,
}

pub fn sweep_vmax(cfg: &RunConfig) -> Result<Vec<VmaxPoint>> {
    cfg.validate()?;
    let sc = Scenario::from_config(cfg)?;
    let scheme = cfg.scheme(&sc.fit)?;
    if scheme.kind() == ModulationKind::None {
        return Err(Error::Precondition("a V_max sweep needs a modulated lattice".into()));
    }
    let reference = sc.spec.v_max;
    let mut grid = cfg.sweeps.vmax_grid.clone();
    if !grid.contains(&reference) {
        grid.push(reference);
    }
    let pool = worker_pool()?;
    let currents = pool.install(|| {
        grid.par_iter()
            .map(|&v| sc.modulated_current(&scheme.clone().with_v_max(v)?))
            .collect::<Result<Vec<_>>>()
    })?;
    let i_ref = grid.iter().zip(&currents).find(|(&v, _)| v == reference).map(|(_, &i)| i).expect("reference in grid");
    Ok(cfg
        .sweeps
        .vmax_grid
        .iter()
        .zip(&currents)
        .map(|(&v_max, &current)| VmaxPoint {
            v_max,
            current,
            normalized: current / i_ref,
        })
        .collect())
}

pub fn write_vmax_csv<W: Write>(mut w: W, points: &[VmaxPoint]) -> std::io::Result<()> {
    writeln!(w, "vmax,current_normalized")?;
    for p in points {
        writeln!(w, "{},{}", format_sig(p.v_max), format_sig(p.normalized))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMarker {
    Undriven,
    Offset,
    Resonance,
    Grid,
}

impl AlphaMarker {
    fn label(self) -> &'static str {
        match self {
            AlphaMarker::Undriven => "undriven",
            AlphaMarker::Offset => "delta2",
            AlphaMarker::Resonance => "delta2_minus_mean_u",
            AlphaMarker::Grid => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweep {
    pub mean_u: f64,
    pub stationary_current: f64,
    /// Current of the resonant two-site effective model.
    pub effective_current: f64,
    pub points: Vec<(f64, f64, AlphaMarker)>,
}

impl AlphaSweep {
    pub fn at(&self, marker: AlphaMarker) -> Option<(f64, f64)> {
        self.points.iter().find(|p| p.2 == marker).map(|p| (p.0, p.1))
    }
}

/// The drive frequencies of an α sweep: zero, the uniform grid on
/// (0, 1.2·|δ₂ − ⟨U⟩|], |δ₂| and |δ₂ − ⟨U⟩|, in ascending order.
pub fn alpha_grid(delta: f64, mean_u: f64, points: usize) -> Vec<(f64, AlphaMarker)> {
    let res = (delta - mean_u).abs();
    let mut grid: Vec<(f64, AlphaMarker)> = vec![(0.0, AlphaMarker::Undriven)];
    grid.extend((1..=points).map(|k| (1.2 * res * k as f64 / points as f64, AlphaMarker::Grid)));
    grid.retain(|&(a, _)| (a - delta.abs()).abs() > 1e-9 && (a - res).abs() > 1e-9 || a == 0.0);
    if delta != 0.0 {
        grid.push((delta.abs(), AlphaMarker::Offset));
    }
    grid.push((res, AlphaMarker::Resonance));
    grid.sort_by(|a, b| a.0.total_cmp(&b.0));
    grid
}

/// Two-site, doubly occupied lattice under a single-frequency drive.
pub fn sweep_alpha(cfg: &RunConfig) -> Result<AlphaSweep> {
    cfg.validate()?;
    let sc = Scenario::from_config(cfg)?;
    if sc.spec.n_sites != 2 || sc.n_max != 2 {
        return Err(Error::Precondition(format!(
            "the α sweep needs 2 sites with n_max = 2, got {} sites with n_max = {}",
            sc.spec.n_sites, sc.n_max
        )));
    }
    let beta = cfg.modulation.beta.unwrap_or(sc.fit.beta);
    let probe = ModulationScheme::monochromatic(1.0, sc.spec.v_min, sc.spec.v_max, beta)?;
    let mean_u = sc.mean_interaction(&probe)?;
    let delta = sc.spec.link_offsets()[0];
    let stationary = sc.stationary_current()?;
    let res = (delta - mean_u).abs();
    let eff = effective::build_effective_two_site(&sc.spec, &sc.fit, mean_u, res)?;
    let effective_current = sc.kernel_current(&eff.params)?;
    let grid = alpha_grid(delta, mean_u, cfg.sweeps.alpha_points);
    let pool = worker_pool()?;
    let currents = pool.install(|| {
        grid.par_iter()
            .map(|&(alpha, _)| {
                if alpha == 0.0 {
                    return Ok(stationary);
                }
                let s = ModulationScheme::monochromatic(alpha, sc.spec.v_min, sc.spec.v_max, beta)?;
                sc.modulated_current(&s)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(AlphaSweep {
        mean_u,
        stationary_current: stationary,
        effective_current,
        points: grid.iter().zip(currents).map(|(&(a, m), i)| (a, i, m)).collect(),
    })
}

pub fn write_alpha_csv<W: Write>(mut w: W, sweep: &AlphaSweep) -> std::io::Result<()> {
    writeln!(w, "alpha,steady_current,marker")?;
    for &(a, i, m) in &sweep.points {
        writeln!(w, "{},{},{}", format_sig(a), format_sig(i), m.label())?;
    }
    Ok(())
}

/// Explicit stationary config for an effective model, for `steady`.
pub fn effective_config(cfg: &RunConfig, model: &EffectiveModel) -> RunConfig {
    let mut out = cfg.clone();
    out.hamiltonian = Some(model.params.clone());
    out.modulation.kind = ModulationKind::None;
    out.modulation.frequencies = None;
    out.modulation.phases.clear();
    out
}
