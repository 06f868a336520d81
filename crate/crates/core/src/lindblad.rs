//! Lindblad master equation with a pumped source site and a drained end site.
//!
//! ```text
//! dρ/dt = −i[H(t), ρ] + κ D[a†_src]ρ + κ D[a_drain]ρ,   D[c]ρ = cρc† − ½{c†c, ρ}
//! ```
//!
//! The transport current is I = κ⟨a†_drain a_drain⟩.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fock::{self, CsrMatrix, FockBasis, OperatorMatrix};
use crate::ode::{Dop853, StepControl};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Residual bound accepted from the kernel solver, ‖L ρ_ss‖_F.
pub const STATIONARY_RESIDUAL_LIMIT: f64 = 1e-10;

/// Identical source and drain reservoirs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReservoirSpec {
    pub kappa: f64,
    /// Site pumped through a†; 0-based.
    pub source_site: usize,
    /// Site drained through a; 0-based.
    pub drain_site: usize,
}

impl ReservoirSpec {
    /// Pump on the first site, drain on the last.
    pub fn ends(n_sites: usize, kappa: f64) -> Self {
        ReservoirSpec {
            kappa,
            source_site: 0,
            drain_site: n_sites - 1,
        }
    }
}

/// A density matrix on a Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(pub DMatrix<Complex64>);

impl DensityMatrix {
    /// |0…0⟩⟨0…0|.
    pub fn vacuum(dim: usize) -> Self {
        Self::pure_basis_state(dim, 0)
    }

    pub fn pure_basis_state(dim: usize, k: usize) -> Self {
        let mut m = DMatrix::zeros(dim, dim);
        m[(k, k)] = Complex64::new(1.0, 0.0);
        DensityMatrix(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    pub fn purity(&self) -> f64 {
        (&self.0 * &self.0).trace().re
    }

    /// ‖ρ − ρ†‖_F / ‖ρ‖_F.
    pub fn hermiticity_defect(&self) -> f64 {
        (&self.0 - self.0.adjoint()).norm() / self.0.norm()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.0 + self.0.adjoint()) * Complex64::new(0.5, 0.0);
        h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Tr(Aρ).
    pub fn expectation(&self, op: &OperatorMatrix) -> Complex64 {
        let mut acc = ZERO;
        for (r, c, v) in op.triplets() {
            acc += v * self.0[(c, r)];
        }
        acc
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.0[(k, k)].re).collect()
    }

    #[cfg(test)]
    fn to_row_major(&self) -> Vec<Complex64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * d);
        for r in 0..d {
            for c in 0..d {
                out.push(self.0[(r, c)]);
            }
        }
        out
    }
}

/// Sparse operator stored on a fixed pattern with several value sets, so the
/// linear combination Σ c_k(t) A_k is a pass over `nnz` entries.
#[derive(Debug, Clone)]
struct PatternSum {
    pattern: CsrMatrix,
    parts: Vec<Vec<Complex64>>,
    constant: Vec<Complex64>,
}

impl PatternSum {
    fn new(dim: usize, parts: &[CsrMatrix], constant: &CsrMatrix) -> Self {
        let mut all: Vec<(usize, usize)> = parts
            .iter()
            .chain(std::iter::once(constant))
            .flat_map(|m| (0..dim).flat_map(move |r| m.row(r).map(move |(c, _)| (r, c))))
            .collect();
        all.sort_unstable();
        all.dedup();
        let op = OperatorMatrix::from_triplets(dim, all.iter().map(|&(r, c)| (r, c, Complex64::new(1.0, 0.0))));
        let pattern = op.into_sparse().to_csr();
        let scatter = |m: &CsrMatrix| {
            let mut vals = vec![ZERO; pattern.nnz()];
            for r in 0..dim {
                for (c, v) in m.row(r) {
                    let span = pattern.row_ptr[r]..pattern.row_ptr[r + 1];
                    let pos = pattern.cols[span.clone()].binary_search(&c).expect("in pattern");
                    vals[span.start + pos] = v;
                }
            }
            vals
        };
        PatternSum {
            parts: parts.iter().map(scatter).collect(),
            constant: scatter(constant),
            pattern,
        }
    }

    fn combine(&self, coeffs: &[f64], out: &mut [Complex64]) {
        out.copy_from_slice(&self.constant);
        for (part, &c) in self.parts.iter().zip(coeffs) {
            if c != 0.0 {
                for (o, v) in out.iter_mut().zip(part) {
                    *o += c * v;
                }
            }
        }
    }
}

type CoefficientFn = dyn Fn(f64, &mut [f64]) + Send + Sync;

/// H(t) = Σ_k c_k(t) H_k with a fixed set of Hermitian parts.
#[derive(Clone)]
pub struct DrivenHamiltonian {
    parts: Vec<OperatorMatrix>,
    coefficients: Arc<CoefficientFn>,
    period: Option<f64>,
    fastest_frequency: f64,
}

impl std::fmt::Debug for DrivenHamiltonian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DrivenHamiltonian")
            .field("parts", &self.parts.len())
            .field("period", &self.period)
            .field("fastest_frequency", &self.fastest_frequency)
            .finish()
    }
}

/// Largest absolute row sum; bounds every eigenfrequency of a Hermitian operator.
fn row_sum_norm(op: &OperatorMatrix) -> f64 {
    let mut rows = vec![0.0; op.dim()];
    for (r, _, v) in op.triplets() {
        rows[r] += v.norm();
    }
    rows.into_iter().fold(0.0, f64::max)
}

impl DrivenHamiltonian {
    pub fn stationary(h: OperatorMatrix) -> Self {
        let fastest = row_sum_norm(&h);
        DrivenHamiltonian {
            parts: vec![h],
            coefficients: Arc::new(|_, c| c[0] = 1.0),
            period: None,
            fastest_frequency: fastest,
        }
    }

    /// `coefficients(t, out)` fills one coefficient per part. `period` is the
    /// drive's common period and `fastest_frequency` the largest frequency the
    /// integrator must resolve.
    pub fn new<F>(parts: Vec<OperatorMatrix>, coefficients: F, period: f64, fastest_frequency: f64) -> Result<Self>
    where
        F: Fn(f64, &mut [f64]) + Send + Sync + 'static,
    {
        if parts.is_empty() {
            return Err(Error::Precondition("a Hamiltonian needs at least one part".into()));
        }
        let dim = parts[0].dim();
        if let Some(p) = parts.iter().find(|p| p.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.dim(),
            });
        }
        if !(period > 0.0) {
            return Err(Error::Precondition(format!("drive period must be positive, got {period}")));
        }
        Ok(DrivenHamiltonian {
            parts,
            coefficients: Arc::new(coefficients),
            period: Some(period),
            fastest_frequency,
        })
    }

    pub fn dim(&self) -> usize {
        self.parts[0].dim()
    }

    pub fn period(&self) -> Option<f64> {
        self.period
    }

    pub fn is_stationary(&self) -> bool {
        self.period.is_none()
    }

    pub fn fastest_frequency(&self) -> f64 {
        self.fastest_frequency
    }

    pub fn coefficients_at(&self, t: f64) -> Vec<f64> {
        let mut c = vec![0.0; self.parts.len()];
        (self.coefficients)(t, &mut c);
        c
    }

    /// The Hamiltonian at time `t` as a single operator.
    pub fn at(&self, t: f64) -> OperatorMatrix {
        let c = self.coefficients_at(t);
        let mut acc = OperatorMatrix::zeros(self.dim());
        for (part, &ck) in self.parts.iter().zip(&c) {
            acc = acc.add(&part.scale(Complex64::new(ck, 0.0))).expect("same dim");
        }
        acc
    }

    /// Step cap: one twentieth of the fastest period.
    pub fn max_step(&self) -> f64 {
        if self.fastest_frequency > 0.0 {
            2.0 * PI / self.fastest_frequency / 20.0
        } else {
            f64::INFINITY
        }
    }
}

struct Jump {
    op: CsrMatrix,
}

/// The dissipative part of the master equation for one Fock basis, plus the
/// drain-number observable.
pub struct Lindbladian {
    dim: usize,
    reservoir: ReservoirSpec,
    jumps: Vec<Jump>,
    /// Σ c†c over all jumps.
    decay: OperatorMatrix,
    drain_number: Vec<f64>,
    /// Total particle number of every basis state, when each jump shifts it
    /// by a fixed amount.
    sectors: Option<Vec<i64>>,
}

impl Lindbladian {
    pub fn new(basis: &FockBasis, reservoir: ReservoirSpec) -> Result<Self> {
        if !(reservoir.kappa > 0.0) {
            return Err(Error::Precondition(format!(
                "reservoir rate must be positive, got {}",
                reservoir.kappa
            )));
        }
        let pump = fock::creation(basis, reservoir.source_site)?;
        let drain = fock::annihilation(basis, reservoir.drain_site)?;
        Self::from_jumps(basis, reservoir, &[pump, drain])
    }

    /// No reservoirs at all: the generator is −i[H, ·].
    pub fn closed(basis: &FockBasis) -> Result<Self> {
        let n = basis.n_sites();
        Self::from_jumps(basis, ReservoirSpec::ends(n, 0.0), &[])
    }

    /// Pump only, for isolated-source checks.
    pub fn pump_only(basis: &FockBasis, reservoir: ReservoirSpec) -> Result<Self> {
        let pump = fock::creation(basis, reservoir.source_site)?;
        Self::from_jumps(basis, reservoir, &[pump])
    }

    fn from_jumps(basis: &FockBasis, reservoir: ReservoirSpec, ops: &[OperatorMatrix]) -> Result<Self> {
        let dim = basis.dim();
        let rate = Complex64::new(reservoir.kappa.sqrt(), 0.0);
        let mut decay = OperatorMatrix::zeros(dim);
        let mut jumps = Vec::new();
        for op in ops {
            let c = op.scale(rate);
            decay = decay.add(&c.adjoint().matmul(&c)?)?;
            jumps.push(Jump { op: c.to_csr() });
        }
        let drain_number = fock::number(basis, reservoir.drain_site)?
            .diagonal()
            .iter()
            .map(|v| v.re)
            .collect();
        let labels: Vec<i64> = basis.states().map(|s| s.iter().sum::<usize>() as i64).collect();
        let shifts_uniformly = |c: &CsrMatrix| {
            let mut shift = None;
            (0..dim).all(|r| c.row(r).all(|(k, _)| *shift.get_or_insert(labels[r] - labels[k]) == labels[r] - labels[k]))
        };
        let sectors = jumps.iter().all(|j| shifts_uniformly(&j.op)).then_some(labels);
        Ok(Lindbladian {
            dim,
            reservoir,
            jumps,
            decay,
            drain_number,
            sectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn reservoir(&self) -> &ReservoirSpec {
        &self.reservoir
    }

    /// I = κ⟨n_drain⟩.
    pub fn current(&self, rho: &DensityMatrix) -> f64 {
        let d = self.dim;
        self.reservoir.kappa * (0..d).map(|k| self.drain_number[k] * rho.0[(k, k)].re).sum::<f64>()
    }

    fn current_on(&self, support: &Support, rho: &[Complex64]) -> f64 {
        let d = self.dim;
        self.reservoir.kappa * (0..d).map(|k| self.drain_number[k] * rho[support.pos(k, k)].re).sum::<f64>()
    }

    /// The linear functional ρ ↦ I on the support.
    fn current_probe(&self, support: &Support) -> DVector<Complex64> {
        let mut probe = DVector::zeros(support.len());
        for k in 0..self.dim {
            probe[support.pos(k, k)] = Complex64::new(self.reservoir.kappa * self.drain_number[k], 0.0);
        }
        probe
    }

    /// Smallest entry set of ρ closed under the master equation with the given
    /// Hamiltonian parts: the total-number blocks when every part conserves
    /// particle number, the full matrix otherwise.
    fn support_for(&self, parts: &[CsrMatrix]) -> Support {
        match &self.sectors {
            Some(labels) if parts.iter().all(|p| (0..self.dim).all(|r| p.row(r).all(|(c, _)| labels[r] == labels[c]))) => {
                Support::blocks(labels)
            }
            _ => Support::full(self.dim),
        }
    }

    fn generator(&self, h: &OperatorMatrix) -> Result<CsrMatrix> {
        if h.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: h.dim(),
            });
        }
        Ok(h.sub(&self.decay.scale(Complex64::new(0.0, 0.5)))?.to_csr())
    }

    /// dρ/dt for a fixed Hamiltonian.
    pub fn apply(&self, h: &OperatorMatrix, rho: &DensityMatrix) -> Result<DMatrix<Complex64>> {
        let g = self.generator(h)?;
        if rho.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: rho.dim(),
            });
        }
        let support = Support::full(self.dim);
        let rho = support.gather(&rho.0);
        let mut out = vec![ZERO; rho.len()];
        self.rhs(&support, &g.vals, &g, &rho, &mut out);
        Ok(support.scatter(&out))
    }

    /// Writes −i(Gρ − ρG†) + Σ cρc† into `out`, where G = H − (i/2)Σc†c is
    /// given as values `g` on `pattern` and ρ holds the entries of `support`.
    fn rhs(&self, support: &Support, g: &[Complex64], pattern: &CsrMatrix, rho: &[Complex64], out: &mut [Complex64]) {
        let row = |r: usize| {
            let span = pattern.row_ptr[r]..pattern.row_ptr[r + 1];
            pattern.cols[span.clone()].iter().copied().zip(g[span].iter().copied())
        };
        for (e, &(i, j)) in support.entries.iter().enumerate() {
            let mut left = ZERO;
            for (k, gv) in row(i) {
                left += gv * rho[support.pos(k, j)];
            }
            let mut right = ZERO;
            for (k, gv) in row(j) {
                right += rho[support.pos(i, k)] * gv.conj();
            }
            let mut acc = -I * (left - right);
            for jump in &self.jumps {
                let c = &jump.op;
                for (k, ck) in c.row(i) {
                    for (l, cl) in c.row(j) {
                        acc += ck * rho[support.pos(k, l)] * cl.conj();
                    }
                }
            }
            out[e] = acc;
        }
    }

    /// The Liouvillian as a dim²×dim² matrix acting on row-major vec(ρ).
    pub fn superoperator(&self, h: &OperatorMatrix) -> Result<DMatrix<Complex64>> {
        let g = self.generator(h)?;
        Ok(self.superoperator_on(&Support::full(self.dim), &g))
    }

    fn superoperator_on(&self, support: &Support, g: &CsrMatrix) -> DMatrix<Complex64> {
        let n = support.len();
        let mut l = DMatrix::<Complex64>::zeros(n, n);
        for (r, c, v) in self.superoperator_triplets(support, g, true) {
            l[(r, c)] += v;
        }
        l
    }

    /// Entries of ρ ↦ −i(Gρ − ρG†), plus Σ cρc† when `with_jumps`, on `support`.
    fn superoperator_triplets(&self, support: &Support, g: &CsrMatrix, with_jumps: bool) -> Vec<(usize, usize, Complex64)> {
        let mut out = Vec::new();
        for (e, &(i, j)) in support.entries.iter().enumerate() {
            for (k, gv) in g.row(i) {
                out.push((e, support.pos(k, j), -I * gv));
            }
            for (k, gv) in g.row(j) {
                out.push((e, support.pos(i, k), I * gv.conj()));
            }
            if with_jumps {
                for jump in &self.jumps {
                    let c = &jump.op;
                    for (k, ck) in c.row(i) {
                        for (m, cm) in c.row(j) {
                            out.push((e, support.pos(k, m), ck * cm.conj()));
                        }
                    }
                }
            }
        }
        out
    }
}

/// The entries of ρ carried by a propagation, in row-major order.
#[derive(Debug, Clone)]
struct Support {
    dim: usize,
    entries: Vec<(usize, usize)>,
    index: Vec<usize>,
}

impl Support {
    fn full(dim: usize) -> Self {
        Self::blocks(&vec![0; dim])
    }

    /// Entries (r, c) with equal labels.
    fn blocks(labels: &[i64]) -> Self {
        let dim = labels.len();
        let mut entries = Vec::new();
        let mut index = vec![usize::MAX; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                if labels[r] == labels[c] {
                    index[r * dim + c] = entries.len();
                    entries.push((r, c));
                }
            }
        }
        Support { dim, entries, index }
    }

    fn len(&self) -> usize {
        self.entries.len()
    }

    fn pos(&self, r: usize, c: usize) -> usize {
        let p = self.index[r * self.dim + c];
        debug_assert!(p != usize::MAX, "entry ({r}, {c}) outside the support");
        p
    }

    fn contains(&self, m: &DMatrix<Complex64>) -> bool {
        (0..self.dim).all(|r| (0..self.dim).all(|c| self.index[r * self.dim + c] != usize::MAX || m[(r, c)] == ZERO))
    }

    fn gather(&self, m: &DMatrix<Complex64>) -> Vec<Complex64> {
        self.entries.iter().map(|&(r, c)| m[(r, c)]).collect()
    }

    fn scatter(&self, v: &[Complex64]) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (&(r, c), &x) in self.entries.iter().zip(v) {
            m[(r, c)] = x;
        }
        m
    }
}

/// Sampled current record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentTrace {
    pub times: Vec<f64>,
    pub current: Vec<f64>,
    /// Averaging window used for the steady-state estimate.
    pub window: f64,
    pub steady_value: Option<f64>,
    pub converged: bool,
}

impl CurrentTrace {
    /// CSV with columns `t,current,current_normalized`; `normalization`
    /// divides the second column into the third.
    pub fn write_csv<W: Write>(&self, mut w: W, normalization: f64) -> std::io::Result<()> {
        writeln!(w, "t,current,current_normalized")?;
        for (t, i) in self.times.iter().zip(&self.current) {
            writeln!(
                w,
                "{},{},{}",
                crate::format_sig(*t),
                crate::format_sig(*i),
                crate::format_sig(i / normalization)
            )?;
        }
        Ok(())
    }
}

/// Integrator settings for [`propagate`] and [`run_to_steady_state`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    #[serde(default = "SolverOptions::default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "SolverOptions::default_abs_tol")]
    pub abs_tol: f64,
    /// Give up after this many reservoir lifetimes 1/κ.
    #[serde(default = "SolverOptions::default_t_max")]
    pub t_max_in_kappa_units: f64,
    /// Relative change between successive window averages counted as converged.
    #[serde(default = "SolverOptions::default_steady_tol")]
    pub steady_tol: f64,
    /// Consecutive windows that must meet `steady_tol`.
    #[serde(default = "SolverOptions::default_consecutive")]
    pub consecutive: usize,
    /// Minimum averaging window in units of 1/κ; the window is the smallest
    /// whole number of drive periods at least this long.
    #[serde(default = "SolverOptions::default_window")]
    pub window_in_kappa_units: f64,
    #[serde(default = "SolverOptions::default_samples")]
    pub samples_per_period: usize,
}

impl SolverOptions {
    fn default_rel_tol() -> f64 {
        1e-8
    }
    fn default_abs_tol() -> f64 {
        1e-10
    }
    fn default_t_max() -> f64 {
        50.0
    }
    fn default_steady_tol() -> f64 {
        1e-4
    }
    fn default_consecutive() -> usize {
        3
    }
    fn default_window() -> f64 {
        1.0
    }
    fn default_samples() -> usize {
        64
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("t_max_in_kappa_units", self.t_max_in_kappa_units),
            ("steady_tol", self.steady_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("solver.{name} must be positive, got {v}")));
            }
        }
        if !(self.window_in_kappa_units >= 0.0) {
            return Err(Error::Config("solver.window_in_kappa_units must be non-negative".into()));
        }
        if self.consecutive == 0 || self.samples_per_period < 4 {
            return Err(Error::Config(
                "solver.consecutive must be >= 1 and solver.samples_per_period >= 4".into(),
            ));
        }
        Ok(())
    }
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rel_tol: Self::default_rel_tol(),
            abs_tol: Self::default_abs_tol(),
            t_max_in_kappa_units: Self::default_t_max(),
            steady_tol: Self::default_steady_tol(),
            consecutive: Self::default_consecutive(),
            window_in_kappa_units: Self::default_window(),
            samples_per_period: Self::default_samples(),
        }
    }
}

/// A running propagation: state, integrator and the compiled Hamiltonian.
pub struct Propagation<'a> {
    h: &'a DrivenHamiltonian,
    lindblad: &'a Lindbladian,
    sum: PatternSum,
    support: Support,
    generator: Vec<Complex64>,
    coeffs: Vec<f64>,
    solver: Dop853,
    t: f64,
    rho: Vec<Complex64>,
}

impl<'a> Propagation<'a> {
    pub fn new(h: &'a DrivenHamiltonian, lindblad: &'a Lindbladian, rho0: &DensityMatrix, options: &SolverOptions) -> Result<Self> {
        let d = lindblad.dim();
        for got in [h.dim(), rho0.dim()] {
            if got != d {
                return Err(Error::DimensionMismatch { expected: d, got });
            }
        }
        if (rho0.trace() - Complex64::new(1.0, 0.0)).norm() > 1e-8 || rho0.hermiticity_defect() > 1e-10 {
            return Err(Error::Precondition("initial state must be a unit-trace Hermitian matrix".into()));
        }
        let parts: Vec<CsrMatrix> = h.parts.iter().map(OperatorMatrix::to_csr).collect();
        let mut support = lindblad.support_for(&parts);
        if !support.contains(&rho0.0) {
            support = Support::full(d);
        }
        // The generator is linear in the Hamiltonian, so each part gets its own
        // superoperator and only the coefficients change with time.
        let m = support.len();
        let part_supers: Vec<CsrMatrix> = parts
            .iter()
            .map(|p| CsrMatrix::from_triplets(m, lindblad.superoperator_triplets(&support, p, false)))
            .collect();
        let damping = lindblad.decay.scale(Complex64::new(0.0, -0.5)).to_csr();
        let constant = CsrMatrix::from_triplets(m, lindblad.superoperator_triplets(&support, &damping, true));
        let sum = PatternSum::new(m, &part_supers, &constant);
        let control = StepControl {
            rel_tol: options.rel_tol,
            abs_tol: options.abs_tol,
            max_step: h.max_step(),
            ..StepControl::default()
        };
        Ok(Propagation {
            generator: vec![ZERO; sum.pattern.nnz()],
            coeffs: vec![0.0; h.parts.len()],
            sum,
            h,
            lindblad,
            solver: Dop853::new(support.len(), control),
            t: 0.0,
            rho: support.gather(&rho0.0),
            support,
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> DensityMatrix {
        DensityMatrix(self.support.scatter(&self.rho))
    }

    pub fn current(&self) -> f64 {
        self.lindblad.current_on(&self.support, &self.rho)
    }

    pub fn steps(&self) -> (usize, usize) {
        (self.solver.accepted, self.solver.rejected)
    }

    /// Φ(T) and (1/T)∫₀ᵀ Φ(t) dt on the support, where Φ(t) maps ρ(0) to ρ(t).
    fn period_maps(&self, period: f64) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
        let m = self.support.len();
        let mm = m * m;
        let mut y = vec![ZERO; 2 * mm];
        for c in 0..m {
            y[c * m + c] = Complex64::new(1.0, 0.0);
        }
        let mut solver = Dop853::new(2 * mm, *self.solver.control());
        let mut coeffs = vec![0.0; self.h.parts.len()];
        let mut generator = vec![ZERO; self.sum.pattern.nnz()];
        let (h, sum) = (self.h, &self.sum);
        let mut rhs = |time: f64, y: &[Complex64], dy: &mut [Complex64]| {
            (h.coefficients)(time, &mut coeffs);
            sum.combine(&coeffs, &mut generator);
            let p = &sum.pattern;
            let (dx, dq) = dy.split_at_mut(mm);
            for (x, out) in y[..mm].chunks_exact(m).zip(dx.chunks_exact_mut(m)) {
                for (r, o) in out.iter_mut().enumerate() {
                    let span = p.row_ptr[r]..p.row_ptr[r + 1];
                    *o = p.cols[span.clone()].iter().zip(&generator[span]).map(|(&c, v)| v * x[c]).sum();
                }
            }
            for (o, x) in dq.iter_mut().zip(&y[..mm]) {
                *o = x / period;
            }
        };
        solver.integrate(&mut rhs, 0.0, period, &mut y)?;
        Ok((DMatrix::from_column_slice(m, m, &y[..mm]), DMatrix::from_column_slice(m, m, &y[mm..])))
    }

    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        let Propagation {
            h,
            sum,
            generator,
            coeffs,
            solver,
            t,
            rho,
            ..
        } = self;
        let mut rhs = |time: f64, y: &[Complex64], dy: &mut [Complex64]| {
            (h.coefficients)(time, coeffs);
            sum.combine(coeffs, generator);
            let p = &sum.pattern;
            for (r, out) in dy.iter_mut().enumerate() {
                let span = p.row_ptr[r]..p.row_ptr[r + 1];
                *out = p.cols[span.clone()].iter().zip(&generator[span]).map(|(&c, v)| v * y[c]).sum();
            }
        };
        solver.integrate(&mut rhs, *t, t_end, rho)?;
        *t = t_end;
        Ok(())
    }
}

/// Propagates from ρ(0) = `rho0` to `t_final`, recording I(t) at every time in
/// `sampler` (ascending, within [0, t_final]). Returns the trace and ρ(t_final).
pub fn propagate(
    h: &DrivenHamiltonian,
    lindblad: &Lindbladian,
    rho0: &DensityMatrix,
    t_final: f64,
    sampler: &[f64],
    options: &SolverOptions,
) -> Result<(CurrentTrace, DensityMatrix)> {
    if sampler.windows(2).any(|w| w[1] < w[0]) || sampler.iter().any(|&t| t < 0.0 || t > t_final) {
        return Err(Error::Precondition("sample times must be ascending within [0, t_final]".into()));
    }
    let mut run = Propagation::new(h, lindblad, rho0, options)?;
    let mut trace = CurrentTrace {
        times: Vec::with_capacity(sampler.len()),
        current: Vec::with_capacity(sampler.len()),
        window: h.period().unwrap_or(t_final),
        steady_value: None,
        converged: false,
    };
    for &ts in sampler {
        run.advance_to(ts)?;
        trace.times.push(ts);
        trace.current.push(run.current());
    }
    run.advance_to(t_final)?;
    Ok((trace, run.state()))
}

/// Uniform sampling grid `0, dt, 2dt, …` up to and including `t_final`.
pub fn uniform_grid(t_final: f64, samples: usize) -> Vec<f64> {
    (0..=samples).map(|k| t_final * k as f64 / samples as f64).collect()
}

/// Averaging window: the smallest whole number of drive periods lasting at
/// least `window_in_kappa_units / κ`.
pub fn averaging_window(period: Option<f64>, kappa: f64, options: &SolverOptions) -> (f64, usize) {
    let min_window = options.window_in_kappa_units / kappa;
    match period {
        Some(p) => {
            let periods = ((min_window / p).ceil() as usize).max(1);
            (periods as f64 * p, periods)
        }
        None => (min_window.max(f64::MIN_POSITIVE), 1),
    }
}

fn trapezoid_mean(values: &[f64]) -> f64 {
    let n = values.len() - 1;
    let inner: f64 = values[1..n].iter().sum();
    (inner + 0.5 * (values[0] + values[n])) / n as f64
}

/// Averages of the current over successive windows of `samples_per_window`
/// intervals in `trace`, starting at the first sample.
pub fn window_averages(trace: &CurrentTrace, samples_per_window: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut start = 0;
    while start + samples_per_window < trace.current.len() {
        out.push(trapezoid_mean(&trace.current[start..=start + samples_per_window]));
        start += samples_per_window;
    }
    out
}

/// Applies the convergence rule to successive window averages and returns the
/// final average once `consecutive` relative changes fall below `tol`.
pub fn steady_current(averages: &[f64], tol: f64, consecutive: usize) -> Option<f64> {
    let mut streak = 0;
    for w in averages.windows(2) {
        let change = (w[1] - w[0]).abs() / w[1].abs().max(f64::MIN_POSITIVE);
        streak = if change < tol { streak + 1 } else { 0 };
        if streak >= consecutive {
            return Some(w[1]);
        }
    }
    None
}

/// Largest support for which a periodic run composes one-period maps; the
/// maps hold two dense matrices of this dimension.
pub const PERIOD_MAP_LIMIT: usize = 400;

/// Propagates window by window until the window-averaged current converges.
///
/// Periodic drives on a support of at most [`PERIOD_MAP_LIMIT`] entries are
/// integrated over one period only; later periods apply the resulting map, and
/// each period's mean current comes from the period-averaged map. The trace
/// then holds one sample per period. Everything else goes through
/// [`steady_state_by_sampling`].
pub fn run_to_steady_state(
    h: &DrivenHamiltonian,
    lindblad: &Lindbladian,
    rho0: &DensityMatrix,
    options: &SolverOptions,
) -> Result<(CurrentTrace, DensityMatrix)> {
    options.validate()?;
    require_reservoirs(lindblad)?;
    let run = Propagation::new(h, lindblad, rho0, options)?;
    match h.period() {
        Some(period) if run.support.len() <= PERIOD_MAP_LIMIT => steady_state_by_periods(run, period, options),
        _ => sampled(run, options),
    }
}

/// [`run_to_steady_state`] with every window sampled `samples_per_period`
/// times per period and averaged by the trapezoid rule.
pub fn steady_state_by_sampling(
    h: &DrivenHamiltonian,
    lindblad: &Lindbladian,
    rho0: &DensityMatrix,
    options: &SolverOptions,
) -> Result<(CurrentTrace, DensityMatrix)> {
    options.validate()?;
    require_reservoirs(lindblad)?;
    sampled(Propagation::new(h, lindblad, rho0, options)?, options)
}

fn require_reservoirs(lindblad: &Lindbladian) -> Result<()> {
    if lindblad.reservoir().kappa > 0.0 {
        Ok(())
    } else {
        Err(Error::Precondition("a closed system has no transport steady state".into()))
    }
}

struct Windows {
    averages: Vec<f64>,
    steady_tol: f64,
    consecutive: usize,
    t_max: f64,
    window: f64,
}

impl Windows {
    fn new(h: &DrivenHamiltonian, kappa: f64, options: &SolverOptions) -> (Self, usize) {
        let (window, periods) = averaging_window(h.period(), kappa, options);
        let w = Windows {
            averages: Vec::new(),
            steady_tol: options.steady_tol,
            consecutive: options.consecutive,
            t_max: options.t_max_in_kappa_units / kappa,
            window,
        };
        (w, periods)
    }

    /// Records one window average: Ok(Some) once converged, Err past t_max.
    fn push(&mut self, average: f64, times: &[f64], current: &[f64]) -> Result<Option<f64>> {
        self.averages.push(average);
        if let Some(value) = steady_current(&self.averages, self.steady_tol, self.consecutive) {
            return Ok(Some(value));
        }
        if self.averages.len() as f64 * self.window >= self.t_max {
            let last_change = match self.averages.as_slice() {
                [.., a, b] => (b - a).abs() / b.abs().max(f64::MIN_POSITIVE),
                _ => f64::INFINITY,
            };
            return Err(Error::NotConverged {
                t_max: self.t_max,
                last_change,
                trace: Box::new(CurrentTrace {
                    times: times.to_vec(),
                    current: current.to_vec(),
                    window: self.window,
                    steady_value: None,
                    converged: false,
                }),
            });
        }
        Ok(None)
    }

    fn trace(&self, times: Vec<f64>, current: Vec<f64>, value: f64) -> CurrentTrace {
        log::debug!(
            "steady current {value:e} after {} windows of {:.1}",
            self.averages.len(),
            self.window
        );
        CurrentTrace {
            times,
            current,
            window: self.window,
            steady_value: Some(value),
            converged: true,
        }
    }
}

fn sampled(mut run: Propagation, options: &SolverOptions) -> Result<(CurrentTrace, DensityMatrix)> {
    let (mut windows, periods) = Windows::new(run.h, run.lindblad.reservoir().kappa, options);
    let window = windows.window;
    let samples = options.samples_per_period * periods;
    let mut times = vec![0.0];
    let mut current = vec![run.current()];
    let mut k = 0usize;
    loop {
        let t0 = k as f64 * window;
        for s in 1..=samples {
            let t = t0 + window * s as f64 / samples as f64;
            run.advance_to(t)?;
            times.push(t);
            current.push(run.current());
        }
        k += 1;
        let n = current.len();
        if let Some(value) = windows.push(trapezoid_mean(&current[n - samples - 1..]), &times, &current)? {
            log::debug!("integrator steps {:?}", run.steps());
            return Ok((windows.trace(times, current, value), run.state()));
        }
    }
}

fn steady_state_by_periods(run: Propagation, period: f64, options: &SolverOptions) -> Result<(CurrentTrace, DensityMatrix)> {
    let (mut windows, periods) = Windows::new(run.h, run.lindblad.reservoir().kappa, options);
    let (map, mean_map) = run.period_maps(period)?;
    let probe = run.lindblad.current_probe(&run.support);
    let mean_probe = mean_map.transpose() * &probe;
    let mut rho = DVector::from_column_slice(&run.rho);
    let mut next = DVector::zeros(rho.len());
    let mut times = vec![0.0];
    let mut current = vec![probe.dot(&rho).re];
    loop {
        let mut sum = 0.0;
        for _ in 0..periods {
            sum += mean_probe.dot(&rho).re;
            next.gemv(Complex64::new(1.0, 0.0), &map, &rho, ZERO);
            std::mem::swap(&mut rho, &mut next);
            times.push(times.len() as f64 * period);
            current.push(probe.dot(&rho).re);
        }
        if let Some(value) = windows.push(sum / periods as f64, &times, &current)? {
            let state = DensityMatrix(run.support.scatter(rho.as_slice()));
            return Ok((windows.trace(times, current, value), state));
        }
    }
}

/// The unique ρ with L(ρ) = 0 for a time-independent Hamiltonian.
///
/// Takes the right singular vector of the smallest singular value of the
/// vectorized Liouvillian, Hermitizes it and normalizes the trace. Number
/// conserving Hamiltonians are solved on the total-number blocks only.
pub fn stationary_state(h: &OperatorMatrix, lindblad: &Lindbladian) -> Result<DensityMatrix> {
    let g = lindblad.generator(h)?;
    let support = lindblad.support_for(&[h.to_csr()]);
    let l = lindblad.superoperator_on(&support, &g);
    let svd = l.svd_unordered(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let (smallest, next) = (svd.singular_values[order[0]], svd.singular_values[order[1]]);
    // A second null direction shows up as a singular value at round-off level.
    let largest = svd.singular_values[order[order.len() - 1]];
    if next <= 32.0 * f64::EPSILON * largest {
        return Err(Error::Degenerate(format!(
            "two smallest singular values {smallest:e} and {next:e}"
        )));
    }
    let null: Vec<Complex64> = v_t.row(order[0]).iter().map(|v| v.conj()).collect();
    let mut m = support.scatter(&null);
    m = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let tr = m.trace();
    if tr.norm() < 1e-300 {
        return Err(Error::Degenerate("null vector has vanishing trace".into()));
    }
    m /= tr;
    let rho = DensityMatrix(m);
    let residual = lindblad.apply(h, &rho)?.norm();
    if residual > STATIONARY_RESIDUAL_LIMIT {
        return Err(Error::Residual {
            residual,
            limit: STATIONARY_RESIDUAL_LIMIT,
        });
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{build_hamiltonian, FockBasis};
    use crate::lattice::BoseHubbardParams;
    use approx::assert_relative_eq;

    fn chain(offsets: &[f64], j: f64, u: f64) -> BoseHubbardParams {
        let n = offsets.len();
        BoseHubbardParams {
            omega: offsets.to_vec(),
            u: vec![u; n],
            j: vec![j; n - 1],
            depth: 15.0,
        }
    }

    fn random_hermitian_state(d: usize, seed: u64) -> DensityMatrix {
        // Small deterministic LCG keeps the test free of RNG dependencies.
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let a = DMatrix::<Complex64>::from_fn(d, d, |_, _| Complex64::new(next(), next()));
        let m = &a * a.adjoint();
        let tr = m.trace();
        DensityMatrix(m / tr)
    }

    #[test]
    fn pump_rate_on_empty_site() {
        let basis = FockBasis::new(1, 1).unwrap();
        let r = ReservoirSpec::ends(1, 0.3);
        let l = Lindbladian::pump_only(&basis, r).unwrap();
        let d = l.apply(&OperatorMatrix::zeros(2), &DensityMatrix::vacuum(2)).unwrap();
        assert_relative_eq!(d[(1, 1)].re, 0.3, epsilon = 1e-15);
        assert_relative_eq!(d[(0, 0)].re, -0.3, epsilon = 1e-15);
    }

    #[test]
    fn pumped_site_saturates() {
        let basis = FockBasis::new(1, 1).unwrap();
        let l = Lindbladian::pump_only(&basis, ReservoirSpec::ends(1, 0.3)).unwrap();
        let rho = stationary_state(&OperatorMatrix::zeros(2), &l).unwrap();
        assert_relative_eq!(rho.0[(1, 1)].re, 1.0, epsilon = 1e-12);
        let h = DrivenHamiltonian::stationary(OperatorMatrix::zeros(2));
        let (_, end) = propagate(&h, &l, &DensityMatrix::vacuum(2), 100.0, &[], &SolverOptions::default()).unwrap();
        assert_relative_eq!(end.0[(1, 1)].re, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn generator_is_trace_free_and_hermitian() {
        let basis = FockBasis::new(3, 2).unwrap();
        let h = build_hamiltonian(&basis, &chain(&[0.0, 0.1, -0.2], 0.05, 0.6)).unwrap();
        let l = Lindbladian::new(&basis, ReservoirSpec::ends(3, 0.01)).unwrap();
        for seed in 1..6 {
            let rho = random_hermitian_state(basis.dim(), seed);
            let d = l.apply(&h, &rho).unwrap();
            assert!(d.trace().norm() < 1e-14);
            assert!((&d - d.adjoint()).norm() < 1e-14);
        }
    }

    #[test]
    fn superoperator_matches_apply() {
        let basis = FockBasis::new(2, 2).unwrap();
        let h = build_hamiltonian(&basis, &chain(&[0.0, 0.1], 0.05, 0.6)).unwrap();
        let l = Lindbladian::new(&basis, ReservoirSpec::ends(2, 0.02)).unwrap();
        let rho = random_hermitian_state(basis.dim(), 7);
        let direct = l.apply(&h, &rho).unwrap();
        let sup = l.superoperator(&h).unwrap();
        let vec = nalgebra::DVector::from_vec(rho.to_row_major());
        let out = sup * vec;
        let d = basis.dim();
        for r in 0..d {
            for c in 0..d {
                assert!((out[r * d + c] - direct[(r, c)]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn unitary_limit_conserves_purity() {
        let basis = FockBasis::new(3, 1).unwrap();
        let h = build_hamiltonian(&basis, &chain(&[0.0, 0.1, -0.3], 0.05, 0.0)).unwrap();
        let l = Lindbladian::closed(&basis).unwrap();
        let start = basis.index(&[1, 0, 1]).unwrap();
        let rho0 = DensityMatrix::pure_basis_state(basis.dim(), start);
        let dh = DrivenHamiltonian::stationary(h);
        let (_, end) = propagate(&dh, &l, &rho0, 1000.0, &[], &SolverOptions::default()).unwrap();
        assert!((end.purity() - 1.0).abs() < 1e-8, "{}", end.purity());
        assert!((end.trace().re - 1.0).abs() < 1e-8);
    }

    #[test]
    fn disconnected_chain_carries_no_current() {
        let basis = FockBasis::new(2, 1).unwrap();
        let h = build_hamiltonian(&basis, &chain(&[0.0, 0.0], 0.0, 0.0)).unwrap();
        let l = Lindbladian::new(&basis, ReservoirSpec::ends(2, 0.1)).unwrap();
        let dh = DrivenHamiltonian::stationary(h);
        let (trace, end) = propagate(&dh, &l, &DensityMatrix::vacuum(4), 400.0, &uniform_grid(400.0, 40), &SolverOptions::default()).unwrap();
        assert!(trace.current.iter().all(|&i| i.abs() < 1e-12));
        let n1 = end.expectation(&fock::number(&basis, 0).unwrap()).re;
        assert_relative_eq!(n1, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn kernel_and_long_time_propagation_agree() {
        let basis = FockBasis::new(2, 1).unwrap();
        let kappa = 0.004;
        let h = build_hamiltonian(&basis, &chain(&[0.0, 0.0], 0.06, 0.0)).unwrap();
        let l = Lindbladian::new(&basis, ReservoirSpec::ends(2, kappa)).unwrap();
        let exact = l.current(&stationary_state(&h, &l).unwrap());
        let opts = SolverOptions {
            steady_tol: 1e-9,
            t_max_in_kappa_units: 200.0,
            ..SolverOptions::default()
        };
        let (trace, _) = run_to_steady_state(&DrivenHamiltonian::stationary(h), &l, &DensityMatrix::vacuum(4), &opts).unwrap();
        let steady = trace.steady_value.unwrap();
        assert!(((steady - exact) / exact).abs() < 1e-6, "{steady} vs {exact}");
        assert!(trace.current.iter().all(|&i| i >= -1e-10));
    }

    #[test]
    fn period_maps_match_sampled_propagation() {
        let basis = FockBasis::new(3, 1).unwrap();
        let kappa = 0.01;
        let offsets = build_hamiltonian(&basis, &chain(&[0.0, 0.2, 0.0], 0.0, 0.0)).unwrap();
        let hop = build_hamiltonian(&basis, &chain(&[0.0; 3], 0.05, 0.0)).unwrap();
        let f = 0.2;
        let h = DrivenHamiltonian::new(vec![offsets, hop], move |t, c| {
            c[0] = 1.0;
            c[1] = (0.5 * f * t).cos().powi(2);
        }, 2.0 * PI / f, f)
        .unwrap();
        let l = Lindbladian::new(&basis, ReservoirSpec::ends(3, kappa)).unwrap();
        let opts = SolverOptions {
            steady_tol: 1e-7,
            ..SolverOptions::default()
        };
        let rho0 = DensityMatrix::vacuum(basis.dim());
        let (fast, end_fast) = run_to_steady_state(&h, &l, &rho0, &opts).unwrap();
        let (slow, end_slow) = steady_state_by_sampling(&h, &l, &rho0, &opts).unwrap();
        let (a, b) = (fast.steady_value.unwrap(), slow.steady_value.unwrap());
        assert!(((a - b) / b).abs() < 1e-6, "{a} vs {b}");
        assert_eq!(fast.window, slow.window);
        assert!((&end_fast.0 - &end_slow.0).norm() < 1e-6);
        // One sample per period, on the period boundaries of the sampled trace.
        let stride = opts.samples_per_period;
        for (k, (t, i)) in fast.times.iter().zip(&fast.current).enumerate().take(50) {
            assert_relative_eq!(*t, slow.times[k * stride], max_relative = 1e-12);
            assert!((i - slow.current[k * stride]).abs() < 1e-9);
        }
    }

    #[test]
    fn stationary_state_is_valid_density_matrix() {
        let basis = FockBasis::new(3, 2).unwrap();
        let h = build_hamiltonian(&basis, &chain(&[0.0, 0.1, -0.1], 0.01, 0.6)).unwrap();
        let l = Lindbladian::new(&basis, ReservoirSpec::ends(3, 0.001)).unwrap();
        let rho = stationary_state(&h, &l).unwrap();
        assert!((rho.trace().re - 1.0).abs() < 1e-12);
        assert!(rho.hermiticity_defect() < 1e-12);
        assert!(rho.min_eigenvalue() > -1e-8);
    }

    #[test]
    fn isolated_sites_make_kernel_degenerate() {
        // Site 2 is decoupled from both reservoirs, so its population is conserved.
        let basis = FockBasis::new(3, 1).unwrap();
        let p = BoseHubbardParams {
            omega: vec![0.0; 3],
            u: vec![0.0; 3],
            j: vec![0.0, 0.0],
            depth: 15.0,
        };
        let h = build_hamiltonian(&basis, &p).unwrap();
        let l = Lindbladian::new(&basis, ReservoirSpec::ends(3, 0.1)).unwrap();
        assert!(matches!(stationary_state(&h, &l), Err(Error::Degenerate(_))));
    }

    #[test]
    fn convergence_rule() {
        let flat = vec![1.0; 5];
        assert_eq!(steady_current(&flat, 1e-4, 3), Some(1.0));
        let growing: Vec<f64> = (0..10).map(|k| k as f64 + 1.0).collect();
        assert_eq!(steady_current(&growing, 1e-4, 3), None);
        assert_eq!(steady_current(&[1.0, 1.0, 1.0], 1e-4, 3), None);
    }

    #[test]
    fn averaging_window_is_whole_periods() {
        let opts = SolverOptions::default();
        let (w, n) = averaging_window(Some(2.0 * PI / 0.1), 1e-4, &opts);
        assert_eq!(n, 160);
        assert_relative_eq!(w, 160.0 * 2.0 * PI / 0.1, max_relative = 1e-15);
        let (w, n) = averaging_window(Some(100.0), 1.0, &opts);
        assert_eq!((w, n), (100.0, 1));
    }

    #[test]
    fn dimension_mismatch() {
        let basis = FockBasis::new(2, 1).unwrap();
        let l = Lindbladian::new(&basis, ReservoirSpec::ends(2, 0.1)).unwrap();
        let err = l.apply(&OperatorMatrix::zeros(3), &DensityMatrix::vacuum(4));
        assert!(matches!(err, Err(Error::DimensionMismatch { expected: 4, got: 3 })));
    }
}
