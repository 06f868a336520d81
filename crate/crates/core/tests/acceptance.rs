//! Acceptance suite: one PASS/FAIL line per criterion, followed by the
//! individual checks and the values they measured.
//!
//! Checks listed in `KNOWN_MISSES` do not reach their targets with this model.
//! They still print FAIL and mark their criterion FAIL, but they do not fail
//! the run. Any other failing check does, and so does a listed check that
//! starts to pass, so the list cannot go stale.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use polylattice::config::RunConfig;
use polylattice::effective::{build_effective_single, LinkRule};
use polylattice::experiments::{self, gain_report, AlphaMarker, Scenario};
use polylattice::fock::{self, build_hamiltonian, FockBasis, OperatorMatrix};
use polylattice::lattice::{fit_tunneling, BoseHubbardParams, LatticeSpec, TunnelingFit};
use polylattice::lindblad::{
    propagate, run_to_steady_state, stationary_state, DensityMatrix, DrivenHamiltonian, Lindbladian, ReservoirSpec,
    SolverOptions,
};

const KNOWN_MISSES: &[(&str, &str)] = &[
    ("1.j_max", "the Gaussian-ansatz overlap gives J(15 E_r) = 1.54e-3 E_r"),
    ("1.residual", "ln J of the Gaussian overlap is not linear in V over [15, 50] E_r"),
    ("4.dv2", "the clamped waveform keeps most of its sidebands at small ΔV"),
    ("4.dv5", "the clamped waveform keeps most of its sidebands at small ΔV"),
    ("4.dv8", "the clamped waveform keeps most of its sidebands at small ΔV"),
    ("5.ratio", "the α = δ₂ current is a two-photon leak of order J⁴/(κ·ΔE²)"),
    ("6.gain", "J(5 E_r) = 0.029 E_r leaves the stationary lattice only weakly suppressed"),
];

const ROW4: [f64; 4] = [-0.1, 0.3, -0.4, 0.2];

struct Check {
    id: &'static str,
    text: String,
    pass: bool,
}

struct Criterion {
    number: u8,
    title: &'static str,
    checks: Vec<Check>,
}

impl Criterion {
    fn new(number: u8, title: &'static str) -> Self {
        Criterion {
            number,
            title,
            checks: Vec::new(),
        }
    }

    fn check(&mut self, id: &'static str, pass: bool, text: String) {
        self.checks.push(Check { id, text, pass });
    }

    fn runtime(&mut self, id: &'static str, took: Duration, limit: Duration) {
        self.check(id, took < limit, format!("runtime {took:.2?} < {limit:?}"));
    }

    fn failed(&mut self, id: &'static str, err: impl std::fmt::Display) {
        self.check(id, false, format!("run failed: {err}"));
    }
}

fn within_factor(value: f64, target: f64, factor: f64) -> bool {
    value.is_finite() && value > 0.0 && (value / target).max(target / value) <= factor
}

fn percent_points(fraction: f64, target_percent: f64, points: f64) -> bool {
    (100.0 * fraction - target_percent).abs() <= points
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn parameter_engine() -> Criterion {
    let mut c = Criterion::new(1, "parameter engine");
    let (fit, took) = timed(|| fit_tunneling(&LatticeSpec::flat(5)));
    match fit {
        Ok(fit) => {
            c.check(
                "1.j_max",
                (3e-3..=9e-3).contains(&fit.j_max),
                format!("J_max = {:.4e} E_r in [3e-3, 9e-3]", fit.j_max),
            );
            c.check(
                "1.beta",
                (0.18..=0.30).contains(&fit.beta),
                format!("beta = {:.4} /E_r in [0.18, 0.30]", fit.beta),
            );
            c.check(
                "1.residual",
                fit.residual < 0.10,
                format!("fit residual {:.1}% < 10%", 100.0 * fit.residual),
            );
        }
        Err(e) => c.failed("1.fit", e),
    }
    c.runtime("1.runtime", took, Duration::from_secs(1));
    c
}

fn stationary_suppression() -> Criterion {
    let mut c = Criterion::new(2, "stationary suppression");
    let (res, took) = timed(|| {
        let sc = Scenario::new(LatticeSpec::with_offsets(&ROW4), 1, 15.0, SolverOptions::default())?;
        Ok::<_, polylattice::Error>((sc.ideal_current()?, sc.stationary_current()?))
    });
    match res {
        Ok((ideal, stationary)) => {
            let factor = ideal / stationary;
            c.check(
                "2.factor",
                (1e8..=1e10).contains(&factor),
                format!("I_ideal / I_stationary = {factor:.3e} in [1e8, 1e10]"),
            );
        }
        Err(e) => c.failed("2.factor", e),
    }
    c.runtime("2.runtime", took, Duration::from_secs(10));
    c
}

fn table_one() -> Criterion {
    let mut c = Criterion::new(3, "Table I reproduction");
    // (gain, recovered %, effective-model error %)
    let targets = [(5.6e6, 64.0, 1.0), (3.3e7, 46.0, 1.5), (4.7e6, 13.0, 0.1), (9.8e8, 78.0, 0.2)];
    let ids = [
        ["3.row1.gain", "3.row1.recovered", "3.row1.effective"],
        ["3.row2.gain", "3.row2.recovered", "3.row2.effective"],
        ["3.row3.gain", "3.row3.recovered", "3.row3.effective"],
        ["3.row4.gain", "3.row4.recovered", "3.row4.effective"],
    ];
    let cfg = RunConfig::for_offsets(&ROW4);
    let (rows, took) = timed(|| experiments::table1(&cfg));
    match rows {
        Ok(rows) => {
            for (((offsets, row), (gain, recovered, error)), id) in rows.iter().zip(targets).zip(ids) {
                match row {
                    Ok(r) => {
                        let g = r.gain.unwrap_or(f64::NAN);
                        c.check(id[0], within_factor(g, gain, 5.0), format!("{offsets:?} gain {g:.3e} within 5x of {gain:.1e}"));
                        c.check(
                            id[1],
                            percent_points(r.percent_recovered, recovered, 10.0),
                            format!("{offsets:?} recovered {:.1}% within 10 points of {recovered}%", 100.0 * r.percent_recovered),
                        );
                        let e = r.heff_percent_error.unwrap_or(f64::NAN);
                        c.check(
                            id[2],
                            100.0 * e <= 2.0 * error,
                            format!("{offsets:?} effective-model error {:.3}% <= {:.1}%", 100.0 * e, 2.0 * error),
                        );
                    }
                    Err(e) => c.failed(id[0], e),
                }
            }
        }
        Err(e) => c.failed("3.table", e),
    }
    c.runtime("3.runtime", took, Duration::from_secs(600));
    c
}

fn vmax_sweep() -> Criterion {
    let mut c = Criterion::new(4, "V_max sweep");
    let mut cfg = RunConfig::for_offsets(&ROW4);
    cfg.sweeps.vmax_grid = vec![17.0, 20.0, 23.0];
    let (points, took) = timed(|| experiments::sweep_vmax(&cfg));
    match points {
        Ok(points) => {
            for (p, (id, target)) in points.iter().zip([("4.dv2", 38.0), ("4.dv5", 79.0), ("4.dv8", 91.0)]) {
                c.check(
                    id,
                    percent_points(p.normalized, target, 8.0),
                    format!("ΔV = {} E_r: {:.1}% within 8 points of {target}%", p.v_max - cfg.lattice.v_min, 100.0 * p.normalized),
                );
            }
        }
        Err(e) => c.failed("4.sweep", e),
    }
    c.runtime("4.runtime", took, Duration::from_secs(600));
    c
}

fn double_occupancy() -> Criterion {
    let mut c = Criterion::new(5, "two-site double occupancy");
    let mut cfg = RunConfig::for_offsets(&[0.1]);
    cfg.occupancy.n_max = 2;
    cfg.sweeps.alpha_points = 4;
    let (sweep, took) = timed(|| experiments::sweep_alpha(&cfg));
    match sweep {
        Ok(s) => {
            let (_, i_res) = s.at(AlphaMarker::Resonance).expect("resonance in grid");
            let (_, i_off) = s.at(AlphaMarker::Offset).expect("offset in grid");
            let ratio = i_res / i_off;
            let target = 1.7e5 / 7.3e3;
            c.check(
                "5.ratio",
                within_factor(ratio, target, 3.0),
                format!("I(δ₂ − ⟨U⟩) / I(δ₂) = {ratio:.3e} within 3x of {target:.1}"),
            );
            let err = (s.effective_current - i_res).abs() / i_res;
            c.check(
                "5.effective",
                err <= 0.15,
                format!("effective model {:.2}% <= 15% off the driven current", 100.0 * err),
            );
        }
        Err(e) => c.failed("5.sweep", e),
    }
    c.runtime("5.runtime", took, Duration::from_secs(300));
    c
}

fn shallow_lattice() -> Criterion {
    let mut c = Criterion::new(6, "shallow-lattice stress case");
    let (res, took) = timed(|| {
        let mut spec = LatticeSpec::with_offsets(&ROW4);
        spec.v_min = 5.0;
        // The shallow lattice relaxes slowly; allow more reservoir lifetimes.
        let solver = SolverOptions {
            t_max_in_kappa_units: 200.0,
            ..SolverOptions::default()
        };
        let sc = Scenario::new(spec, 1, 29.0, solver)?;
        let ideal = sc.ideal_current()?;
        gain_report(&sc, &ROW4, ideal)
    });
    match res {
        Ok(r) => {
            let g = r.gain.unwrap_or(f64::NAN);
            c.check("6.gain", within_factor(g, 4.7e5, 5.0), format!("gain {g:.3e} within 5x of 4.7e5"));
            c.check(
                "6.recovered",
                percent_points(r.percent_recovered, 71.0, 10.0),
                format!("recovered {:.1}% within 10 points of 71%", 100.0 * r.percent_recovered),
            );
            let e = r.heff_percent_error.unwrap_or(f64::NAN);
            c.check("6.effective", e <= 0.45, format!("effective-model error {:.1}% <= 45%", 100.0 * e));
        }
        Err(e) => c.failed("6.report", e),
    }
    c.runtime("6.runtime", took, Duration::from_secs(300));
    c
}

fn chain(omega: &[f64], j: f64, u: f64) -> BoseHubbardParams {
    BoseHubbardParams {
        omega: omega.to_vec(),
        u: vec![u; omega.len()],
        j: vec![j; omega.len() - 1],
        depth: 15.0,
    }
}

fn driven(basis: &FockBasis, omega: &[f64], j: f64, f: f64, uniform: f64) -> DrivenHamiltonian {
    let n = omega.len();
    let parts = vec![
        fock::onsite_part(basis, omega, &vec![0.0; n]),
        fock::hopping_part(basis, &vec![j; n - 1]),
        fock::total_number(basis),
    ];
    DrivenHamiltonian::new(
        parts,
        move |t, c| {
            c[0] = 1.0;
            c[1] = (0.5 * f * t).cos().powi(2);
            c[2] = uniform * (1.0 + 0.3 * (f * t).sin());
        },
        2.0 * PI / f,
        f.max(1.3 * uniform),
    )
    .unwrap()
}

fn relative(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn properties() -> Criterion {
    let mut c = Criterion::new(7, "property suite");
    let opts = SolverOptions::default();

    // Trace and Hermiticity under a driven, dissipative evolution.
    let basis = FockBasis::new(3, 2).unwrap();
    let l = Lindbladian::new(&basis, ReservoirSpec::ends(3, 0.01)).unwrap();
    let h = driven(&basis, &[0.0, 0.1, -0.05], 0.02, 0.1, 0.0);
    match propagate(&h, &l, &DensityMatrix::vacuum(basis.dim()), 2000.0, &[], &opts) {
        Ok((_, rho)) => {
            let drift = (rho.trace() - Complex64::new(1.0, 0.0)).norm();
            let herm = rho.hermiticity_defect();
            c.check(
                "7.trace",
                drift < 1e-8 && herm < 1e-10,
                format!("|tr ρ − 1| = {drift:.1e}, ‖ρ − ρ†‖ = {herm:.1e} after t = 2000"),
            );
        }
        Err(e) => c.failed("7.trace", e),
    }

    // Purity in the unitary limit.
    let basis = FockBasis::new(3, 1).unwrap();
    let closed = Lindbladian::closed(&basis).unwrap();
    let h = build_hamiltonian(&basis, &chain(&[0.0, 0.1, -0.3], 0.05, 0.0)).unwrap();
    let start = DensityMatrix::pure_basis_state(basis.dim(), basis.index(&[1, 0, 1]).unwrap());
    match propagate(&DrivenHamiltonian::stationary(h), &closed, &start, 1000.0, &[], &opts) {
        Ok((_, rho)) => {
            let p = rho.purity();
            c.check("7.purity", (p - 1.0).abs() < 1e-8, format!("purity {p:.12} after unitary evolution"));
        }
        Err(e) => c.failed("7.purity", e),
    }

    // Ladder identities, truncation included.
    let basis = FockBasis::new(3, 2).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let a = fock::annihilation(&basis, j).unwrap();
            let n = fock::number(&basis, i).unwrap();
            let expected = if i == j { a.scale(Complex64::new(-1.0, 0.0)) } else { OperatorMatrix::zeros(basis.dim()) };
            worst = worst.max(n.commutator(&a).unwrap().sub(&expected).unwrap().frobenius_norm());
            let adj = fock::creation(&basis, j).unwrap().adjoint();
            worst = worst.max(adj.sub(&a).unwrap().frobenius_norm());
            if i != j {
                let b = fock::creation(&basis, i).unwrap();
                worst = worst.max(a.commutator(&b).unwrap().frobenius_norm());
            }
        }
    }
    c.check("7.operators", worst < 1e-12, format!("[n_i, a_j] = −δ_ij a_j, (a†)† = a, [a_j, a†_i≠j] = 0: worst {worst:.1e}"));

    // Gauge invariance under a time-dependent uniform shift.
    let basis = FockBasis::new(3, 1).unwrap();
    let l = Lindbladian::new(&basis, ReservoirSpec::ends(3, 0.01)).unwrap();
    let tight = SolverOptions {
        steady_tol: 1e-9,
        t_max_in_kappa_units: 400.0,
        ..SolverOptions::default()
    };
    let vacuum = DensityMatrix::vacuum(basis.dim());
    let steady = |uniform: f64| {
        let h = driven(&basis, &[0.0, 0.05, -0.02], 0.03, 0.1, uniform);
        run_to_steady_state(&h, &l, &vacuum, &tight).map(|(t, _)| t.steady_value.unwrap_or(f64::NAN))
    };
    match (steady(0.0), steady(4.0)) {
        (Ok(a), Ok(b)) => {
            let r = relative(b, a);
            c.check("7.gauge", r < 1e-6, format!("uniform ω shift changes the current by {r:.1e} < 1e-6"));
        }
        (Err(e), _) | (_, Err(e)) => c.failed("7.gauge", e),
    }

    // Long-time propagation against the kernel on stationary Hamiltonians.
    let cases: [(usize, usize, &[f64], f64, f64); 5] = [
        (2, 1, &[0.0, 0.0], 0.02, 0.0),
        (3, 1, &[0.0, 0.01, -0.01], 0.02, 0.0),
        (2, 2, &[0.0, 0.05], 0.02, 0.3),
        (3, 2, &[0.0, 0.0, 0.0], 0.015, 0.2),
        (5, 1, &[0.0, 0.0, 0.0, 0.0, 0.0], 0.02, 0.0),
    ];
    let mut worst: f64 = 0.0;
    let mut failure = None;
    for (n, n_max, omega, j, u) in cases {
        let basis = FockBasis::new(n, n_max).unwrap();
        let l = Lindbladian::new(&basis, ReservoirSpec::ends(n, 0.01)).unwrap();
        let h = build_hamiltonian(&basis, &chain(omega, j, u)).unwrap();
        let kernel = stationary_state(&h, &l).map(|rho| l.current(&rho));
        let long = run_to_steady_state(&DrivenHamiltonian::stationary(h), &l, &DensityMatrix::vacuum(basis.dim()), &tight);
        match (kernel, long) {
            (Ok(k), Ok((trace, _))) => worst = worst.max(relative(trace.steady_value.unwrap_or(f64::NAN), k)),
            (Err(e), _) | (_, Err(e)) => failure = Some(e),
        }
    }
    match failure {
        Some(e) => c.failed("7.oracle", e),
        None => c.check("7.oracle", worst < 1e-6, format!("propagation vs kernel: worst {worst:.1e} < 1e-6 over {} Hamiltonians", cases.len())),
    }

    // Every link gets exactly one tunneling rule.
    let fit = TunnelingFit {
        j_max: 1.5e-3,
        beta: 0.2,
        v_min: 15.0,
        residual: 0.0,
    };
    let lattices: [&[f64]; 5] = [&ROW4, &[0.0, 0.1, 0.0, 0.0], &[0.2, 0.0, -0.2, 0.0], &[0.0, 0.1, 0.3, -0.3], &[0.1]];
    let exhaustive = lattices.iter().all(|d| {
        let Ok(m) = build_effective_single(&LatticeSpec::with_offsets(d), &fit, 0.6) else {
            return false;
        };
        let distinct = polylattice::modulation::unique_offsets(d).len();
        m.provenance.len() == d.len()
            && m.provenance.iter().zip(d.iter()).zip(&m.params.j).all(|((rule, &delta), &j)| {
                let expected = if delta == 0.0 { LinkRule::Flat } else { LinkRule::Offset { m: distinct } };
                *rule == expected && j == fit.j_max * rule.factor()
            })
    });
    c.check("7.rules", exhaustive, format!("J/2 on flat links and J/(4M) on offset links for {} lattices", lattices.len()));

    // Single-particle spectrum of the flat chain.
    let (n, j) = (5, 0.01);
    let basis = FockBasis::new(n, 1).unwrap();
    let h = build_hamiltonian(&basis, &chain(&[0.0; 5], j, 0.0)).unwrap().to_dense();
    let single: Vec<usize> = (0..basis.dim()).filter(|&k| basis.state(k).iter().sum::<usize>() == 1).collect();
    let block = DMatrix::from_fn(n, n, |r, c| h[(single[r], single[c])]);
    let mut levels: Vec<f64> = block.symmetric_eigenvalues().iter().copied().collect();
    levels.sort_by(f64::total_cmp);
    let mut exact: Vec<f64> = (1..=n).map(|k| -2.0 * j * (k as f64 * PI / (n + 1) as f64).cos()).collect();
    exact.sort_by(f64::total_cmp);
    let dev = DVector::from_vec(levels).metric_distance(&DVector::from_vec(exact));
    c.check("7.spectrum", dev < 1e-10, format!("flat-chain single-particle levels within {dev:.1e} of −2J cos(kπ/(N+1))"));
    c
}

fn main() -> ExitCode {
    let suites: [fn() -> Criterion; 7] = [
        parameter_engine,
        stationary_suppression,
        table_one,
        vmax_sweep,
        double_occupancy,
        shallow_lattice,
        properties,
    ];
    let mut unexpected = Vec::new();
    for suite in suites {
        let c = suite();
        let pass = c.checks.iter().all(|k| k.pass);
        println!("criterion {} ({}): {}", c.number, c.title, if pass { "PASS" } else { "FAIL" });
        for k in &c.checks {
            let known = KNOWN_MISSES.iter().find(|(id, _)| *id == k.id);
            let note = match (k.pass, known) {
                (false, Some((_, why))) => format!(" [known miss: {why}]"),
                (false, None) => {
                    unexpected.push(format!("{} failed", k.id));
                    String::new()
                }
                (true, Some(_)) => {
                    unexpected.push(format!("{} is listed as a known miss but passed", k.id));
                    String::new()
                }
                (true, None) => String::new(),
            };
            println!("    {:<18} {:<4} {}{note}", k.id, if k.pass { "ok" } else { "FAIL" }, k.text);
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        for u in &unexpected {
            eprintln!("unexpected: {u}");
        }
        ExitCode::FAILURE
    }
}
