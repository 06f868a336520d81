//! Truncated occupation-number basis and operators on it.
//!
//! Occupations are capped at `n_max` per site; raising past the cap maps to
//! zero. This hard cutoff is how the source reservoir's chemical potential is
//! represented.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::lattice::BoseHubbardParams;

/// Operators up to this dimension are stored densely.
pub const DENSE_LIMIT: usize = 64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Lexicographically ordered Fock states, site 1 varying slowest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FockBasis {
    n_sites: usize,
    n_max: usize,
    states: Vec<Vec<usize>>,
}

impl FockBasis {
    pub fn new(n_sites: usize, n_max: usize) -> Result<Self> {
        if n_sites == 0 || n_max == 0 {
            return Err(Error::Precondition(format!(
                "basis needs n_sites >= 1 and n_max >= 1, got {n_sites} and {n_max}"
            )));
        }
        let base = n_max + 1;
        let dim = base
            .checked_pow(n_sites as u32)
            .filter(|&d| d <= 1 << 16)
            .ok_or_else(|| Error::Precondition(format!("basis ({base})^{n_sites} too large")))?;
        let states = (0..dim)
            .map(|mut k| {
                let mut s = vec![0; n_sites];
                for slot in s.iter_mut().rev() {
                    *slot = k % base;
                    k /= base;
                }
                s
            })
            .collect();
        Ok(FockBasis {
            n_sites,
            n_max,
            states,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, k: usize) -> &[usize] {
        &self.states[k]
    }

    pub fn states(&self) -> impl Iterator<Item = &[usize]> {
        self.states.iter().map(Vec::as_slice)
    }

    /// Position of an occupation vector, or `None` if it lies outside the basis.
    pub fn index(&self, occupations: &[usize]) -> Option<usize> {
        if occupations.len() != self.n_sites {
            return None;
        }
        occupations.iter().try_fold(0usize, |acc, &n| {
            (n <= self.n_max).then_some(acc * (self.n_max + 1) + n)
        })
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.n_sites {
            return Err(Error::SiteOutOfRange {
                index: site,
                len: self.n_sites,
            });
        }
        Ok(())
    }
}

/// Compressed sparse row storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub dim: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<Complex64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets; repeated positions are summed
    /// and exact zeros dropped.
    pub fn from_triplets<I>(dim: usize, triplets: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, Complex64)>,
    {
        let mut entries = BTreeMap::new();
        for (r, c, v) in triplets {
            assert!(r < dim && c < dim, "entry ({r}, {c}) outside {dim}x{dim}");
            *entries.entry((r, c)).or_insert(ZERO) += v;
        }
        Self::from_entries(dim, &entries)
    }

    fn from_entries(dim: usize, entries: &BTreeMap<(usize, usize), Complex64>) -> Self {
        let mut row_ptr = vec![0; dim + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals = Vec::with_capacity(entries.len());
        for (&(r, c), &v) in entries {
            if v != ZERO {
                row_ptr[r + 1] += 1;
                cols.push(c);
                vals.push(v);
            }
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix {
            dim,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    /// Whether the matrix has no off-diagonal entries.
    pub fn is_diagonal(&self) -> bool {
        (0..self.dim).all(|r| self.row(r).all(|(c, _)| c == r))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Dense(DMatrix<Complex64>),
    Sparse(CsrMatrix),
}

/// A linear map on a Fock space, dense up to [`DENSE_LIMIT`] and sparse above.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    repr: Repr,
}

impl OperatorMatrix {
    /// Builds from (row, col, value) triplets; repeated positions are summed.
    pub fn from_triplets<I>(dim: usize, triplets: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, Complex64)>,
    {
        let mut entries = BTreeMap::new();
        for (r, c, v) in triplets {
            assert!(r < dim && c < dim, "entry ({r}, {c}) outside {dim}x{dim}");
            *entries.entry((r, c)).or_insert(ZERO) += v;
        }
        if dim <= DENSE_LIMIT {
            let mut m = DMatrix::zeros(dim, dim);
            for ((r, c), v) in entries {
                m[(r, c)] = v;
            }
            OperatorMatrix {
                repr: Repr::Dense(m),
            }
        } else {
            OperatorMatrix {
                repr: Repr::Sparse(CsrMatrix::from_entries(dim, &entries)),
            }
        }
    }

    /// Same operator, forced into sparse storage.
    pub fn into_sparse(self) -> Self {
        match self.repr {
            Repr::Sparse(_) => self,
            Repr::Dense(_) => OperatorMatrix {
                repr: Repr::Sparse(self.to_csr()),
            },
        }
    }

    /// Same operator, forced into dense storage.
    pub fn into_dense(self) -> Self {
        OperatorMatrix {
            repr: Repr::Dense(self.to_dense()),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_triplets(dim, std::iter::empty())
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_triplets(dim, (0..dim).map(|k| (k, k, Complex64::new(1.0, 0.0))))
    }

    pub fn dim(&self) -> usize {
        match &self.repr {
            Repr::Dense(m) => m.nrows(),
            Repr::Sparse(s) => s.dim,
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.repr, Repr::Sparse(_))
    }

    /// Non-zero entries in row-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, Complex64)> {
        match &self.repr {
            Repr::Dense(m) => {
                let n = m.nrows();
                let mut out = Vec::new();
                for r in 0..n {
                    for c in 0..n {
                        let v = m[(r, c)];
                        if v != ZERO {
                            out.push((r, c, v));
                        }
                    }
                }
                out
            }
            Repr::Sparse(s) => (0..s.dim)
                .flat_map(|r| s.row(r).map(move |(c, v)| (r, c, v)))
                .collect(),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        match &self.repr {
            Repr::Dense(m) => m[(r, c)],
            Repr::Sparse(s) => s.row(r).find(|&(cc, _)| cc == c).map_or(ZERO, |(_, v)| v),
        }
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        match &self.repr {
            Repr::Dense(m) => m.clone(),
            Repr::Sparse(s) => {
                let mut m = DMatrix::zeros(s.dim, s.dim);
                for r in 0..s.dim {
                    for (c, v) in s.row(r) {
                        m[(r, c)] = v;
                    }
                }
                m
            }
        }
    }

    pub fn to_csr(&self) -> CsrMatrix {
        match &self.repr {
            Repr::Sparse(s) => s.clone(),
            Repr::Dense(_) => {
                let entries = self.triplets().into_iter().map(|(r, c, v)| ((r, c), v)).collect();
                CsrMatrix::from_entries(self.dim(), &entries)
            }
        }
    }

    fn same_layout(&self, triplets: Vec<(usize, usize, Complex64)>) -> Self {
        let out = Self::from_triplets(self.dim(), triplets);
        match (&self.repr, self.dim() <= DENSE_LIMIT) {
            (Repr::Sparse(_), true) => out.into_sparse(),
            _ => out,
        }
    }

    pub fn adjoint(&self) -> Self {
        self.same_layout(self.triplets().into_iter().map(|(r, c, v)| (c, r, v.conj())).collect())
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        self.same_layout(self.triplets().into_iter().map(|(r, c, v)| (r, c, v * factor)).collect())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        let mut t = self.triplets();
        t.extend(other.triplets());
        Ok(self.same_layout(t))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    /// Operator product `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        match (&self.repr, &other.repr) {
            (Repr::Dense(a), Repr::Dense(b)) => Ok(OperatorMatrix {
                repr: Repr::Dense(a * b),
            }),
            _ => {
                let a = self.to_csr();
                let b = other.to_csr();
                let mut t = Vec::new();
                for r in 0..a.dim {
                    for (k, va) in a.row(r) {
                        for (c, vb) in b.row(k) {
                            t.push((r, c, va * vb));
                        }
                    }
                }
                Ok(self.same_layout(t))
            }
        }
    }

    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.matmul(other)?.sub(&other.matmul(self)?)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.triplets().iter().map(|(_, _, v)| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// ‖A − A†‖_F / ‖A‖_F (zero for the zero operator).
    pub fn hermiticity_defect(&self) -> f64 {
        let norm = self.frobenius_norm();
        if norm == 0.0 {
            return 0.0;
        }
        self.sub(&self.adjoint()).expect("same dim").frobenius_norm() / norm
    }

    pub fn diagonal(&self) -> Vec<Complex64> {
        (0..self.dim()).map(|k| self.get(k, k)).collect()
    }

    /// Matrix-market style dump: a `dim dim nnz` header line, then one
    /// `row col re im` line per entry (1-based indices).
    pub fn to_matrix_market(&self) -> String {
        let t = self.triplets();
        let mut out = String::from("%%MatrixMarket matrix coordinate complex general\n");
        let _ = writeln!(out, "{} {} {}", self.dim(), self.dim(), t.len());
        for (r, c, v) in t {
            let _ = writeln!(out, "{} {} {:.17e} {:.17e}", r + 1, c + 1, v.re, v.im);
        }
        out
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }
}

fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// a_site: ⟨n − e_site| a |n⟩ = √n_site.
pub fn annihilation(basis: &FockBasis, site: usize) -> Result<OperatorMatrix> {
    basis.check_site(site)?;
    let triplets = (0..basis.dim()).filter_map(|k| {
        let s = basis.state(k);
        (s[site] > 0).then(|| {
            let mut lower = s.to_vec();
            lower[site] -= 1;
            let to = basis.index(&lower).expect("lowered state is in the basis");
            (to, k, real((s[site] as f64).sqrt()))
        })
    });
    Ok(OperatorMatrix::from_triplets(basis.dim(), triplets.collect::<Vec<_>>()))
}

/// a†_site with the hard cutoff: a†|n_max⟩ = 0.
pub fn creation(basis: &FockBasis, site: usize) -> Result<OperatorMatrix> {
    Ok(annihilation(basis, site)?.adjoint())
}

pub fn number(basis: &FockBasis, site: usize) -> Result<OperatorMatrix> {
    basis.check_site(site)?;
    Ok(diagonal_operator(basis, |s| s[site] as f64))
}

pub fn total_number(basis: &FockBasis) -> OperatorMatrix {
    diagonal_operator(basis, |s| s.iter().sum::<usize>() as f64)
}

fn diagonal_operator(basis: &FockBasis, f: impl Fn(&[usize]) -> f64) -> OperatorMatrix {
    let triplets = (0..basis.dim()).map(|k| (k, k, real(f(basis.state(k)))));
    OperatorMatrix::from_triplets(basis.dim(), triplets.collect::<Vec<_>>())
}

fn check_params(basis: &FockBasis, p: &BoseHubbardParams) -> Result<()> {
    let n = basis.n_sites();
    if p.omega.len() != n || p.u.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: p.omega.len().min(p.u.len()),
        });
    }
    if p.j.len() + 1 != n {
        return Err(Error::DimensionMismatch {
            expected: n - 1,
            got: p.j.len(),
        });
    }
    Ok(())
}

/// Σ ω_j n_j + ½ Σ U_j n_j(n_j − 1): the diagonal part of the Hamiltonian.
pub fn onsite_part(basis: &FockBasis, omega: &[f64], u: &[f64]) -> OperatorMatrix {
    diagonal_operator(basis, |s| {
        s.iter()
            .enumerate()
            .map(|(j, &n)| {
                let n = n as f64;
                omega[j] * n + 0.5 * u[j] * n * (n - 1.0)
            })
            .sum()
    })
}

/// −Σ_j J_j (a†_j a_{j−1} + h.c.), with `j[k]` on the link between sites k and k+1.
pub fn hopping_part(basis: &FockBasis, j: &[f64]) -> OperatorMatrix {
    let mut triplets = Vec::new();
    for k in 0..basis.dim() {
        let s = basis.state(k);
        for (link, &amp) in j.iter().enumerate() {
            let (from, to) = (link, link + 1);
            // a†_to a_from and its mirror a†_from a_to
            for (src, dst) in [(from, to), (to, from)] {
                if s[src] == 0 || s[dst] == basis.n_max() {
                    continue;
                }
                let mut t = s.to_vec();
                let elem = ((s[src] as f64) * (s[dst] as f64 + 1.0)).sqrt();
                t[src] -= 1;
                t[dst] += 1;
                let r = basis.index(&t).expect("hopped state is in the basis");
                triplets.push((r, k, real(-amp * elem)));
            }
        }
    }
    OperatorMatrix::from_triplets(basis.dim(), triplets)
}

/// Bose–Hubbard Hamiltonian with tunneling entering as −J.
pub fn build_hamiltonian(basis: &FockBasis, p: &BoseHubbardParams) -> Result<OperatorMatrix> {
    check_params(basis, p)?;
    onsite_part(basis, &p.omega, &p.u).add(&hopping_part(basis, &p.j))
}

/// Removes the site-uniform 2√V part of the site energies, keeping only the
/// external offsets. Sites keep their mutual differences exactly.
pub fn gauge_out_uniform(p: &BoseHubbardParams) -> BoseHubbardParams {
    let uniform = 2.0 * p.depth.sqrt();
    BoseHubbardParams {
        omega: p.omega.iter().map(|w| w - uniform).collect(),
        ..p.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn c(x: f64) -> Complex64 {
        real(x)
    }

    fn params(omega: Vec<f64>, u: Vec<f64>, j: Vec<f64>) -> BoseHubbardParams {
        BoseHubbardParams {
            omega,
            u,
            j,
            depth: 15.0,
        }
    }

    #[test]
    fn lexicographic_order_site_one_slowest() {
        let b = FockBasis::new(2, 1).unwrap();
        let states: Vec<_> = b.states().map(|s| s.to_vec()).collect();
        assert_eq!(states, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        let b = FockBasis::new(3, 2).unwrap();
        assert_eq!(b.dim(), 27);
        for k in 0..b.dim() {
            assert_eq!(b.index(b.state(k)), Some(k));
        }
        assert_eq!(b.index(&[3, 0, 0]), None);
    }

    #[test]
    fn two_level_annihilation() {
        let b = FockBasis::new(1, 1).unwrap();
        let a = annihilation(&b, 0).unwrap().to_dense();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[c(0.), c(1.), c(0.), c(0.)]));
    }

    #[test]
    fn annihilation_matrix_element_sqrt_n() {
        let b = FockBasis::new(1, 2).unwrap();
        let a = annihilation(&b, 0).unwrap();
        assert_relative_eq!(a.get(1, 2).re, 2f64.sqrt(), epsilon = 1e-15);
        let n = creation(&b, 0).unwrap().matmul(&a).unwrap();
        let diff = n.sub(&number(&b, 0).unwrap()).unwrap();
        assert!(diff.frobenius_norm() < 1e-15);
        assert!(n.triplets().iter().all(|&(r, c, _)| r == c));
    }

    #[test]
    fn creation_is_exact_adjoint() {
        let b = FockBasis::new(3, 2).unwrap();
        for site in 0..3 {
            let a = annihilation(&b, site).unwrap();
            assert_eq!(creation(&b, site).unwrap(), a.adjoint());
            assert_eq!(a, creation(&b, site).unwrap().adjoint());
        }
        assert!(annihilation(&b, 3).is_err());
    }

    #[test]
    fn canonical_commutator_and_truncation_anomaly() {
        let b = FockBasis::new(2, 1).unwrap();
        let a0 = annihilation(&b, 0).unwrap();
        let a1 = annihilation(&b, 1).unwrap();
        // Different sites commute exactly.
        let mixed = a0.commutator(&a1.adjoint()).unwrap();
        assert_eq!(mixed.frobenius_norm(), 0.0);
        // [a, a†] = 1 − 2n for a hard-core site: +1 on |0⟩, −1 on |1⟩.
        let comm = a0.commutator(&a0.adjoint()).unwrap();
        for k in 0..b.dim() {
            let expected = if b.state(k)[0] == 0 { 1.0 } else { -1.0 };
            assert_eq!(comm.get(k, k), c(expected));
        }
        // With n_max = 2 the identity holds wherever n < n_max.
        let b = FockBasis::new(1, 2).unwrap();
        let a = annihilation(&b, 0).unwrap();
        let comm = a.commutator(&a.adjoint()).unwrap();
        for (got, want) in comm.diagonal().iter().zip([1.0, 1.0, -2.0]) {
            assert!((got - c(want)).norm() < 1e-15);
        }
    }

    #[test]
    fn two_site_single_particle_block() {
        let b = FockBasis::new(2, 1).unwrap();
        let (delta, j) = (0.1, 0.006);
        let h = build_hamiltonian(&b, &params(vec![0.0, delta], vec![0.3, 0.3], vec![j])).unwrap();
        let one_zero = b.index(&[1, 0]).unwrap();
        let zero_one = b.index(&[0, 1]).unwrap();
        assert_eq!(h.get(one_zero, one_zero), c(0.0));
        assert_eq!(h.get(zero_one, zero_one), c(delta));
        assert_eq!(h.get(one_zero, zero_one), c(-j));
        assert_eq!(h.get(zero_one, one_zero), c(-j));
        assert_eq!(h.get(3, 3), c(delta));
    }

    #[test]
    fn double_occupancy_energy() {
        let b = FockBasis::new(1, 2).unwrap();
        let p = BoseHubbardParams {
            omega: vec![0.7],
            u: vec![0.5],
            j: vec![],
            depth: 15.0,
        };
        let h = build_hamiltonian(&b, &p).unwrap();
        assert_relative_eq!(h.get(2, 2).re, 2.0 * 0.7 + 0.5, epsilon = 1e-15);
    }

    #[test]
    fn flat_chain_single_particle_spectrum() {
        let b = FockBasis::new(5, 1).unwrap();
        let j = 0.37;
        let h = build_hamiltonian(&b, &params(vec![0.0; 5], vec![0.0; 5], vec![j; 4])).unwrap();
        let single: Vec<usize> = (0..b.dim()).filter(|&k| b.state(k).iter().sum::<usize>() == 1).collect();
        let block = DMatrix::from_fn(5, 5, |r, c| h.get(single[r], single[c]).re);
        let mut eig: Vec<f64> = block.symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        let mut exact: Vec<f64> = (1..=5)
            .map(|k| -2.0 * j * (k as f64 * std::f64::consts::PI / 6.0).cos())
            .collect();
        exact.sort_by(f64::total_cmp);
        for (a, e) in eig.iter().zip(&exact) {
            assert!((a - e).abs() < 1e-10, "{a} vs {e}");
        }
    }

    #[test]
    fn hamiltonian_conserves_particle_number() {
        let b = FockBasis::new(3, 2).unwrap();
        let h = build_hamiltonian(&b, &params(vec![0.1, -0.2, 0.4], vec![0.5, 0.6, 0.7], vec![0.01, 0.02])).unwrap();
        assert!(h.hermiticity_defect() < 1e-12);
        assert!(h.commutator(&total_number(&b)).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn mismatched_params_rejected() {
        let b = FockBasis::new(3, 1).unwrap();
        let p = params(vec![0.0; 2], vec![0.0; 2], vec![0.1]);
        assert!(matches!(build_hamiltonian(&b, &p), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn gauge_removes_uniform_shift() {
        let p = params(vec![2.0 * 15f64.sqrt(), 2.0 * 15f64.sqrt() + 0.1], vec![0.5; 2], vec![0.01]);
        let g = gauge_out_uniform(&p);
        assert!(g.omega[0].abs() < 1e-15);
        assert_relative_eq!(g.omega[1], 0.1, epsilon = 1e-14);
        assert_eq!(g.j, p.j);
        assert_relative_eq!(g.omega[1] - g.omega[0], p.omega[1] - p.omega[0], epsilon = 1e-14);
    }

    #[test]
    fn dense_and_sparse_agree() {
        let b = FockBasis::new(4, 2).unwrap();
        assert!(b.dim() > DENSE_LIMIT);
        let p = params(vec![0.0, 0.1, -0.3, 0.2], vec![0.6; 4], vec![0.01, 0.02, 0.03]);
        let sparse = build_hamiltonian(&b, &p).unwrap();
        assert!(sparse.is_sparse());
        let dense = sparse.clone().into_dense();
        let n = total_number(&b);
        let via_sparse = sparse.matmul(&n).unwrap().to_dense();
        let via_dense = dense.matmul(&n.into_dense()).unwrap().to_dense();
        assert!((via_sparse - via_dense).norm() < 1e-12);
    }

    #[test]
    fn matrix_market_dump() {
        let b = FockBasis::new(1, 1).unwrap();
        let dump = annihilation(&b, 0).unwrap().to_matrix_market();
        let lines: Vec<_> = dump.lines().collect();
        assert_eq!(lines[1], "2 2 1");
        assert!(lines[2].starts_with("1 2 1.0"));
    }
}
