//! Multi-index sets, orthonormal Legendre chaos, triple-product matrices
//! G_i, and the detail (neighborhood) set driving parametric enrichment.
//!
//! Polynomials are orthonormal w.r.t. the uniform density 1/2 on [-1,1]:
//! Lhat_m = sqrt(2m+1) P_m, and xi Lhat_m = c(m-1,m) Lhat_{m-1}
//! + c(m,m+1) Lhat_{m+1} with c(m,m+1) = (m+1)/sqrt((2m+1)(2m+3)).

use crate::error::{Error, Result};
use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

/// Finitely supported multi-index, stored without trailing zeros.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn zero() -> Self {
        MultiIndex(Vec::new())
    }

    /// Unit index in the given 1-based dimension.
    pub fn unit(dim: usize) -> Self {
        assert!(dim >= 1);
        let mut v = vec![0; dim];
        v[dim - 1] = 1;
        MultiIndex(v)
    }

    pub fn from_slice(s: &[u32]) -> Self {
        let mut v = s.to_vec();
        while v.last() == Some(&0) {
            v.pop();
        }
        MultiIndex(v)
    }

    /// Entry in 1-based dimension `dim` (zero beyond support).
    pub fn get(&self, dim: usize) -> u32 {
        assert!(dim >= 1);
        self.0.get(dim - 1).copied().unwrap_or(0)
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Highest active dimension (1-based), 0 for the zero index.
    pub fn max_dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    /// q +- e_dim; None when the result would be negative.
    pub fn bump(&self, dim: usize, delta: i32) -> Option<Self> {
        let cur = self.get(dim) as i64 + delta as i64;
        if cur < 0 {
            return None;
        }
        let len = self.0.len().max(dim);
        let mut v = vec![0u32; len];
        v[..self.0.len()].copy_from_slice(&self.0);
        v[dim - 1] = cur as u32;
        Some(MultiIndex::from_slice(&v))
    }

    /// Psi^q(xi) = prod_n Lhat_{q_n}(xi_n).
    pub fn eval(&self, xi: &[f64]) -> f64 {
        self.0
            .iter()
            .enumerate()
            .map(|(n, &m)| legendre_eval(m as usize, xi[n]))
            .product()
    }
}

impl Ord for MultiIndex {
    /// Graded lexicographic: by total degree, then entrywise left to right.
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| {
            let n = self.0.len().max(other.0.len());
            for d in 1..=n {
                match self.get(d).cmp(&other.get(d)) {
                    Ordering::Equal => continue,
                    ord => return ord,
                }
            }
            Ordering::Equal
        })
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{v}")?;
        }
        if self.0.is_empty() {
            write!(f, "0")?;
        }
        write!(f, ")")
    }
}

/// Orthonormal Legendre polynomial Lhat_m(xi) = sqrt(2m+1) P_m(xi).
pub fn legendre_eval(m: usize, xi: f64) -> f64 {
    let mut p0 = 1.0;
    let mut p1 = xi;
    let p = match m {
        0 => 1.0,
        1 => xi,
        _ => {
            for k in 2..=m {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * xi * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    };
    (2.0 * m as f64 + 1.0).sqrt() * p
}

/// Recurrence coupling c(m, m+1) = <xi Lhat_m Lhat_{m+1}>.
pub fn coupling(m: u32) -> f64 {
    let mf = m as f64;
    (mf + 1.0) / ((2.0 * mf + 1.0) * (2.0 * mf + 3.0)).sqrt()
}

/// <xi_i Psi^p Psi^q> in closed form; `i` is 1-based.
pub fn triple_product(i: usize, p: &MultiIndex, q: &MultiIndex) -> f64 {
    assert!(i >= 1);
    let n = p.max_dim().max(q.max_dim()).max(i);
    for d in 1..=n {
        if d == i {
            continue;
        }
        if p.get(d) != q.get(d) {
            return 0.0;
        }
    }
    let (a, b) = (p.get(i), q.get(i));
    if a.abs_diff(b) != 1 {
        return 0.0;
    }
    coupling(a.min(b))
}

/// Ordered index set B with its detail neighborhood R.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    indices: Vec<MultiIndex>,
    detail: Vec<MultiIndex>,
    n_counter: usize,
}

impl IndexSet {
    /// The seed set {0, e_1}.
    pub fn initial() -> Self {
        Self::from_indices(vec![MultiIndex::zero(), MultiIndex::unit(1)]).unwrap()
    }

    pub fn mean_only() -> Self {
        Self::from_indices(vec![MultiIndex::zero()]).unwrap()
    }

    /// All indices with dimension <= dims and total degree <= degree.
    pub fn total_degree(dims: usize, degree: u32) -> Self {
        assert!(dims >= 1);
        let mut set = BTreeSet::new();
        let mut stack = vec![(MultiIndex::zero(), 1usize)];
        set.insert(MultiIndex::zero());
        while let Some((q, d)) = stack.pop() {
            if d > dims {
                continue;
            }
            stack.push((q.clone(), d + 1));
            if q.degree() < degree {
                if let Some(up) = q.bump(d, 1) {
                    if set.insert(up.clone()) {
                        stack.push((up, d));
                    }
                }
            }
        }
        Self::from_indices(set.into_iter().collect()).unwrap()
    }

    pub fn from_indices(indices: Vec<MultiIndex>) -> Result<Self> {
        let set: BTreeSet<MultiIndex> = indices.into_iter().collect();
        if !set.contains(&MultiIndex::zero()) {
            return Err(Error::Contract("index set must contain the zero index".into()));
        }
        let indices: Vec<MultiIndex> = set.into_iter().collect();
        let n_counter = indices.iter().map(|q| q.max_dim()).max().unwrap_or(0);
        let detail = compute_detail(&indices, n_counter);
        Ok(IndexSet {
            indices,
            detail,
            n_counter,
        })
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn detail(&self) -> &[MultiIndex] {
        &self.detail
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// The counter N_B: highest active dimension over B \ {0}.
    pub fn n_counter(&self) -> usize {
        self.n_counter
    }

    /// Stochastic dimension count for assembly and estimation:
    /// max(1, highest dimension active in B or R).
    pub fn active_dim(&self) -> usize {
        self.indices
            .iter()
            .chain(&self.detail)
            .map(|q| q.max_dim())
            .max()
            .unwrap_or(0)
            .max(1)
    }

    pub fn position(&self, q: &MultiIndex) -> Option<usize> {
        self.indices.binary_search(q).ok()
    }

    pub fn detail_position(&self, q: &MultiIndex) -> Option<usize> {
        self.detail.binary_search(q).ok()
    }

    /// B union marked, marked must be drawn from the detail set.
    pub fn enrich(&self, marked: &[MultiIndex]) -> Result<Self> {
        for q in marked {
            if self.detail.binary_search(q).is_err() {
                return Err(Error::Contract(format!(
                    "marked index {q} is not in the detail set"
                )));
            }
        }
        let mut all = self.indices.clone();
        all.extend(marked.iter().cloned());
        Self::from_indices(all)
    }

    /// Pad-to-width display used in history files, e.g. "(0 1 0)".
    pub fn format_index(&self, q: &MultiIndex) -> String {
        let w = self.n_counter.max(1);
        let mut s = String::from("(");
        for d in 1..=w {
            if d > 1 {
                s.push(' ');
            }
            s.push_str(&q.get(d).to_string());
        }
        s.push(')');
        s
    }
}

fn compute_detail(indices: &[MultiIndex], n_counter: usize) -> Vec<MultiIndex> {
    let mut out = BTreeSet::new();
    for q in indices {
        for n in 1..=(n_counter + 1) {
            for delta in [1i32, -1] {
                if let Some(r) = q.bump(n, delta) {
                    if indices.binary_search(&r).is_err() {
                        out.insert(r);
                    }
                }
            }
        }
    }
    out.into_iter().collect()
}

/// Sparse symmetric stochastic matrix: all nonzero (row, col, value) entries,
/// both orientations stored.
#[derive(Debug, Clone)]
pub struct SparseG {
    pub n: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseG {
    pub fn identity(n: usize) -> Self {
        SparseG {
            n,
            entries: (0..n).map(|i| (i, i, 1.0)).collect(),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n * self.n];
        for &(r, c, v) in &self.entries {
            d[r * self.n + c] = v;
        }
        d
    }
}

/// G_0 = I and G_i over B (or B union R when `extended`) for i = 1..n_dims.
/// In the extended case the matrices live on the concatenated list
/// B followed by R, in their stored orders.
pub fn build_stochastic_matrices(set: &IndexSet, n_dims: usize, extended: bool) -> Vec<SparseG> {
    assert!(n_dims >= 1);
    let list: Vec<&MultiIndex> = if extended {
        set.indices().iter().chain(set.detail()).collect()
    } else {
        set.indices().iter().collect()
    };
    let n = list.len();
    let mut out = Vec::with_capacity(n_dims + 1);
    out.push(SparseG::identity(n));
    for i in 1..=n_dims {
        let mut entries = Vec::new();
        for (r, p) in list.iter().enumerate() {
            for (c, q) in list.iter().enumerate() {
                let v = triple_product(i, p, q);
                if v != 0.0 {
                    entries.push((r, c, v));
                }
            }
        }
        out.push(SparseG { n, entries });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_legendre;

    fn mi(s: &[u32]) -> MultiIndex {
        MultiIndex::from_slice(s)
    }

    #[test]
    fn legendre_values() {
        assert_eq!(legendre_eval(0, 0.37), 1.0);
        assert!((legendre_eval(1, 0.5) - 3f64.sqrt() * 0.5).abs() < 1e-15);
    }

    #[test]
    fn legendre_orthonormal_under_uniform_density() {
        let gl = gauss_legendre(64);
        for m in 0..=12usize {
            for n in m..=12 {
                let mut acc = 0.0;
                for &(x, w) in &gl {
                    acc += 0.5 * w * legendre_eval(m, x) * legendre_eval(n, x);
                }
                let want = if m == n { 1.0 } else { 0.0 };
                assert!((acc - want).abs() < 1e-12, "({m},{n}): {acc}");
            }
        }
    }

    /// <xi_i Psi^p Psi^q> by tensor Gauss quadrature, one 1D rule per
    /// dimension (separable integrand).
    fn triple_quadrature(i: usize, p: &MultiIndex, q: &MultiIndex, gl: &[(f64, f64)]) -> f64 {
        let dims = p.max_dim().max(q.max_dim()).max(i);
        let mut prod = 1.0;
        for d in 1..=dims {
            let mut acc = 0.0;
            for &(x, w) in gl {
                let mut f = legendre_eval(p.get(d) as usize, x) * legendre_eval(q.get(d) as usize, x);
                if d == i {
                    f *= x;
                }
                acc += 0.5 * w * f;
            }
            prod *= acc;
        }
        prod
    }

    #[test]
    fn triple_product_closed_form_matches_quadrature() {
        let gl = gauss_legendre(64);
        let set = IndexSet::total_degree(3, 4);
        for i in 1..=3usize {
            for p in set.indices() {
                for q in set.indices() {
                    let closed = triple_product(i, p, q);
                    let quad = triple_quadrature(i, p, q, &gl);
                    assert!(
                        (closed - quad).abs() < 1e-12,
                        "i={i} p={p} q={q}: {closed} vs {quad}"
                    );
                }
            }
        }
    }

    #[test]
    fn triple_product_spot_values() {
        let s3 = 1.0 / 3f64.sqrt();
        assert!((triple_product(1, &mi(&[0]), &mi(&[1])) - s3).abs() < 1e-15);
        assert_eq!(triple_product(1, &mi(&[0]), &mi(&[0])), 0.0);
        assert!((triple_product(2, &mi(&[1, 0]), &mi(&[1, 1])) - s3).abs() < 1e-15);
        assert_eq!(triple_product(2, &mi(&[1, 0]), &mi(&[0, 1])), 0.0);
        // degree-1 to degree-2 coupling in one dimension
        assert!((triple_product(1, &mi(&[1]), &mi(&[2])) - 2.0 / 15f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn stochastic_matrix_structure() {
        let set = IndexSet::initial();
        let gs = build_stochastic_matrices(&set, 1, false);
        let g0 = gs[0].to_dense();
        assert_eq!(g0, vec![1.0, 0.0, 0.0, 1.0]);
        let g1 = gs[1].to_dense();
        let s3 = 1.0 / 3f64.sqrt();
        // off-diagonal couplings only: <xi Lhat_1 Lhat_1> vanishes by parity
        assert!((g1[1] - s3).abs() < 1e-15);
        assert!((g1[2] - s3).abs() < 1e-15);
        assert_eq!(g1[0], 0.0);
        assert_eq!(g1[3], 0.0);
        // the extended matrix couples (1) to (2) with c(1,2) = 2/sqrt(15)
        let ext = build_stochastic_matrices(&set, set.active_dim(), true);
        let list: Vec<MultiIndex> = set
            .indices()
            .iter()
            .chain(set.detail())
            .cloned()
            .collect();
        let p1 = list.iter().position(|q| *q == mi(&[1])).unwrap();
        let p2 = list.iter().position(|q| *q == mi(&[2])).unwrap();
        let g1e = &ext[1];
        let val = g1e
            .entries
            .iter()
            .find(|&&(r, c, _)| r == p1 && c == p2)
            .map(|&(_, _, v)| v)
            .unwrap();
        assert!((val - 2.0 / 15f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn symmetry_and_row_sparsity() {
        let set = IndexSet::total_degree(3, 3);
        let gs = build_stochastic_matrices(&set, 3, false);
        for (i, g) in gs.iter().enumerate().skip(1) {
            let d = g.to_dense();
            let n = g.n;
            for r in 0..n {
                let mut nnz = 0;
                for c in 0..n {
                    assert!((d[r * n + c] - d[c * n + r]).abs() < 1e-15, "G_{i} not symmetric");
                    if d[r * n + c] != 0.0 {
                        nnz += 1;
                    }
                }
                assert!(nnz <= 2, "G_{i} row {r} has {nnz} nonzeros");
            }
        }
    }

    #[test]
    fn detail_sets() {
        let b = IndexSet::from_indices(vec![mi(&[0]), mi(&[1])]).unwrap();
        assert_eq!(b.n_counter(), 1);
        let want: Vec<MultiIndex> = vec![mi(&[0, 1]), mi(&[1, 1]), mi(&[2])];
        let mut got = b.detail().to_vec();
        got.sort();
        let mut w = want.clone();
        w.sort();
        assert_eq!(got, w);

        let mean = IndexSet::mean_only();
        assert_eq!(mean.n_counter(), 0);
        assert_eq!(mean.detail(), &[mi(&[1])]);

        // seed-set neighborhood contains the indices the first enrichments draw from
        let b0 = IndexSet::initial();
        assert!(b0.detail_position(&mi(&[0, 1])).is_some());
        assert!(b0.detail_position(&mi(&[1, 1])).is_some());
    }

    #[test]
    fn detail_set_minimality() {
        let b = IndexSet::from_indices(vec![mi(&[0]), mi(&[1]), mi(&[0, 1])]).unwrap();
        // every detail member is a one-step neighbor of B, and each neighbor
        // value is covered exactly once, so removal breaks coverage
        for r in b.detail() {
            let mut neighbor = false;
            for q in b.indices() {
                for n in 1..=(b.n_counter() + 1) {
                    for delta in [1i32, -1] {
                        if q.bump(n, delta).as_ref() == Some(r) {
                            neighbor = true;
                        }
                    }
                }
            }
            assert!(neighbor, "{r} is not a neighbor of B");
            assert!(b.position(r).is_none());
        }
    }

    #[test]
    fn enrich_contracts() {
        let b0 = IndexSet::initial();
        let same = b0.enrich(&[]).unwrap();
        assert_eq!(same.indices(), b0.indices());
        let grown = b0.enrich(&[mi(&[0, 1]), mi(&[1, 1])]).unwrap();
        assert_eq!(grown.len(), 4);
        for q in b0.indices() {
            assert!(grown.position(q).is_some());
        }
        assert!(b0.enrich(&[mi(&[5, 5])]).is_err());
    }

    #[test]
    fn graded_lex_order() {
        let set = IndexSet::total_degree(2, 2);
        let want = vec![
            mi(&[0]),
            mi(&[0, 1]),
            mi(&[1]),
            mi(&[0, 2]),
            mi(&[1, 1]),
            mi(&[2]),
        ];
        assert_eq!(set.indices(), &want[..]);
        assert_eq!(set.len(), 6);
    }

    #[test]
    fn parseval_on_small_sets() {
        let set = IndexSet::total_degree(3, 4);
        let gl = gauss_legendre(16);
        let v: Vec<f64> = (0..set.len()).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect();
        let mut quad = 0.0;
        for &(x1, w1) in &gl {
            for &(x2, w2) in &gl {
                for &(x3, w3) in &gl {
                    let xi = [x1, x2, x3];
                    let s: f64 = set
                        .indices()
                        .iter()
                        .zip(&v)
                        .map(|(q, c)| c * q.eval(&xi))
                        .sum();
                    quad += 0.125 * w1 * w2 * w3 * s * s;
                }
            }
        }
        let want: f64 = v.iter().map(|c| c * c).sum();
        assert!((quad - want).abs() < 1e-10 * want, "{quad} vs {want}");
    }

    #[test]
    fn multiplication_by_xi_matches_extended_matrix() {
        let set = IndexSet::from_indices(vec![mi(&[0]), mi(&[1]), mi(&[0, 1])]).unwrap();
        let dims = set.active_dim();
        let gs = build_stochastic_matrices(&set, dims, true);
        let list: Vec<MultiIndex> = set.indices().iter().chain(set.detail()).cloned().collect();
        let nb = set.len();
        let u: Vec<f64> = vec![0.3, -1.2, 0.8];
        let gl = gauss_legendre(16);
        for i in 1..=dims {
            // coefficients of xi_i * u in the extended basis
            let mut coef = vec![0.0; list.len()];
            for &(r, c, g) in &gs[i].entries {
                if c < nb {
                    coef[r] += g * u[c];
                }
            }
            // quadrature projection of xi_i * u onto each extended basis function
            for (r, target) in list.iter().enumerate() {
                let mut acc = 0.0;
                for &(x1, w1) in &gl {
                    for &(x2, w2) in &gl {
                        for &(x3, w3) in &gl {
                            let xi = [x1, x2, x3];
                            let uval: f64 = set
                                .indices()
                                .iter()
                                .zip(&u)
                                .map(|(q, c)| c * q.eval(&xi))
                                .sum();
                            acc += 0.125 * w1 * w2 * w3 * xi[i - 1] * uval * target.eval(&xi);
                        }
                    }
                }
                assert!(
                    (acc - coef[r]).abs() < 1e-10,
                    "dim {i} target {target}: {acc} vs {}",
                    coef[r]
                );
            }
        }
    }

    #[test]
    fn display_and_padding() {
        let b = IndexSet::from_indices(vec![mi(&[0]), mi(&[1]), mi(&[0, 0, 1])]).unwrap();
        assert_eq!(b.format_index(&mi(&[0, 0, 1])), "(0 0 1)");
        assert_eq!(b.format_index(&mi(&[1])), "(1 0 0)");
        assert_eq!(format!("{}", mi(&[2, 1])), "(2 1)");
        assert_eq!(format!("{}", MultiIndex::zero()), "(0)");
    }
}
