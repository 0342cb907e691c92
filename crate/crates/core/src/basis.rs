//! Spline bases, random-walk penalties and the identifiability-centered
//! per-parameter design.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::linalg::{nullspace_basis, psd_rank, symmetric_eigenvalues, LinalgError, Matrix};
use crate::model::ModelSpec;

/// Relative pivot tolerance used when counting penalty ranks.
pub const RANK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("covariate range is degenerate (min = max = {0})")]
    DegenerateRange(f64),
    #[error("difference order {order} too large for {q} coefficients")]
    OrderTooLarge { q: usize, order: usize },
    #[error("invalid term specification: {0}")]
    InvalidTerm(String),
    #[error("covariate `{0}` missing from data")]
    MissingCovariate(String),
    #[error("non-finite value in column `{column}` at row {row}")]
    NonFiniteValue { column: String, row: usize },
    #[error("value {value} outside the basis range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Intercept,
    Linear,
    Pspline,
}

fn default_knots() -> usize {
    10
}
fn default_degree() -> usize {
    3
}
fn default_order() -> usize {
    2
}

/// One additive term of a predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub kind: TermKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate: Option<String>,
    #[serde(default = "default_knots")]
    pub num_knots: usize,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_order")]
    pub penalty_order: usize,
}

impl TermSpec {
    pub fn intercept() -> Self {
        Self {
            kind: TermKind::Intercept,
            covariate: None,
            num_knots: default_knots(),
            degree: default_degree(),
            penalty_order: default_order(),
        }
    }

    pub fn linear(covariate: &str) -> Self {
        Self { kind: TermKind::Linear, covariate: Some(covariate.to_string()), ..Self::intercept() }
    }

    /// Cubic P-spline, 10 knots, second-order random walk.
    pub fn pspline(covariate: &str) -> Self {
        Self { kind: TermKind::Pspline, covariate: Some(covariate.to_string()), ..Self::intercept() }
    }

    pub fn pspline_with(covariate: &str, num_knots: usize, degree: usize, penalty_order: usize) -> Self {
        Self { kind: TermKind::Pspline, covariate: Some(covariate.to_string()), num_knots, degree, penalty_order }
    }

    pub fn validate(&self) -> Result<(), BasisError> {
        match self.kind {
            TermKind::Intercept => Ok(()),
            TermKind::Linear => self.require_covariate().map(|_| ()),
            TermKind::Pspline => {
                self.require_covariate()?;
                if self.degree < 1 {
                    return Err(BasisError::InvalidTerm("degree must be at least 1".into()));
                }
                if self.num_knots < self.penalty_order + 1 || self.num_knots < 2 {
                    return Err(BasisError::InvalidTerm(format!(
                        "num_knots = {} must be at least penalty_order + 1 = {} (and at least 2)",
                        self.num_knots,
                        self.penalty_order + 1
                    )));
                }
                if self.penalty_order < 1 {
                    return Err(BasisError::InvalidTerm("penalty_order must be at least 1".into()));
                }
                Ok(())
            }
        }
    }

    fn require_covariate(&self) -> Result<&str, BasisError> {
        self.covariate
            .as_deref()
            .ok_or_else(|| BasisError::InvalidTerm(format!("{:?} term needs a covariate", self.kind)))
    }

    /// Number of raw basis columns before centering.
    pub fn raw_width(&self) -> usize {
        match self.kind {
            TermKind::Intercept | TermKind::Linear => 1,
            TermKind::Pspline => self.num_knots + self.degree - 1,
        }
    }
}

/// B-spline basis over `[lo, hi]` with `num_knots` equidistant knots
/// (boundaries included) and `degree` extra knots with the same spacing
/// beyond each boundary. It has `num_knots + degree - 1` functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    pub lo: f64,
    pub hi: f64,
    pub num_knots: usize,
    pub degree: usize,
}

impl BSplineBasis {
    pub fn new(lo: f64, hi: f64, num_knots: usize, degree: usize) -> Result<Self, BasisError> {
        if !(hi > lo) {
            return Err(BasisError::DegenerateRange(lo));
        }
        if num_knots < 2 || degree < 1 {
            return Err(BasisError::InvalidTerm(format!(
                "need num_knots >= 2 and degree >= 1 (got {num_knots}, {degree})"
            )));
        }
        Ok(Self { lo, hi, num_knots, degree })
    }

    /// Basis spanning the observed range of `x`.
    pub fn from_data(x: &[f64], num_knots: usize, degree: usize) -> Result<Self, BasisError> {
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(BasisError::DegenerateRange(lo));
        }
        Self::new(lo, hi, num_knots, degree)
    }

    pub fn num_basis(&self) -> usize {
        self.num_knots + self.degree - 1
    }

    fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.num_knots - 1) as f64
    }

    /// Full knot vector, length `num_knots + 2 * degree`.
    pub fn knots(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.num_knots + 2 * self.degree).map(|k| self.lo + (k as f64 - self.degree as f64) * h).collect()
    }

    fn contains(&self, x: f64) -> bool {
        let slack = 1e-10 * (self.hi - self.lo);
        x >= self.lo - slack && x <= self.hi + slack
    }

    /// Values of the `degree + 1` nonzero basis functions at `x` and the index
    /// of the first of them.
    fn nonzero(&self, x: f64, knots: &[f64]) -> (usize, Vec<f64>) {
        let d = self.degree;
        let intervals = self.num_knots - 1;
        let h = self.spacing();
        let pos = ((x - self.lo) / h).floor();
        let interval = if pos < 0.0 { 0 } else { (pos as usize).min(intervals - 1) };
        let span = interval + d;
        // Cox–de Boor triangle (NURBS book A2.2).
        let mut n = vec![0.0; d + 1];
        let mut left = vec![0.0; d + 1];
        let mut right = vec![0.0; d + 1];
        n[0] = 1.0;
        for j in 1..=d {
            left[j] = x - knots[span + 1 - j];
            right[j] = knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (span - d, n)
    }

    /// `N × num_basis` design matrix. Fails if any value lies outside the range.
    pub fn design(&self, x: &[f64]) -> Result<Matrix, BasisError> {
        let knots = self.knots();
        let mut out = Matrix::zeros(x.len(), self.num_basis());
        for (i, &xi) in x.iter().enumerate() {
            if !xi.is_finite() || !self.contains(xi) {
                return Err(BasisError::OutOfRange { value: xi, lo: self.lo, hi: self.hi });
            }
            let (first, vals) = self.nonzero(xi, &knots);
            for (k, v) in vals.into_iter().enumerate() {
                out[(i, first + k)] = v;
            }
        }
        Ok(out)
    }
}

/// Design matrix of a B-spline basis over the observed range of `x`.
pub fn bspline_design(x: &[f64], num_knots: usize, degree: usize) -> Result<Matrix, BasisError> {
    if x.is_empty() {
        return Err(BasisError::InvalidTerm("no covariate values".into()));
    }
    if let Some(row) = x.iter().position(|v| !v.is_finite()) {
        return Err(BasisError::NonFiniteValue { column: "x".into(), row });
    }
    BSplineBasis::from_data(x, num_knots, degree)?.design(x)
}

/// `DᵀD` for the `order`-th difference matrix `D` on `q` coefficients.
pub fn rw_penalty(q: usize, order: usize) -> Result<Matrix, BasisError> {
    if order < 1 || q <= order {
        return Err(BasisError::OrderTooLarge { q, order });
    }
    // Rows of D: binomial coefficients with alternating signs.
    let mut coeffs = vec![1.0_f64];
    for _ in 0..order {
        let mut next = vec![0.0; coeffs.len() + 1];
        for (k, &c) in coeffs.iter().enumerate() {
            next[k] += c;
            next[k + 1] -= c;
        }
        coeffs = next;
    }
    let rows = q - order;
    let mut d = Matrix::zeros(rows, q);
    for r in 0..rows {
        for (k, &c) in coeffs.iter().enumerate() {
            d[(r, r + k)] = c;
        }
    }
    Ok(d.transpose().matmul(&d))
}

/// One additive term of one distribution parameter after centering.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignBlock {
    pub label: String,
    pub kind: TermKind,
    pub covariate: Option<String>,
    /// Index of the distribution parameter this term belongs to.
    pub param: usize,
    /// Offset of the block's first coefficient in the full coefficient vector.
    pub offset: usize,
    /// `N × width` centered design.
    pub x: Matrix,
    /// `width × width` penalty (zero for unpenalized terms).
    pub k: Matrix,
    /// Centering basis `Z⁽ᵇ⁾` mapping centered to raw coefficients.
    pub zb: Option<Matrix>,
    pub penalty_rank: usize,
    /// `ln` of the product of the nonzero eigenvalues of `k`.
    pub log_pdet: f64,
    pub tau_index: Option<usize>,
    pub basis: Option<BSplineBasis>,
    /// Subtracted from linear covariates before use.
    pub shift: f64,
}

impl DesignBlock {
    pub fn width(&self) -> usize {
        self.x.cols()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.width()
    }

    /// Centered basis evaluated at new covariate values.
    pub fn evaluate(&self, x: &[f64]) -> Result<Matrix, BasisError> {
        match self.kind {
            TermKind::Intercept => Ok(Matrix::from_vec(x.len(), 1, vec![1.0; x.len()])),
            TermKind::Linear => Ok(Matrix::from_vec(x.len(), 1, x.iter().map(|v| v - self.shift).collect())),
            TermKind::Pspline => {
                let basis = self.basis.as_ref().expect("spline block carries its basis");
                let raw = basis.design(x)?;
                Ok(match &self.zb {
                    Some(z) => raw.matmul(z),
                    None => raw,
                })
            }
        }
    }
}

fn log_pseudo_determinant(k: &Matrix, rank: usize) -> f64 {
    if rank == 0 {
        return 0.0;
    }
    let eig = symmetric_eigenvalues(k);
    eig.iter().rev().take(rank).map(|v| v.ln()).sum()
}

/// Projects a term onto the orthogonal complement of its column means.
///
/// When the column means already vanish the term is returned unchanged
/// (`zb = None`).
pub fn center_term(x_raw: &Matrix, k_raw: &Matrix) -> Result<DesignBlock, BasisError> {
    if x_raw.cols() < 2 {
        return Err(BasisError::InvalidTerm("centering needs at least two columns".into()));
    }
    let means = x_raw.column_means();
    let (x, k, zb) = match nullspace_basis(&means) {
        Ok(z) => (x_raw.matmul(&z), k_raw.congruence(&z), Some(z)),
        Err(LinalgError::ZeroVector) => (x_raw.clone(), k_raw.clone(), None),
        Err(e) => return Err(e.into()),
    };
    let k = k.symmetrized();
    let penalty_rank = psd_rank(&k, RANK_TOLERANCE);
    let log_pdet = log_pseudo_determinant(&k, penalty_rank);
    Ok(DesignBlock {
        label: String::new(),
        kind: TermKind::Pspline,
        covariate: None,
        param: 0,
        offset: 0,
        x,
        k,
        zb,
        penalty_rank,
        log_pdet,
        tau_index: None,
        basis: None,
        shift: 0.0,
    })
}

/// Design of one distribution parameter: `[1, X_{p,1}, …]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDesign {
    pub name: String,
    pub offset: usize,
    pub x: Matrix,
}

impl ParamDesign {
    pub fn width(&self) -> usize {
        self.x.cols()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.width()
    }
}

/// The assembled regression design for every distribution parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub n: usize,
    pub params: Vec<ParamDesign>,
    pub blocks: Vec<DesignBlock>,
    pub q: usize,
    pub n_tau: usize,
}

impl Design {
    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// `X_i`: the `P × Q` block-diagonal row view of observation `i`.
    pub fn row_matrix(&self, i: usize) -> Matrix {
        let mut m = Matrix::zeros(self.params.len(), self.q);
        for (p, pd) in self.params.iter().enumerate() {
            for (k, &v) in pd.x.row(i).iter().enumerate() {
                m[(p, pd.offset + k)] = v;
            }
        }
        m
    }

    /// `η = X β` as an `N × P` matrix.
    pub fn predictor(&self, beta: &[f64]) -> Matrix {
        let p = self.params.len();
        let mut eta = Matrix::zeros(self.n, p);
        for (j, pd) in self.params.iter().enumerate() {
            let b = &beta[pd.range()];
            for i in 0..self.n {
                eta[(i, j)] = crate::linalg::dot(pd.x.row(i), b);
            }
        }
        eta
    }

    /// `Xᵀ g` for an `N × P` matrix of predictor adjoints.
    pub fn predictor_adjoint(&self, g: &Matrix, out: &mut [f64]) {
        for (j, pd) in self.params.iter().enumerate() {
            let o = &mut out[pd.range()];
            for i in 0..self.n {
                let gij = g[(i, j)];
                if gij == 0.0 {
                    continue;
                }
                for (ok, &x) in o.iter_mut().zip(pd.x.row(i)) {
                    *ok += gij * x;
                }
            }
        }
    }

    pub fn coefficient_labels(&self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.q);
        for b in &self.blocks {
            if b.width() == 1 {
                labels.push(b.label.clone());
            } else {
                labels.extend((0..b.width()).map(|k| format!("{}[{}]", b.label, k + 1)));
            }
        }
        labels
    }

    pub fn tau_labels(&self) -> Vec<String> {
        let mut labels = vec![String::new(); self.n_tau];
        for b in &self.blocks {
            if let Some(t) = b.tau_index {
                labels[t] = b.label.clone();
            }
        }
        labels
    }

    pub fn penalized_blocks(&self) -> impl Iterator<Item = &DesignBlock> {
        self.blocks.iter().filter(|b| b.tau_index.is_some())
    }

    pub fn block_by_label(&self, label: &str) -> Option<&DesignBlock> {
        self.blocks.iter().find(|b| b.label == label)
    }
}

fn checked_column<'a>(data: &'a Dataset, name: &str) -> Result<&'a [f64], BasisError> {
    let col = data.column(name).map_err(|_| BasisError::MissingCovariate(name.to_string()))?;
    if let Some(row) = col.iter().position(|v| !v.is_finite()) {
        return Err(BasisError::NonFiniteValue { column: name.to_string(), row });
    }
    Ok(col)
}

/// Builds the centered design of every parameter. Each parameter starts with
/// an intercept; an explicit leading intercept term is accepted and merged.
pub fn assemble_design(spec: &ModelSpec, data: &Dataset) -> Result<Design, BasisError> {
    let n = data.n_rows();
    let names = spec.family.parameter_names();
    if spec.parameters.len() != names.len() {
        return Err(BasisError::InvalidTerm(format!(
            "family {} has {} parameters, model lists {}",
            spec.family.name(),
            names.len(),
            spec.parameters.len()
        )));
    }
    let mut blocks = Vec::new();
    let mut params = Vec::new();
    let mut offset = 0;
    let mut n_tau = 0;
    for (p, terms) in spec.parameters.iter().enumerate() {
        let pname = names[p].to_string();
        let param_offset = offset;
        let mut param_blocks = vec![DesignBlock {
            label: format!("{pname}:intercept"),
            kind: TermKind::Intercept,
            covariate: None,
            param: p,
            offset,
            x: Matrix::from_vec(n, 1, vec![1.0; n]),
            k: Matrix::zeros(1, 1),
            zb: None,
            penalty_rank: 0,
            log_pdet: 0.0,
            tau_index: None,
            basis: None,
            shift: 0.0,
        }];
        offset += 1;
        for (t, term) in terms.iter().enumerate() {
            term.validate()?;
            match term.kind {
                TermKind::Intercept => {
                    if t != 0 {
                        return Err(BasisError::InvalidTerm(format!(
                            "intercept must be the first term of parameter {pname}"
                        )));
                    }
                }
                TermKind::Linear => {
                    let cov = term.require_covariate()?;
                    let x = checked_column(data, cov)?;
                    let shift = x.iter().sum::<f64>() / n as f64;
                    param_blocks.push(DesignBlock {
                        label: format!("{pname}:{cov}"),
                        kind: TermKind::Linear,
                        covariate: Some(cov.to_string()),
                        param: p,
                        offset,
                        x: Matrix::from_vec(n, 1, x.iter().map(|v| v - shift).collect()),
                        k: Matrix::zeros(1, 1),
                        zb: None,
                        penalty_rank: 0,
                        log_pdet: 0.0,
                        tau_index: None,
                        basis: None,
                        shift,
                    });
                    offset += 1;
                }
                TermKind::Pspline => {
                    let cov = term.require_covariate()?;
                    let x = checked_column(data, cov)?;
                    let basis = BSplineBasis::from_data(x, term.num_knots, term.degree)?;
                    let raw = basis.design(x)?;
                    let k_raw = rw_penalty(raw.cols(), term.penalty_order)?;
                    let mut block = center_term(&raw, &k_raw)?;
                    block.label = format!("{pname}:s({cov})");
                    block.covariate = Some(cov.to_string());
                    block.param = p;
                    block.offset = offset;
                    block.tau_index = Some(n_tau);
                    block.basis = Some(basis);
                    n_tau += 1;
                    offset += block.width();
                    param_blocks.push(block);
                }
            }
        }
        let width = offset - param_offset;
        let mut x = Matrix::zeros(n, width);
        for b in &param_blocks {
            let local = b.offset - param_offset;
            for i in 0..n {
                x.row_mut(i)[local..local + b.width()].copy_from_slice(b.x.row(i));
            }
        }
        params.push(ParamDesign { name: pname, offset: param_offset, x });
        blocks.extend(param_blocks);
    }
    Ok(Design { n, params, blocks, q: offset, n_tau })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, ResponseFamily};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Textbook recursive Cox–de Boor definition, independent of the
    /// triangular evaluation used in `BSplineBasis`.
    fn cox_de_boor(knots: &[f64], i: usize, d: usize, x: f64) -> f64 {
        if d == 0 {
            return if knots[i] <= x && x < knots[i + 1] { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let den1 = knots[i + d] - knots[i];
        if den1 > 0.0 {
            v += (x - knots[i]) / den1 * cox_de_boor(knots, i, d - 1, x);
        }
        let den2 = knots[i + d + 1] - knots[i + 1];
        if den2 > 0.0 {
            v += (knots[i + d + 1] - x) / den2 * cox_de_boor(knots, i + 1, d - 1, x);
        }
        v
    }

    #[test]
    fn partition_of_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..500).map(|_| rng.random_range(-2.0..7.0)).collect();
        for degree in 1..=4 {
            let b = bspline_design(&x, 10, degree).unwrap();
            assert_eq!(b.cols(), 10 + degree - 1);
            for i in 0..x.len() {
                let s: f64 = b.row(i).iter().sum();
                assert!((s - 1.0).abs() <= 1e-12, "row {i} sums to {s}");
            }
        }
    }

    #[test]
    fn matches_recursive_oracle() {
        let basis = BSplineBasis::new(0.0, 1.0, 10, 3).unwrap();
        let knots = basis.knots();
        let xs = [0.0, 0.013, 0.25, 0.5, 0.77, 0.999];
        let design = basis.design(&xs).unwrap();
        for (i, &x) in xs.iter().enumerate() {
            for j in 0..basis.num_basis() {
                let oracle = cox_de_boor(&knots, j, 3, x);
                assert!((design[(i, j)] - oracle).abs() < 1e-13, "x={x} j={j}");
            }
        }
        // Left boundary: first function equals the oracle value 1/6.
        assert_relative_eq!(design[(0, 0)], cox_de_boor(&knots, 0, 3, 0.0), epsilon = 1e-15);
        assert_relative_eq!(design[(0, 0)], 1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn linear_hat_at_midpoint() {
        let basis = BSplineBasis::new(0.0, 1.0, 2, 1).unwrap();
        let d = basis.design(&[0.5]).unwrap();
        assert_eq!(d.cols(), 2);
        assert_relative_eq!(d[(0, 0)], 0.5);
        assert_relative_eq!(d[(0, 1)], 0.5);
    }

    #[test]
    fn degenerate_range() {
        assert!(matches!(bspline_design(&[1.0, 1.0], 10, 3), Err(BasisError::DegenerateRange(_))));
    }

    #[test]
    fn penalty_examples() {
        let k = rw_penalty(4, 2).unwrap();
        let expected = Matrix::from_rows(&[
            vec![1.0, -2.0, 1.0, 0.0],
            vec![-2.0, 5.0, -4.0, 1.0],
            vec![1.0, -4.0, 5.0, -2.0],
            vec![0.0, 1.0, -2.0, 1.0],
        ]);
        assert_eq!(k, expected);
        let k = rw_penalty(3, 1).unwrap();
        assert_eq!(k, Matrix::from_rows(&[vec![1.0, -1.0, 0.0], vec![-1.0, 2.0, -1.0], vec![0.0, -1.0, 1.0]]));
        for q in 3..15 {
            let k = rw_penalty(q, 2).unwrap();
            let ones = vec![1.0; q];
            let lin: Vec<f64> = (1..=q).map(|v| v as f64).collect();
            assert!(k.matvec(&ones).iter().all(|v| v.abs() < 1e-12));
            assert!(k.matvec(&lin).iter().all(|v| v.abs() < 1e-10));
        }
        assert!(matches!(rw_penalty(2, 2), Err(BasisError::OrderTooLarge { .. })));
    }

    #[test]
    fn penalty_ranks() {
        for q in 4..=30 {
            for d in 1..=2 {
                let k = rw_penalty(q, d).unwrap();
                assert_eq!(psd_rank(&k, RANK_TOLERANCE), q - d, "q={q} d={d}");
            }
        }
    }

    #[test]
    fn centering_examples() {
        let x_raw = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 2.0]]);
        let block = center_term(&x_raw, &Matrix::identity(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let beta: Vec<f64> = (0..block.width()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let f = block.x.matvec(&beta);
            assert!(f.iter().sum::<f64>().abs() < 1e-12);
        }
        // K_raw = I stays the identity.
        assert!(block.k.sub(&Matrix::identity(1)).frobenius_norm() < 1e-14);

        // Zero column means: centering keeps them at zero.
        let x0 = Matrix::from_rows(&[vec![1.0, -1.0, 0.5], vec![-1.0, 1.0, -0.5]]);
        let b0 = center_term(&x0, &Matrix::identity(3)).unwrap();
        assert!(b0.x.column_means().iter().all(|m| m.abs() <= 1e-10));
    }

    #[test]
    fn centered_spline_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..std::f64::consts::PI)).collect();
        let raw = bspline_design(&x, 10, 3).unwrap();
        let k_raw = rw_penalty(raw.cols(), 2).unwrap();
        let block = center_term(&raw, &k_raw).unwrap();
        assert_eq!(block.width(), 11);
        assert!(block.x.column_means().iter().all(|m| m.abs() <= 1e-10));
        let eig = symmetric_eigenvalues(&block.k);
        assert!(eig[0] >= -1e-10);
        assert_eq!(block.penalty_rank, 10);
    }

    fn toy_data(n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Dataset::new()
            .with_column("y", (0..n).map(|_| rng.random_range(0.5..2.0)).collect())
            .unwrap()
            .with_column("x", (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
            .unwrap()
            .with_column("z", (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn assemble_examples() {
        let data = toy_data(3);
        let spec = ModelSpec::new(ResponseFamily::BernoulliLogit, "y", vec![vec![]]);
        let d = assemble_design(&spec, &data).unwrap();
        assert_eq!(d.q, 1);
        assert_eq!(d.params[0].x, Matrix::from_vec(3, 1, vec![1.0; 3]));

        let data = toy_data(40);
        let spec = ModelSpec::new(ResponseFamily::BernoulliLogit, "y", vec![vec![TermSpec::pspline("x")]]);
        let d = assemble_design(&spec, &data).unwrap();
        assert_eq!(d.q, 12);
        assert_eq!(d.n_tau, 1);

        let spec = ModelSpec::new(
            ResponseFamily::GammaMeanVar,
            "y",
            vec![vec![TermSpec::intercept(), TermSpec::pspline("x")], vec![TermSpec::linear("z")]],
        );
        let d = assemble_design(&spec, &data).unwrap();
        assert_eq!(d.q, 12 + 2);
        let xi = d.row_matrix(4);
        assert_eq!((xi.rows(), xi.cols()), (2, 14));
        for j in 0..12 {
            assert_eq!(xi[(1, j)], 0.0);
            assert_eq!(xi[(0, j)], d.params[0].x[(4, j)]);
        }
        for j in 12..14 {
            assert_eq!(xi[(0, j)], 0.0);
        }
        assert_eq!(d.coefficient_labels().len(), 14);
        assert_eq!(d.tau_labels(), vec!["mu:s(x)".to_string()]);
    }

    #[test]
    fn assemble_errors() {
        let data = toy_data(10);
        let spec = ModelSpec::new(ResponseFamily::BernoulliLogit, "y", vec![vec![TermSpec::pspline("w")]]);
        assert!(matches!(assemble_design(&spec, &data), Err(BasisError::MissingCovariate(c)) if c == "w"));
        let bad = data.clone().with_column("w", {
            let mut v = vec![0.5; 10];
            v[3] = f64::NAN;
            v
        });
        let spec = ModelSpec::new(ResponseFamily::BernoulliLogit, "y", vec![vec![TermSpec::linear("w")]]);
        assert!(matches!(assemble_design(&spec, &bad.unwrap()), Err(BasisError::NonFiniteValue { row: 3, .. })));
    }

    #[test]
    fn evaluate_reproduces_training_design() {
        let data = toy_data(50);
        let spec = ModelSpec::new(ResponseFamily::BernoulliLogit, "y", vec![vec![TermSpec::pspline("x")]]);
        let d = assemble_design(&spec, &data).unwrap();
        let block = d.block_by_label("p:s(x)").unwrap();
        let again = block.evaluate(data.column("x").unwrap()).unwrap();
        assert!(again.sub(&block.x).frobenius_norm() < 1e-12);
        assert!(matches!(block.evaluate(&[5.0]), Err(BasisError::OutOfRange { .. })));
    }

    proptest::proptest! {
        #[test]
        fn centering_zeroes_column_means(seed in 0u64..1000, n in 5usize..80, knots in 3usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let raw = bspline_design(&x, knots, 3).unwrap();
            let k_raw = rw_penalty(raw.cols(), 2).unwrap();
            let b = center_term(&raw, &k_raw).unwrap();
            proptest::prop_assert!(b.x.column_means().iter().all(|m| m.abs() <= 1e-10));
            proptest::prop_assert!(symmetric_eigenvalues(&b.k)[0] >= -1e-10);
        }
    }
}
