//! Gaussian variational families over the regression coefficients, the
//! log-normal family over smoothing parameters, and the reverse-mode maps
//! from posterior adjoints back to the free parameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    cholesky, cholesky_adjoint, cholesky_solve, dot, expand_slice, log_chol_expand, packed_index, packed_len,
    solve_triangular, LinalgError, LogCholVector, LowerTriangular, Matrix, TriangularMode,
};
use crate::model::{Model, LN_2PI};

#[derive(Debug, Error)]
pub enum VariationalError {
    #[error("ill-posed configuration: assembled precision is not positive definite ({0})")]
    IllPosed(LinalgError),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn ill_posed(e: LinalgError) -> VariationalError {
    match e {
        LinalgError::NotPositiveDefinite { .. } => VariationalError::IllPosed(e),
        other => VariationalError::Linalg(other),
    }
}

/// Multivariate normal with mean `mean` and precision `chol · cholᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub chol: LowerTriangular,
}

impl GaussianPosterior {
    pub fn new(mean: Vec<f64>, chol: LowerTriangular) -> Result<Self, VariationalError> {
        if mean.len() != chol.dim() {
            return Err(VariationalError::DimensionMismatch { expected: chol.dim(), found: mean.len() });
        }
        if let Some(index) = chol.diag().iter().position(|&d| !(d > 0.0)) {
            return Err(LinalgError::NonPositiveDiagonal { index, value: chol.get(index, index) }.into());
        }
        Ok(Self { mean, chol })
    }

    /// Gaussian given by its mean and dense precision matrix.
    pub fn from_precision(mean: Vec<f64>, precision: &Matrix) -> Result<Self, VariationalError> {
        let chol = cholesky(precision).map_err(ill_posed)?;
        Self::new(mean, chol)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn precision(&self) -> Matrix {
        self.chol.gram()
    }

    pub fn covariance(&self) -> Matrix {
        let n = self.dim();
        let inv_l = crate::linalg::solve_lower_matrix(&self.chol, &Matrix::identity(n), TriangularMode::Lower);
        inv_l.transpose().matmul(&inv_l)
    }

    pub fn marginal_sd(&self) -> Vec<f64> {
        let cov = self.covariance();
        (0..self.dim()).map(|i| cov[(i, i)].sqrt()).collect()
    }

    /// `mean + L⁻ᵀ ε`.
    pub fn sample(&self, eps: &[f64]) -> Vec<f64> {
        let x =
            solve_triangular(&self.chol, eps, TriangularMode::LowerTransposed).expect("eps has posterior dimension");
        self.mean.iter().zip(x).map(|(m, v)| m + v).collect()
    }

    pub fn log_density(&self, beta: &[f64]) -> f64 {
        let diff: Vec<f64> = beta.iter().zip(&self.mean).map(|(b, m)| b - m).collect();
        let z = self.chol.t_matvec(&diff);
        self.chol.log_diag_sum() - 0.5 * self.dim() as f64 * LN_2PI - 0.5 * dot(&z, &z)
    }

    /// Marginal distribution of the leading `k` coordinates.
    pub fn leading_marginal(&self, k: usize) -> Result<Self, VariationalError> {
        if k == self.dim() {
            return Ok(self.clone());
        }
        let cov = self.covariance();
        let mut sub = Matrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                sub[(i, j)] = cov[(i, j)];
            }
        }
        let lc = cholesky(&sub.symmetrized()).map_err(ill_posed)?;
        let precision = crate::linalg::solve_lower_matrix(&lc, &Matrix::identity(k), TriangularMode::Lower);
        let precision = precision.transpose().matmul(&precision);
        Self::from_precision(self.mean[..k].to_vec(), &precision.symmetrized())
    }
}

pub fn sample_gaussian(post: &GaussianPosterior, eps: &[f64]) -> Vec<f64> {
    post.sample(eps)
}

pub fn log_density_gaussian(post: &GaussianPosterior, beta: &[f64]) -> f64 {
    post.log_density(beta)
}

/// Independent normals on the `τ` scale (log-normal on `λ²`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauVariational {
    pub m: Vec<f64>,
    pub log_s: Vec<f64>,
}

impl TauVariational {
    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn sample(&self, eps: &[f64]) -> Vec<f64> {
        self.m.iter().zip(&self.log_s).zip(eps).map(|((m, ls), e)| m + ls.exp() * e).collect()
    }

    pub fn log_density(&self, tau: &[f64]) -> f64 {
        self.m
            .iter()
            .zip(&self.log_s)
            .zip(tau)
            .map(|((m, ls), t)| {
                let z = (t - m) * (-ls).exp();
                -0.5 * LN_2PI - ls - 0.5 * z * z
            })
            .sum()
    }
}

pub fn sample_tau(tv: &TauVariational, eps: &[f64]) -> Vec<f64> {
    tv.sample(eps)
}

pub fn log_density_tau(tv: &TauVariational, tau: &[f64]) -> f64 {
    tv.log_density(tau)
}

/// Which variational family approximates the coefficient posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// Per-observation mean and Cholesky factor over all predictors.
    LocalFull,
    /// Per-observation, per-term scalar parameters; block-diagonal precision.
    LocalBd,
    /// `LocalBd` plus a learned global mean shift and triangular correction.
    LocalBdCorr,
    /// A single Gaussian over the coefficients.
    Classic,
    /// A single Gaussian over coefficients and log smoothing parameters.
    ClassicJoint,
}

impl FamilyKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::LocalFull => "local",
            Self::LocalBd => "local_bd",
            Self::LocalBdCorr => "local_bd_corr",
            Self::Classic => "classic",
            Self::ClassicJoint => "classic_joint",
        }
    }

    /// Whether the assembled posterior depends on `τ`.
    pub fn depends_on_tau(&self) -> bool {
        matches!(self, Self::LocalFull | Self::LocalBd | Self::LocalBdCorr)
    }
}

/// Per observation: `μᵢ ∈ Rᴾ` followed by the log-Cholesky vector `lᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFullState {
    pub n: usize,
    pub p: usize,
    pub values: Vec<f64>,
}

impl LocalFullState {
    pub fn stride(&self) -> usize {
        self.p + packed_len(self.p)
    }

    pub fn mu(&self, i: usize) -> &[f64] {
        let s = i * self.stride();
        &self.values[s..s + self.p]
    }

    pub fn l(&self, i: usize) -> &[f64] {
        let s = i * self.stride() + self.p;
        &self.values[s..s + packed_len(self.p)]
    }

    pub fn l_factor(&self, i: usize) -> LowerTriangular {
        expand_slice(self.p, self.l(i))
    }
}

/// Per observation and term: a mean and a log standard deviation, stored as
/// `[μ (N·B) | log σ (N·B) | β_c (Q) | L_c strict lower | d_c (Q)]`; the last
/// three parts exist only when the correction is enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBdState {
    pub n: usize,
    pub n_blocks: usize,
    pub q: usize,
    pub correction: bool,
    pub values: Vec<f64>,
}

impl LocalBdState {
    fn nb(&self) -> usize {
        self.n * self.n_blocks
    }

    pub fn mu(&self, i: usize, b: usize) -> f64 {
        self.values[i * self.n_blocks + b]
    }

    pub fn log_sigma(&self, i: usize, b: usize) -> f64 {
        self.values[self.nb() + i * self.n_blocks + b]
    }

    fn correction_offset(&self) -> usize {
        2 * self.nb()
    }

    pub fn beta_c(&self) -> Option<&[f64]> {
        self.correction.then(|| &self.values[self.correction_offset()..self.correction_offset() + self.q])
    }

    pub fn lc(&self) -> Option<&[f64]> {
        let s = self.correction_offset() + self.q;
        self.correction.then(|| &self.values[s..s + strict_len(self.q)])
    }

    pub fn d_c(&self) -> Option<&[f64]> {
        let s = self.correction_offset() + self.q + strict_len(self.q);
        self.correction.then(|| &self.values[s..s + self.q])
    }
}

fn strict_len(q: usize) -> usize {
    q * q.saturating_sub(1) / 2
}

fn strict_index(i: usize, j: usize) -> usize {
    debug_assert!(j < i);
    i * (i - 1) / 2 + j
}

/// Mean followed by the log-Cholesky vector of the precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicState {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl ClassicState {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, values: vec![0.0; dim + packed_len(dim)] }
    }

    pub fn mean(&self) -> &[f64] {
        &self.values[..self.dim]
    }

    pub fn l(&self) -> &[f64] {
        &self.values[self.dim..]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VariationalState {
    LocalFull(LocalFullState),
    LocalBd(LocalBdState),
    Classic(ClassicState),
    ClassicJoint(ClassicState),
}

impl VariationalState {
    /// Starting values: local means from the link-transformed response, unit
    /// local scales, zero corrections, and a standard normal for the classic
    /// families.
    pub fn initialize(kind: FamilyKind, model: &Model) -> Self {
        let n = model.n();
        let eta0 = model.initial_predictor();
        match kind {
            FamilyKind::LocalFull => {
                let p = model.n_params();
                let stride = p + packed_len(p);
                let mut values = vec![0.0; n * stride];
                for i in 0..n {
                    values[i * stride..i * stride + p].copy_from_slice(eta0.row(i));
                }
                Self::LocalFull(LocalFullState { n, p, values })
            }
            FamilyKind::LocalBd | FamilyKind::LocalBdCorr => {
                let nb = model.design.blocks.len();
                let q = model.q();
                let correction = kind == FamilyKind::LocalBdCorr;
                let extra = if correction { 2 * q + strict_len(q) } else { 0 };
                let mut values = vec![0.0; 2 * n * nb + extra];
                for i in 0..n {
                    for (b, block) in model.design.blocks.iter().enumerate() {
                        values[i * nb + b] = eta0[(i, block.param)];
                    }
                }
                Self::LocalBd(LocalBdState { n, n_blocks: nb, q, correction, values })
            }
            FamilyKind::Classic => Self::Classic(ClassicState::zeros(model.q())),
            FamilyKind::ClassicJoint => Self::ClassicJoint(ClassicState::zeros(model.q() + model.n_tau())),
        }
    }

    pub fn kind(&self) -> FamilyKind {
        match self {
            Self::LocalFull(_) => FamilyKind::LocalFull,
            Self::LocalBd(s) if s.correction => FamilyKind::LocalBdCorr,
            Self::LocalBd(_) => FamilyKind::LocalBd,
            Self::Classic(_) => FamilyKind::Classic,
            Self::ClassicJoint(_) => FamilyKind::ClassicJoint,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Self::LocalFull(s) => &s.values,
            Self::LocalBd(s) => &s.values,
            Self::Classic(s) | Self::ClassicJoint(s) => &s.values,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Self::LocalFull(s) => &mut s.values,
            Self::LocalBd(s) => &mut s.values,
            Self::Classic(s) | Self::ClassicJoint(s) => &mut s.values,
        }
    }

    pub fn n_params(&self) -> usize {
        self.params().len()
    }

    /// Assembles the Gaussian over `β` (or `(β, τ)` for the joint family).
    pub fn build(&self, tau: &[f64], model: &Model) -> Result<GaussianPosterior, VariationalError> {
        Ok(self.build_with_cache(tau, model)?.posterior)
    }

    pub(crate) fn build_with_cache(&self, tau: &[f64], model: &Model) -> Result<Built, VariationalError> {
        match self {
            Self::LocalFull(s) => {
                let (posterior, lambda_chol) = local_full_parts(s, tau, model)?;
                Ok(Built { posterior, blocks: Vec::new(), lambda_chol: Some(lambda_chol) })
            }
            Self::LocalBd(s) => local_bd_parts(s, tau, model),
            Self::Classic(s) | Self::ClassicJoint(s) => {
                Ok(Built { posterior: build_classic(s), blocks: Vec::new(), lambda_chol: None })
            }
        }
    }
}

/// Intermediate values kept for the reverse pass.
pub(crate) struct Built {
    pub posterior: GaussianPosterior,
    /// Per term: Cholesky factor of the block precision and the block mean.
    blocks: Vec<(LowerTriangular, Vec<f64>)>,
    lambda_chol: Option<LowerTriangular>,
}

/// Accumulates `Σᵢ Xᵢᵀ Wᵢ Xᵢ` and `Σᵢ Xᵢᵀ Wᵢ μᵢ` over observations.
fn local_full_normal_equations(s: &LocalFullState, model: &Model) -> (Matrix, Vec<f64>) {
    let q = model.q();
    let params = &model.design.params;
    let mut lambda = Matrix::zeros(q, q);
    let mut rhs = vec![0.0; q];
    for i in 0..s.n {
        let w = s.l_factor(i).gram();
        let wmu = w.matvec(s.mu(i));
        for (a, pa) in params.iter().enumerate() {
            let xa = pa.x.row(i);
            for (k, &xv) in xa.iter().enumerate() {
                rhs[pa.offset + k] += wmu[a] * xv;
            }
            for (b, pb) in params.iter().enumerate() {
                let wab = w[(a, b)];
                if wab == 0.0 {
                    continue;
                }
                let xb = pb.x.row(i);
                for (k, &xak) in xa.iter().enumerate() {
                    let row = lambda.row_mut(pa.offset + k);
                    let scale = wab * xak;
                    for (m, &xbm) in xb.iter().enumerate() {
                        row[pb.offset + m] += scale * xbm;
                    }
                }
            }
        }
    }
    (lambda, rhs)
}

fn local_full_parts(
    s: &LocalFullState,
    tau: &[f64],
    model: &Model,
) -> Result<(GaussianPosterior, LowerTriangular), VariationalError> {
    let (mut lambda, rhs) = local_full_normal_equations(s, model);
    lambda.add_assign_scaled(&model.prior_precision(tau), 1.0);
    let chol = cholesky(&lambda.symmetrized()).map_err(ill_posed)?;
    let mean = cholesky_solve(&chol, &rhs)?;
    Ok((GaussianPosterior::new(mean, chol.clone())?, chol))
}

/// `Λ = Σᵢ XᵢᵀLᵢLᵢᵀXᵢ + K_λ`, `β̃ = Λ⁻¹ Σᵢ XᵢᵀLᵢLᵢᵀμᵢ`.
pub fn build_local_full(
    state: &LocalFullState,
    tau: &[f64],
    model: &Model,
) -> Result<GaussianPosterior, VariationalError> {
    Ok(local_full_parts(state, tau, model)?.0)
}

fn local_bd_parts(s: &LocalBdState, tau: &[f64], model: &Model) -> Result<Built, VariationalError> {
    let q = model.q();
    let mut mean = vec![0.0; q];
    let mut l = LowerTriangular::zeros(q);
    let mut blocks = Vec::with_capacity(s.n_blocks);
    for (b, block) in model.design.blocks.iter().enumerate() {
        let w = block.width();
        let mut lambda = Matrix::zeros(w, w);
        let mut rhs = vec![0.0; w];
        for i in 0..s.n {
            let prec = (-2.0 * s.log_sigma(i, b)).exp();
            let x = block.x.row(i);
            let mu = s.mu(i, b);
            for a in 0..w {
                rhs[a] += prec * mu * x[a];
                let row = lambda.row_mut(a);
                for c in 0..w {
                    row[c] += prec * x[a] * x[c];
                }
            }
        }
        if let Some(t) = block.tau_index {
            lambda.add_assign_scaled(&block.k, tau[t].exp());
        }
        let chol = cholesky(&lambda.symmetrized()).map_err(ill_posed)?;
        let bm = cholesky_solve(&chol, &rhs)?;
        let o = block.offset;
        mean[o..o + w].copy_from_slice(&bm);
        for a in 0..w {
            for c in 0..=a {
                l.set(o + a, o + c, chol.get(a, c));
            }
        }
        blocks.push((chol, bm));
    }
    if let (Some(bc), Some(lc), Some(dc)) = (s.beta_c(), s.lc(), s.d_c()) {
        for (m, c) in mean.iter_mut().zip(bc) {
            *m += c;
        }
        for i in 0..q {
            for j in 0..i {
                l.set(i, j, l.get(i, j) + lc[strict_index(i, j)]);
            }
            l.set(i, i, l.get(i, i) * dc[i].exp());
        }
    }
    Ok(Built { posterior: GaussianPosterior::new(mean, l)?, blocks, lambda_chol: None })
}

/// Block-diagonal assembly, optionally with the additive correction.
pub fn build_local_bd(state: &LocalBdState, tau: &[f64], model: &Model) -> Result<GaussianPosterior, VariationalError> {
    Ok(local_bd_parts(state, tau, model)?.posterior)
}

pub fn build_classic(state: &ClassicState) -> GaussianPosterior {
    let chol = log_chol_expand(&LogCholVector::new(state.dim, state.l().to_vec()).expect("length fixed by layout"));
    GaussianPosterior { mean: state.mean().to_vec(), chol }
}

/// Splits a joint draw `γ = (β, τ)`.
pub fn split_joint(gamma: &[f64], q: usize) -> (&[f64], &[f64]) {
    gamma.split_at(q)
}

/// `Σ_{ab} G[o+a, o+b] K[a, b]` for a block at offset `o`.
fn block_frobenius(g: &Matrix, o: usize, k: &Matrix) -> f64 {
    let w = k.rows();
    let mut s = 0.0;
    for a in 0..w {
        for c in 0..w {
            s += g[(o + a, o + c)] * k[(a, c)];
        }
    }
    s
}

/// Adjoint of `(Λ, b) ↦ (chol Λ, Λ⁻¹ b)`: returns `(G, v)` with `G` the
/// symmetric adjoint of `Λ` and `v` the adjoint of `b`.
fn solve_adjoint(
    chol: &LowerTriangular,
    mean: &[f64],
    mean_bar: &[f64],
    chol_bar: &Matrix,
) -> Result<(Matrix, Vec<f64>), VariationalError> {
    let mut g = cholesky_adjoint(chol, chol_bar);
    let v = cholesky_solve(chol, mean_bar)?;
    let n = mean.len();
    for i in 0..n {
        for j in 0..n {
            g[(i, j)] -= 0.5 * (v[i] * mean[j] + v[j] * mean[i]);
        }
    }
    Ok((g, v))
}

impl VariationalState {
    /// Propagates adjoints of the posterior mean and Cholesky factor back to
    /// the free parameters (`grad`) and to `τ` (`grad_tau`), accumulating.
    pub(crate) fn backward(
        &self,
        built: &Built,
        tau: &[f64],
        model: &Model,
        mean_bar: &[f64],
        chol_bar: &Matrix,
        grad: &mut [f64],
        grad_tau: &mut [f64],
    ) -> Result<(), VariationalError> {
        match self {
            Self::Classic(s) | Self::ClassicJoint(s) => {
                let d = s.dim;
                for (g, m) in grad[..d].iter_mut().zip(mean_bar) {
                    *g += m;
                }
                let chol = &built.posterior.chol;
                let gl = &mut grad[d..];
                for i in 0..d {
                    for j in 0..i {
                        gl[packed_index(i, j)] += chol_bar[(i, j)];
                    }
                    gl[packed_index(i, i)] += chol_bar[(i, i)] * chol.get(i, i);
                }
                Ok(())
            }
            Self::LocalFull(s) => {
                let chol = built.lambda_chol.as_ref().expect("local build keeps its factor");
                let (g, v) = solve_adjoint(chol, &built.posterior.mean, mean_bar, chol_bar)?;
                for block in model.design.penalized_blocks() {
                    let t = block.tau_index.expect("penalized");
                    grad_tau[t] += tau[t].exp() * block_frobenius(&g, block.offset, &block.k);
                }
                local_full_backward(s, model, &g, &v, grad);
                Ok(())
            }
            Self::LocalBd(s) => local_bd_backward(s, built, tau, model, mean_bar, chol_bar, grad, grad_tau),
        }
    }
}

fn local_full_backward(s: &LocalFullState, model: &Model, g: &Matrix, v: &[f64], grad: &mut [f64]) {
    let p = s.p;
    let params = &model.design.params;
    let stride = s.stride();
    // G·x for each parameter's design row, reused across the P×P products.
    let mut gx = vec![vec![0.0; model.q()]; p];
    for i in 0..s.n {
        let l = s.l_factor(i);
        let w = l.gram();
        let mu = s.mu(i);
        let mut u = vec![0.0; p];
        for (b, pb) in params.iter().enumerate() {
            let xb = pb.x.row(i);
            u[b] = dot(xb, &v[pb.range()]);
            let col = &mut gx[b];
            for r in 0..model.q() {
                col[r] = dot(&g.row(r)[pb.range()], xb);
            }
        }
        // W̄ = X G Xᵀ + u μᵀ
        let mut w_bar = Matrix::zeros(p, p);
        for (a, pa) in params.iter().enumerate() {
            let xa = pa.x.row(i);
            for b in 0..p {
                w_bar[(a, b)] = dot(xa, &gx[b][pa.range()]) + u[a] * mu[b];
            }
        }
        let wu = w.matvec(&u);
        let out = &mut grad[i * stride..(i + 1) * stride];
        for a in 0..p {
            out[a] += wu[a];
        }
        // L̄ = lower((W̄ + W̄ᵀ) L)
        let lg = &mut out[p..];
        for r in 0..p {
            for c in 0..=r {
                let mut acc = 0.0;
                for k in c..p {
                    acc += (w_bar[(r, k)] + w_bar[(k, r)]) * l.get(k, c);
                }
                if r == c {
                    acc *= l.get(r, r);
                }
                lg[packed_index(r, c)] += acc;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn local_bd_backward(
    s: &LocalBdState,
    built: &Built,
    tau: &[f64],
    model: &Model,
    mean_bar: &[f64],
    chol_bar: &Matrix,
    grad: &mut [f64],
    grad_tau: &mut [f64],
) -> Result<(), VariationalError> {
    let q = s.q;
    let nb = s.nb();
    let m = &built.posterior.chol;
    // Adjoint of the uncorrected block-diagonal factor, diagonal entries only
    // rescaled when the correction is present.
    let dc = s.d_c();
    if dc.is_some() {
        let o = s.correction_offset();
        for k in 0..q {
            grad[o + k] += mean_bar[k];
        }
        let olc = o + q;
        for i in 0..q {
            for j in 0..i {
                grad[olc + strict_index(i, j)] += chol_bar[(i, j)];
            }
        }
        let odc = olc + strict_len(q);
        for k in 0..q {
            grad[odc + k] += chol_bar[(k, k)] * m.get(k, k);
        }
    }
    for (b, block) in model.design.blocks.iter().enumerate() {
        let (chol, bm) = &built.blocks[b];
        let w = block.width();
        let o = block.offset;
        let mut lb = Matrix::zeros(w, w);
        for a in 0..w {
            for c in 0..a {
                lb[(a, c)] = chol_bar[(o + a, o + c)];
            }
            let scale = dc.map_or(1.0, |d| d[o + a].exp());
            lb[(a, a)] = chol_bar[(o + a, o + a)] * scale;
        }
        let (g, v) = solve_adjoint(chol, bm, &mean_bar[o..o + w], &lb)?;
        if let Some(t) = block.tau_index {
            grad_tau[t] += tau[t].exp() * g.frobenius_dot(&block.k);
        }
        for i in 0..s.n {
            let x = block.x.row(i);
            let prec = (-2.0 * s.log_sigma(i, b)).exp();
            let xv = dot(x, &v);
            let gxv = g.matvec(x);
            let w_bar = dot(x, &gxv) + xv * s.mu(i, b);
            grad[i * s.n_blocks + b] += prec * xv;
            grad[nb + i * s.n_blocks + b] += -2.0 * prec * w_bar;
        }
    }
    Ok(())
}
