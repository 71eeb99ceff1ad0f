//! Sparse linear algebra and the SOLVE step: CG and BiCGStab with Jacobi
//! preconditioning, Newton iteration for the semilinear problem, and shifted
//! inverse power iteration for the smallest generalized eigenpair.

use std::sync::Arc;

use thiserror::Error;

use crate::fem::{
    self, assemble_load_elem, assemble_mass, assemble_operator, apply_dirichlet, transfer,
    FeFunction, FeSpace, FemError,
};
use crate::problems::{ProblemSpec, ProblemVariant};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("{method} did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("CG breakdown: search direction with non-positive curvature")]
    CgBreakdown,
    #[error("BiCGStab breakdown (rho ~ 0)")]
    BicgstabBreakdown,
    #[error("Newton iteration diverged: residual would not decrease at the damping floor")]
    NewtonDiverged,
    #[error("Newton did not reach tolerance in {0} iterations")]
    NewtonMaxIterations(usize),
    #[error("inverse iteration did not converge in {0} outer iterations")]
    EigenMaxIterations(usize),
    #[error("problem variant {0:?} is not valid for this solve routine")]
    WrongVariant(ProblemVariant),
    #[error(transparent)]
    Fem(#[from] FemError),
}

/// Square sparse matrix in compressed-row form with sorted, unique columns.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from (row, col, value) triplets, summing duplicates in their
    /// original order so assembly stays bit-reproducible.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&k| (triplets[k].0, triplets[k].1));
        let mut row_offsets = vec![0usize; n + 1];
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for &k in &order {
            let (i, j, v) = triplets[k];
            debug_assert!(i < n && j < n);
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(j);
                values.push(v);
                row_offsets[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        Self { n, row_offsets, col_indices, values }
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, &t)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            out[i] = acc;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.matvec(x, &mut out);
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m = m.max((v - self.get(j, i)).abs());
            }
        }
        m
    }

    /// A + s·B entrywise (same dimension).
    pub fn add_scaled(&self, s: f64, other: &Self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                triplets.push((i, j, v));
            }
            for (j, v) in other.row(i) {
                triplets.push((i, j, s * v));
            }
        }
        Self::from_triplets(self.n, &triplets)
    }

    /// Submatrix over indices with keep[i] == true, in ascending order.
    pub fn restrict(&self, keep: &[bool]) -> (Self, Vec<usize>) {
        let kept: Vec<usize> = (0..self.n).filter(|&i| keep[i]).collect();
        let mut new_index = vec![usize::MAX; self.n];
        for (ni, &oi) in kept.iter().enumerate() {
            new_index[oi] = ni;
        }
        let mut triplets = Vec::new();
        for &i in &kept {
            for (j, v) in self.row(i) {
                if keep[j] {
                    triplets.push((new_index[i], new_index[j], v));
                }
            }
        }
        (Self::from_triplets(kept.len(), &triplets), kept)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KrylovMethod {
    Cg,
    BiCgStab,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub method: KrylovMethod,
    /// Relative residual tolerance.
    pub tol: f64,
    /// Defaults to 10·n when `None`.
    pub max_iterations: Option<usize>,
    pub jacobi: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: KrylovMethod::Cg,
            tol: 1e-10,
            max_iterations: None,
            jacobi: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct KrylovStats {
    pub iterations: usize,
    pub residual: f64,
}

fn jacobi_inverse(a: &SparseMatrix, enabled: bool) -> Vec<f64> {
    let mut d = a.diagonal();
    for v in &mut d {
        *v = if enabled && v.abs() > 0.0 { 1.0 / *v } else { 1.0 };
    }
    d
}

/// Preconditioned conjugate gradients. The matrix must be symmetric positive
/// definite; breakdown on indefinite systems is reported as an error.
pub fn cg(
    a: &SparseMatrix,
    rhs: &[f64],
    x0: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, KrylovStats), SolverError> {
    let n = a.dim();
    let max_it = cfg.max_iterations.unwrap_or(10 * n.max(1));
    let rhs_norm = norm2(rhs);
    let mut x = x0.to_vec();
    if rhs_norm == 0.0 {
        return Ok((vec![0.0; n], KrylovStats::default()));
    }
    let minv = jacobi_inverse(a, cfg.jacobi);
    let ax = a.apply(&x);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, v)| b - v).collect();
    let mut z: Vec<f64> = r.iter().zip(&minv).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = norm2(&r) / rhs_norm;
    let mut it = 0usize;
    while res > cfg.tol {
        if it >= max_it {
            return Err(SolverError::NoConvergence {
                method: "CG",
                iterations: it,
                residual: res,
            });
        }
        let ap = a.apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(SolverError::CgBreakdown);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm2(&r) / rhs_norm;
        for i in 0..n {
            z[i] = r[i] * minv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        it += 1;
    }
    Ok((x, KrylovStats { iterations: it, residual: res }))
}

/// Preconditioned BiCGStab for general square systems.
pub fn bicgstab(
    a: &SparseMatrix,
    rhs: &[f64],
    x0: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, KrylovStats), SolverError> {
    let n = a.dim();
    let max_it = cfg.max_iterations.unwrap_or(10 * n.max(1));
    let rhs_norm = norm2(rhs);
    if rhs_norm == 0.0 {
        return Ok((vec![0.0; n], KrylovStats::default()));
    }
    let minv = jacobi_inverse(a, cfg.jacobi);
    let mut x = x0.to_vec();
    let ax = a.apply(&x);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, v)| b - v).collect();
    let r0 = r.clone();
    let mut rho = 1.0f64;
    let mut alpha = 1.0f64;
    let mut omega = 1.0f64;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut res = norm2(&r) / rhs_norm;
    let mut it = 0usize;
    while res > cfg.tol {
        if it >= max_it {
            return Err(SolverError::NoConvergence {
                method: "BiCGStab",
                iterations: it,
                residual: res,
            });
        }
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < 1e-300 {
            return Err(SolverError::BicgstabBreakdown);
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let phat: Vec<f64> = p.iter().zip(&minv).map(|(p, m)| p * m).collect();
        a.matvec(&phat, &mut v);
        alpha = rho / dot(&r0, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(r, v)| r - alpha * v).collect();
        if norm2(&s) / rhs_norm <= cfg.tol {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            r = s;
            res = norm2(&r) / rhs_norm;
            it += 1;
            break;
        }
        let shat: Vec<f64> = s.iter().zip(&minv).map(|(s, m)| s * m).collect();
        let t = a.apply(&shat);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm2(&r) / rhs_norm;
        it += 1;
        if omega.abs() < 1e-300 {
            return Err(SolverError::BicgstabBreakdown);
        }
    }
    Ok((x, KrylovStats { iterations: it, residual: res }))
}

pub fn krylov_solve(
    a: &SparseMatrix,
    rhs: &[f64],
    x0: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, KrylovStats), SolverError> {
    match cfg.method {
        KrylovMethod::Cg => cg(a, rhs, x0, cfg),
        KrylovMethod::BiCgStab => bicgstab(a, rhs, x0, cfg),
    }
}

#[derive(Debug, Clone)]
pub struct NewtonConfig {
    /// Tolerance on the discrete ℓ² norm of the residual vector.
    pub tol: f64,
    pub max_iterations: usize,
    pub damping: f64,
    pub linear: SolverConfig,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iterations: 30,
            damping: 1.0,
            linear: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct NewtonStats {
    /// Residual norm before each step, plus the final norm.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub linear_iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EigenConfig {
    /// Convergence threshold on |λ update|.
    pub tol: f64,
    pub max_outer: usize,
    pub shift: f64,
    pub linear: SolverConfig,
}

impl Default for EigenConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_outer: 2000,
            shift: 0.0,
            linear: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EigenStats {
    pub outer_iterations: usize,
    pub linear_iterations: usize,
}

/// Initial guess for the linear system: the previous solution transferred to
/// the current space, with boundary dofs overwritten by the boundary data.
fn initial_guess(
    space: &Arc<FeSpace>,
    prev: Option<&FeFunction>,
    boundary_values: &[f64],
) -> Result<Vec<f64>, FemError> {
    let mut x0 = match prev {
        Some(p) => transfer(p, space)?.coeffs,
        None => vec![0.0; space.ndofs],
    };
    for i in 0..space.ndofs {
        if space.is_boundary[i] {
            x0[i] = boundary_values[i];
        }
    }
    Ok(x0)
}

/// SOLVE for the linear variants: assembles the operator, imposes Dirichlet
/// data by symmetric elimination and runs CG (symmetric) or BiCGStab.
pub fn solve_linear_problem(
    p: &ProblemSpec,
    space: &Arc<FeSpace>,
    prev: Option<&FeFunction>,
    cfg: &SolverConfig,
) -> Result<(FeFunction, KrylovStats), SolverError> {
    if !matches!(
        p.variant,
        ProblemVariant::BoundaryValue | ProblemVariant::Nonsymmetric
    ) {
        return Err(SolverError::WrongVariant(p.variant));
    }
    let coeffs = p.coefficients();
    let mat = assemble_operator(space, &coeffs)?;
    let mut rhs = assemble_load_elem(space, |e, x, y| coeffs.eval_f(e, x, y))?;
    let g = space.interpolate(|x, y| p.dirichlet(x, y));
    let mat = apply_dirichlet(&mat, &mut rhs, &space.is_boundary, &g.coeffs);
    let x0 = initial_guess(space, prev, &g.coeffs)?;
    let mut cfg = *cfg;
    cfg.method = if p.is_symmetric() {
        KrylovMethod::Cg
    } else {
        KrylovMethod::BiCgStab
    };
    let (x, stats) = krylov_solve(&mat, &rhs, &x0, &cfg)?;
    Ok((space.function_from(x)?, stats))
}

/// Newton iteration for −Δu + f(x,u) = 0 with homogeneous Dirichlet data.
pub fn solve_nonlinear_problem(
    p: &ProblemSpec,
    space: &Arc<FeSpace>,
    prev: Option<&FeFunction>,
    cfg: &NewtonConfig,
) -> Result<(FeFunction, NewtonStats), SolverError> {
    if p.variant != ProblemVariant::Nonlinear {
        return Err(SolverError::WrongVariant(p.variant));
    }
    let n = space.ndofs;
    let zero_bc = vec![0.0; n];
    let stiffness = assemble_operator(space, &fem::CoefficientField::laplace())?;
    let mut u = space.function_from(initial_guess(space, prev, &zero_bc)?)?;

    let residual = |u: &FeFunction| -> Result<Vec<f64>, SolverError> {
        let ku = stiffness.apply(&u.coeffs);
        let nl = assemble_load_elem(space, |e, x, y| p.nonlinearity(x, y, u.eval_on(e, x, y)))?;
        let mut r: Vec<f64> = ku.iter().zip(&nl).map(|(a, b)| a + b).collect();
        for i in 0..n {
            if space.is_boundary[i] {
                r[i] = 0.0;
            }
        }
        Ok(r)
    };

    let mut stats = NewtonStats::default();
    let mut r = residual(&u)?;
    let mut rnorm = norm2(&r);
    stats.residuals.push(rnorm);
    for _ in 0..cfg.max_iterations {
        if rnorm <= cfg.tol {
            return Ok((u, stats));
        }
        let jac_field = p.linearized_coefficients(&u);
        let jac = assemble_operator(space, &jac_field)?;
        let mut neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let jac = apply_dirichlet(&jac, &mut neg_r, &space.is_boundary, &zero_bc);
        let (delta, kstats) = cg(&jac, &neg_r, &vec![0.0; n], &cfg.linear)?;
        stats.linear_iterations += kstats.iterations;

        let mut t = cfg.damping;
        loop {
            let trial_coeffs: Vec<f64> =
                u.coeffs.iter().zip(&delta).map(|(a, d)| a + t * d).collect();
            let trial = space.function_from(trial_coeffs)?;
            let r_trial = residual(&trial)?;
            let rn_trial = norm2(&r_trial);
            if rn_trial < rnorm || rn_trial <= cfg.tol {
                u = trial;
                r = r_trial;
                rnorm = rn_trial;
                break;
            }
            t *= 0.5;
            if t < 2.0f64.powi(-12) {
                return Err(SolverError::NewtonDiverged);
            }
        }
        stats.iterations += 1;
        stats.residuals.push(rnorm);
    }
    if rnorm <= cfg.tol {
        Ok((u, stats))
    } else {
        Err(SolverError::NewtonMaxIterations(cfg.max_iterations))
    }
}

/// Smallest generalized eigenpair of (H, M) by inverse power iteration with a
/// fixed shift. `x0` is the starting vector (need not be normalized).
pub fn inverse_iteration(
    h: &SparseMatrix,
    m: &SparseMatrix,
    x0: &[f64],
    cfg: &EigenConfig,
) -> Result<(f64, Vec<f64>, EigenStats), SolverError> {
    let shifted = h.add_scaled(-cfg.shift, m);
    let mut stats = EigenStats::default();
    let mut x = x0.to_vec();
    let mnorm = |v: &[f64]| dot(v, &m.apply(v)).sqrt();
    let nx = mnorm(&x);
    debug_assert!(nx > 0.0);
    for v in &mut x {
        *v /= nx;
    }
    let mut lambda = dot(&x, &h.apply(&x)) / dot(&x, &m.apply(&x));
    for outer in 1..=cfg.max_outer {
        let rhs = m.apply(&x);
        let (y, kstats) = cg(&shifted, &rhs, &x, &cfg.linear)?;
        stats.linear_iterations += kstats.iterations;
        let ny = mnorm(&y);
        let xn: Vec<f64> = y.iter().map(|v| v / ny).collect();
        let lam = dot(&xn, &h.apply(&xn)) / dot(&xn, &m.apply(&xn));
        let delta = (lam - lambda).abs();
        x = xn;
        lambda = lam;
        stats.outer_iterations = outer;
        if delta <= cfg.tol {
            return Ok((lambda, x, stats));
        }
    }
    Err(SolverError::EigenMaxIterations(cfg.max_outer))
}

/// SOLVE for the eigenvalue variant: smallest eigenpair of
/// ½(∇u,∇v) + (Vu,v) = λ(u,v) with ‖u‖₀ = 1 and ∫u > 0.
pub fn solve_eigen_problem(
    p: &ProblemSpec,
    space: &Arc<FeSpace>,
    prev: Option<&FeFunction>,
    cfg: &EigenConfig,
) -> Result<(f64, FeFunction, EigenStats), SolverError> {
    if p.variant != ProblemVariant::Eigenvalue {
        return Err(SolverError::WrongVariant(p.variant));
    }
    let coeffs = p.coefficients();
    let h = assemble_operator(space, &coeffs)?;
    let m = assemble_mass(space);
    let interior: Vec<bool> = space.is_boundary.iter().map(|b| !b).collect();
    let (h_i, kept) = h.restrict(&interior);
    let (m_i, _) = m.restrict(&interior);

    let zero_bc = vec![0.0; space.ndofs];
    let full0 = initial_guess(space, prev, &zero_bc)?;
    let mut x0: Vec<f64> = kept.iter().map(|&i| full0[i]).collect();
    if norm2(&x0) == 0.0 {
        x0 = vec![1.0; kept.len()];
    }
    let mut cfg = *cfg;
    if cfg.shift == 0.0 {
        cfg.shift = p.eigen_shift();
    }
    let (lambda, xi, stats) = inverse_iteration(&h_i, &m_i, &x0, &cfg)?;

    let mut coeffs_full = vec![0.0; space.ndofs];
    for (ni, &oi) in kept.iter().enumerate() {
        coeffs_full[oi] = xi[ni];
    }
    let mut u = space.function_from(coeffs_full)?;
    // Mass normalization was done on the restricted vectors; fix the sign so
    // the trace is comparable across meshes.
    if u.integral() < 0.0 {
        for v in &mut u.coeffs {
            *v = -*v;
        }
    }
    Ok((lambda, u, stats))
}
