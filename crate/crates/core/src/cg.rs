//! Preconditioned conjugate gradients for `A_c x = b` with a partial
//! pivoted-Cholesky preconditioner.
//!
//! The preconditioner is `P = L_k L_kᵀ + D` where `L_k` is a rank-`k`
//! pivoted Cholesky factor of the kernel matrix and `D` the block's noise
//! plus jitter. `P⁻¹` is applied through the Woodbury identity, so each
//! application costs `O(n k)` after an `O(n k²)` setup.

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::gp::GpModel;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOptions {
    pub max_iterations: usize,
    /// Stop once `‖b − A x‖ / ‖b‖` falls below this.
    pub tolerance: f64,
    pub preconditioner_rank: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { max_iterations: 1000, tolerance: 1e-10, preconditioner_rank: 100 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Greedy pivoted Cholesky: `n × r` factor `L` with `K ≈ L Lᵀ`, `r ≤ max_rank`.
/// Stops early once the trace of the residual drops below `tol`.
pub fn pivoted_cholesky(
    diag: &[f64],
    column: impl Fn(usize) -> Vec<f64>,
    max_rank: usize,
    tol: f64,
) -> Mat<f64> {
    let n = diag.len();
    let max_rank = max_rank.min(n);
    let mut residual = diag.to_vec();
    let mut factor_cols: Vec<Vec<f64>> = Vec::with_capacity(max_rank);
    let mut used = vec![false; n];
    while factor_cols.len() < max_rank {
        let trace: f64 = residual.iter().zip(&used).filter(|(_, &u)| !u).map(|(r, _)| r).sum();
        if trace <= tol {
            break;
        }
        let (pivot, &best) = residual
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        if best <= 0.0 {
            break;
        }
        used[pivot] = true;
        let root = best.sqrt();
        let k_col = column(pivot);
        let mut l = vec![0.0; n];
        for i in 0..n {
            if used[i] && i != pivot {
                continue;
            }
            let prev: f64 = factor_cols.iter().map(|c| c[i] * c[pivot]).sum();
            l[i] = (k_col[i] - prev) / root;
        }
        l[pivot] = root;
        for i in 0..n {
            residual[i] -= l[i] * l[i];
        }
        residual[pivot] = 0.0;
        factor_cols.push(l);
    }
    Mat::from_fn(n, factor_cols.len(), |i, j| factor_cols[j][i])
}

/// `P⁻¹ = (L Lᵀ + D)⁻¹` via Woodbury.
pub struct WoodburyPreconditioner {
    low_rank: Mat<f64>,
    inv_diag: Vec<f64>,
    inner: Option<Llt<f64>>,
}

impl WoodburyPreconditioner {
    pub fn new(low_rank: Mat<f64>, diag: &[f64]) -> Result<Self> {
        let inv_diag: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();
        let k = low_rank.ncols();
        let inner = if k == 0 {
            None
        } else {
            // I + Lᵀ D⁻¹ L
            let scaled = Mat::from_fn(low_rank.nrows(), k, |i, j| low_rank[(i, j)] * inv_diag[i]);
            let mut c = low_rank.transpose() * &scaled;
            for i in 0..k {
                c[(i, i)] += 1.0;
            }
            Some(
                Llt::new(c.as_ref(), Side::Lower)
                    .map_err(|_| Error::NotPositiveDefinite { block: 0, jitter: 0.0 })?,
            )
        };
        Ok(Self { low_rank, inv_diag, inner })
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let dv: Vec<f64> = v.iter().zip(&self.inv_diag).map(|(a, b)| a * b).collect();
        let Some(inner) = &self.inner else { return dv };
        let n = dv.len();
        let dv_mat = Mat::from_fn(n, 1, |i, _| dv[i]);
        let proj = self.low_rank.transpose() * &dv_mat;
        let solved = inner.solve(proj);
        let back = &self.low_rank * &solved;
        (0..n).map(|i| dv[i] - self.inv_diag[i] * back[(i, 0)]).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Generic preconditioned CG from a zero initial guess.
pub fn pcg(
    matvec: impl Fn(&[f64]) -> Vec<f64>,
    precondition: impl Fn(&[f64]) -> Vec<f64>,
    rhs: &[f64],
    opts: &CgOptions,
) -> Result<CgSolution> {
    let n = rhs.len();
    let b_norm = dot(rhs, rhs).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(CgSolution { x, iterations: 0, relative_residual: 0.0 });
    }
    let mut r = rhs.to_vec();
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    for it in 1..=opts.max_iterations {
        let ap = matvec(&p);
        let step = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        rel = dot(&r, &r).sqrt() / b_norm;
        if rel <= opts.tolerance {
            return Ok(CgSolution { x, iterations: it, relative_residual: rel });
        }
        z = precondition(&r);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::CgNotConverged { iterations: opts.max_iterations, residual: rel })
}

impl GpModel {
    /// Solves `A_c x = rhs` iteratively, using only products with `A_c`.
    pub fn cg_solve(&self, block: usize, rhs: &[f64], opts: &CgOptions) -> Result<CgSolution> {
        let n = self.num_train();
        if rhs.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: rhs.len() });
        }
        if block >= self.num_outputs() {
            return Err(Error::InvalidArgument(format!("no output block {block}")));
        }
        let k = &self.kernel;
        let jitter = self.jitter(block);
        let noise: Vec<f64> = (0..n).map(|i| self.targets.sigma_dot[(i, block)] + jitter).collect();
        let diag: Vec<f64> = (0..n).map(|i| k[(i, i)]).collect();
        let low_rank = pivoted_cholesky(
            &diag,
            |j| (0..n).map(|i| k[(i, j)]).collect(),
            opts.preconditioner_rank,
            1e-12 * diag.iter().sum::<f64>(),
        );
        let pre = WoodburyPreconditioner::new(low_rank, &noise)?;
        let matvec = |v: &[f64]| -> Vec<f64> {
            let vm = Mat::from_fn(n, 1, |i, _| v[i]);
            let kv = k * &vm;
            (0..n).map(|i| kv[(i, 0)] + noise[i] * v[i]).collect()
        };
        pcg(matvec, |v| pre.apply(v), rhs, opts)
    }
}
