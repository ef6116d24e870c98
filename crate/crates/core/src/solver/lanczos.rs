use nalgebra::DMatrix;

use super::{EigenPairs, LinearAction, LowRankOptions, RitzSet};
use crate::error::{MfpodError, Result};
use crate::snapshots::hstack;
use crate::space::{extend_orthonormal, orthonormal_columns, DEFAULT_DROP_TOL};

const MAX_BLOCK: usize = 32;

/// Block Lanczos with full reorthogonalization and Rayleigh–Ritz extraction.
///
/// The first block is taken from the orthonormalized seed; whenever the
/// Krylov recurrence loses rank the remaining seed columns are injected, so
/// a seed spanning the operator range guarantees every nonzero eigenvalue is
/// reachable.
pub(super) fn block_lanczos(
    action: &dyn LinearAction,
    init_block: &DMatrix<f64>,
    opts: &LowRankOptions,
) -> Result<EigenPairs> {
    let n = action.dim();
    let seed = orthonormal_columns(init_block, DEFAULT_DROP_TOL);
    if seed.ncols() == 0 {
        return Ok(EigenPairs {
            values: Vec::new(),
            vectors: DMatrix::zeros(n, 0),
            residuals: Vec::new(),
        });
    }
    let block_size = opts.want.clamp(1, MAX_BLOCK);
    let first = block_size.min(seed.ncols());
    let mut pending = first;
    let mut block = seed.columns(0, first).into_owned();
    let mut basis = DMatrix::zeros(n, 0);
    let mut image = DMatrix::zeros(n, 0);
    let mut last_residuals = Vec::new();

    for iter in 0..opts.max_iter {
        let ablock = action.apply_block(&block);
        basis = hstack(&[&basis, &block]);
        image = hstack(&[&image, &ablock]);

        let ritz = RitzSet::compute(&basis, &image)?;
        let picked = ritz.select(opts.want, opts.tol);
        let residuals = ritz.residuals(&picked);
        let bound = opts.residual_bound() * ritz.max_abs();
        let converged = residuals.iter().all(|&r| r <= bound);

        // Next block: new directions of A·block, topped up from the seed.
        let scale = ablock
            .column_iter()
            .map(|c| c.norm())
            .fold(0.0_f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut next = extend_orthonormal(&basis, &ablock, DEFAULT_DROP_TOL, scale);
        if next.ncols() > block_size {
            next = next.columns(0, block_size).into_owned();
        }
        while next.ncols() < block_size && pending < seed.ncols() {
            let take = (block_size - next.ncols()).min(seed.ncols() - pending);
            let fresh = seed.columns(pending, take).into_owned();
            pending += take;
            let against = hstack(&[&basis, &next]);
            let extra = extend_orthonormal(&against, &fresh, DEFAULT_DROP_TOL, 1.0);
            next = hstack(&[&next, &extra]);
        }
        let exhausted = next.ncols() == 0 || basis.ncols() >= n;

        if exhausted || (converged && picked.len() == opts.want) {
            if !converged {
                return Err(MfpodError::NotConverged {
                    iterations: iter + 1,
                    worst_residual: residuals.iter().cloned().fold(0.0, f64::max),
                    residuals,
                });
            }
            return Ok(ritz.extract(&picked));
        }
        if basis.ncols() + next.ncols() > n {
            let keep = n - basis.ncols();
            next = next.columns(0, keep).into_owned();
        }
        last_residuals = residuals;
        block = next;
    }
    Err(MfpodError::NotConverged {
        iterations: opts.max_iter,
        worst_residual: last_residuals.iter().cloned().fold(f64::INFINITY, f64::max),
        residuals: last_residuals,
    })
}
