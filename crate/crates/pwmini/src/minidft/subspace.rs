//! Subspace projection and the dense Rayleigh–Ritz step.
//!
//! Projections are computed in the row partition: each rank multiplies its
//! own strip of grid rows, and the small `m×m` results are summed with the
//! multistage allreduce.  Every element of the reduction is combined in the
//! same order on every rank, and the dense eigensolve runs on rank 0 with
//! the factors broadcast, so all ranks hold bitwise-identical subspace
//! results afterwards.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::collectives::{bcast, MultistageAllreduce};
use crate::error::{Error, Result};
use crate::layout::{col_to_row, DistMatrix, Layout};
use crate::transport::World;

fn local_view(m: &DistMatrix<Complex64>) -> DMatrix<Complex64> {
    DMatrix::from_column_slice(m.local_rows(), m.local_cols(), m.local())
}

fn require_row_block(m: &DistMatrix<Complex64>, what: &'static str) -> Result<()> {
    if m.layout() != Layout::RowBlock {
        return Err(Error::ShapeMismatch {
            what,
            detail: "expected a row-partitioned matrix".into(),
        });
    }
    Ok(())
}

/// Distributed `AᴴB·ΔV` of two row-partitioned matrices over the same grid.
/// The replicated result is bitwise identical on every rank.
pub fn gram(
    a: &DistMatrix<Complex64>,
    b: &DistMatrix<Complex64>,
    dv: f64,
    reducer: &MultistageAllreduce,
) -> Result<DMatrix<Complex64>> {
    require_row_block(a, "gram left factor")?;
    require_row_block(b, "gram right factor")?;
    if a.rows() != b.rows() {
        return Err(Error::ShapeMismatch {
            what: "gram factors",
            detail: format!("row counts differ: {} vs {}", a.rows(), b.rows()),
        });
    }
    let partial = local_view(a).adjoint() * local_view(b) * Complex64::new(dv, 0.0);
    let mut slab = Vec::with_capacity(2 * partial.len());
    for v in partial.iter() {
        slab.push(v.re);
        slab.push(v.im);
    }
    reducer.apply(&mut slab)?;
    let values: Vec<Complex64> = slab
        .chunks_exact(2)
        .map(|pair| Complex64::new(pair[0], pair[1]))
        .collect();
    Ok(DMatrix::from_vec(a.cols(), b.cols(), values))
}

/// Projects the Hamiltonian into the orbital subspace: `S = ΨᴴHΨ·ΔV`.
/// Takes the column-partitioned orbitals and their images, repartitions to
/// rows, and reduces the local products.
pub fn subspace_project(
    world: &World,
    psi: &DistMatrix<Complex64>,
    h_psi: &DistMatrix<Complex64>,
    dv: f64,
    reducer: &MultistageAllreduce,
) -> Result<DMatrix<Complex64>> {
    let psi_row = col_to_row(world, psi.clone())?;
    let h_row = col_to_row(world, h_psi.clone())?;
    gram(&psi_row, &h_row, dv, reducer)
}

fn hermiticity_gap(s: &DMatrix<Complex64>) -> f64 {
    let mut gap: f64 = 0.0;
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            gap = gap.max((s[(i, j)] - s[(j, i)].conj()).norm());
        }
    }
    gap
}

fn scale_of(s: &DMatrix<Complex64>) -> f64 {
    s.iter().map(|v| v.norm()).fold(1.0, f64::max)
}

/// Sorted Hermitian eigendecomposition, eigenvalues ascending.
fn sorted_eigen(s: DMatrix<Complex64>) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    let n = s.nrows();
    // Symmetrise first: the input is Hermitian up to reduction noise, and
    // the solver deserves an exactly Hermitian matrix.
    let sym = (&s + s.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("eigensolver produced non-finite values".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((lambda, vectors))
}

fn bcast_complex(world: &World, m: &mut DMatrix<Complex64>) -> Result<()> {
    let mut slab: Vec<Complex64> = m.as_slice().to_vec();
    bcast(world, 0, &mut slab)?;
    m.copy_from_slice(&slab);
    Ok(())
}

/// Dense eigensolve of the projected matrix: rank 0 solves, the sorted
/// eigenvalues and rotation are broadcast so every rank ends up with the
/// same bits.  Fails on non-Hermitian input.
pub fn rayleigh_ritz(
    world: &World,
    s: &DMatrix<Complex64>,
) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    if s.nrows() != s.ncols() {
        return Err(Error::ShapeMismatch {
            what: "rayleigh-ritz input",
            detail: format!("matrix is {}x{}", s.nrows(), s.ncols()),
        });
    }
    if hermiticity_gap(s) > 1e-8 * scale_of(s) {
        return Err(Error::Eigen(format!(
            "projected matrix is not Hermitian (gap {:.3e})",
            hermiticity_gap(s)
        )));
    }
    let n = s.nrows();
    let mut lambda = vec![0.0; n];
    let mut vectors = DMatrix::zeros(n, n);
    if world.rank() == 0 {
        let (l, u) = sorted_eigen(s.clone())?;
        lambda.copy_from_slice(&l);
        vectors = u;
    }
    bcast(world, 0, &mut lambda)?;
    bcast_complex(world, &mut vectors)?;
    Ok((lambda, vectors))
}

/// Lowest `take` eigenpairs of the pencil `A·c = λ·B·c` where `B` is the
/// (possibly nearly singular) overlap of a trial basis.  Directions of `B`
/// below `1e-12` of its largest eigenvalue are filtered out; if fewer than
/// `take` survive the trial basis has collapsed.  Rank 0 solves and the
/// result is broadcast.  Returns the ascending eigenvalues and the `n×take`
/// coefficient matrix `C` with `CᴴBC = I`.
pub fn generalized_lowest(
    world: &World,
    a: &DMatrix<Complex64>,
    b: &DMatrix<Complex64>,
    take: usize,
) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(Error::ShapeMismatch {
            what: "generalized eigenproblem",
            detail: format!(
                "A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            ),
        });
    }
    let gap = hermiticity_gap(a).max(hermiticity_gap(b));
    if gap > 1e-8 * scale_of(a).max(scale_of(b)) {
        return Err(Error::Eigen(format!(
            "pencil matrices are not Hermitian (gap {gap:.3e})"
        )));
    }
    let mut lambda = vec![0.0; take];
    let mut coeff = DMatrix::zeros(n, take);
    if world.rank() == 0 {
        let (d, q) = sorted_eigen(b.clone())?;
        let d_max = d.last().copied().unwrap_or(0.0);
        // The cutoff trades subspace size against conditioning: directions
        // below it would amplify the overlap's own rounding noise through
        // the 1/√d whitening more than they could help the solve.
        let cutoff = 1e-10 * d_max.max(f64::MIN_POSITIVE);
        let kept: Vec<usize> = (0..n).filter(|&j| d[j] > cutoff).collect();
        if kept.len() < take {
            return Err(Error::Numerics(format!(
                "trial basis collapsed: {} independent directions, need {take}",
                kept.len()
            )));
        }
        // Whitening transform T = Q_kept·diag(d^{-1/2}).
        let mut t = DMatrix::zeros(n, kept.len());
        for (dst, &src) in kept.iter().enumerate() {
            let scale = Complex64::new(1.0 / d[src].sqrt(), 0.0);
            t.set_column(dst, &(q.column(src) * scale));
        }
        let reduced = t.adjoint() * a * &t;
        let (l, u) = sorted_eigen(reduced)?;
        lambda.copy_from_slice(&l[..take]);
        coeff = &t * u.columns(0, take);
    }
    bcast(world, 0, &mut lambda)?;
    bcast_complex(world, &mut coeff)?;
    Ok((lambda, coeff))
}

/// Applies a replicated rotation to a row-partitioned matrix:
/// `M ← M·U` computed strip-locally.
pub fn rotate(
    world: &World,
    m: &DistMatrix<Complex64>,
    u: &DMatrix<Complex64>,
) -> Result<DistMatrix<Complex64>> {
    require_row_block(m, "rotation input")?;
    if u.nrows() != m.cols() {
        return Err(Error::ShapeMismatch {
            what: "rotation factor",
            detail: format!("matrix has {} columns, U has {} rows", m.cols(), u.nrows()),
        });
    }
    let product = local_view(m) * u;
    let mut out = DistMatrix::zeros(world, Layout::RowBlock, m.rows(), u.ncols());
    out.local_mut().copy_from_slice(product.as_slice());
    Ok(out)
}

/// Concatenates two row-partitioned matrices over the same grid into
/// `[A | B]`; purely local since both carry full rows of their strip.
pub fn concat_columns(
    world: &World,
    a: &DistMatrix<Complex64>,
    b: &DistMatrix<Complex64>,
) -> Result<DistMatrix<Complex64>> {
    require_row_block(a, "concat left")?;
    require_row_block(b, "concat right")?;
    if a.rows() != b.rows() {
        return Err(Error::ShapeMismatch {
            what: "concat inputs",
            detail: format!("row counts differ: {} vs {}", a.rows(), b.rows()),
        });
    }
    let mut out = DistMatrix::zeros(world, Layout::RowBlock, a.rows(), a.cols() + b.cols());
    let split = a.local().len();
    out.local_mut()[..split].copy_from_slice(a.local());
    out.local_mut()[split..].copy_from_slice(b.local());
    Ok(out)
}

/// Symmetric inverse square root `(overlap)^{-1/2}` computed on rank 0 and
/// broadcast; the Löwdin correction that restores orthonormality.  Fails
/// if the overlap is numerically rank deficient.
pub fn loewdin_transform(world: &World, overlap: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let n = overlap.nrows();
    let mut transform = DMatrix::zeros(n, n);
    if world.rank() == 0 {
        let (d, q) = sorted_eigen(overlap.clone())?;
        let d_max = d.last().copied().unwrap_or(0.0);
        if d.iter().any(|&x| x <= 1e-12 * d_max.max(f64::MIN_POSITIVE)) {
            return Err(Error::Numerics(
                "basis is numerically rank deficient; cannot orthonormalize".into(),
            ));
        }
        let mut scaled = q.clone();
        for (j, &dj) in d.iter().enumerate() {
            let s = Complex64::new(1.0 / dj.sqrt(), 0.0);
            scaled.set_column(j, &(q.column(j) * s));
        }
        transform = scaled * q.adjoint();
    }
    bcast_complex(world, &mut transform)?;
    Ok(transform)
}

/// Löwdin orthonormalization of a row-partitioned basis under the ΔV inner
/// product: `V ← V·(VᴴV·ΔV)^{-1/2}`.  Fails if the basis is numerically
/// rank-deficient.
pub fn orthonormalize(
    world: &World,
    v: &DistMatrix<Complex64>,
    dv: f64,
    reducer: &MultistageAllreduce,
) -> Result<DistMatrix<Complex64>> {
    let overlap = gram(v, v, dv, reducer)?;
    let transform = loewdin_transform(world, &overlap)?;
    rotate(world, v, &transform)
}
