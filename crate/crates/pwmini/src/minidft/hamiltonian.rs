//! Application of the plane-wave Hamiltonian to column-partitioned orbitals.
//!
//! `Hψ = F⁻¹(½|G|²·Fψ) + V_loc·ψ + V_NL·ψ`: the kinetic term is diagonal
//! in reciprocal space, the local potential is diagonal on the grid, and
//! the non-local term streams pseudopotential shards around the ring.
//! Every rank owns whole columns, so the FFTs and the potential products
//! need no communication at all.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::layout::{DistMatrix, Layout};
use crate::minidft::fft::fft3d_in_place;
use crate::minidft::grid::PwGrid;
use crate::pseudo::{apply_vnl_distributed, AtomShard};
use crate::transport::World;

/// Everything fixed about `H` between diagonalization steps.  The grid and
/// the kinetic table outlive the SCF iteration; the local potential is
/// replaced after each density update.
pub struct Hamiltonian<'a> {
    grid: &'a PwGrid,
    half_g2: &'a [f64],
    v_loc: &'a [f64],
    shard: &'a AtomShard,
    window: usize,
}

impl<'a> Hamiltonian<'a> {
    pub fn new(
        grid: &'a PwGrid,
        half_g2: &'a [f64],
        v_loc: &'a [f64],
        shard: &'a AtomShard,
        window: usize,
    ) -> Result<Self> {
        if half_g2.len() != grid.n_points() {
            return Err(Error::LengthMismatch {
                what: "kinetic table",
                expected: grid.n_points(),
                got: half_g2.len(),
            });
        }
        if v_loc.len() != grid.n_points() {
            return Err(Error::LengthMismatch {
                what: "local potential",
                expected: grid.n_points(),
                got: v_loc.len(),
            });
        }
        Ok(Hamiltonian { grid, half_g2, v_loc, shard, window })
    }

    /// Applies `H` to every locally owned column.
    pub fn apply(
        &self,
        world: &World,
        psi: &DistMatrix<Complex64>,
    ) -> Result<DistMatrix<Complex64>> {
        if psi.layout() != Layout::ColumnBlock {
            return Err(Error::ShapeMismatch {
                what: "hamiltonian input",
                detail: "orbitals must be column partitioned".into(),
            });
        }
        if psi.rows() != self.grid.n_points() {
            return Err(Error::LengthMismatch {
                what: "orbital grid",
                expected: self.grid.n_points(),
                got: psi.rows(),
            });
        }
        // Non-local part first: it owns the ring traffic and internally
        // walks the same columns.
        let mut out = apply_vnl_distributed(world, psi, self.shard, self.window, self.grid.dv())?;
        let mut scratch = vec![Complex64::ZERO; self.grid.n_points()];
        for local_col in 0..psi.local_cols() {
            let column = psi.column(local_col);
            scratch.copy_from_slice(column);
            fft3d_in_place(&mut scratch, self.grid.dims(), false)?;
            for (value, &t) in scratch.iter_mut().zip(self.half_g2) {
                *value *= t;
            }
            fft3d_in_place(&mut scratch, self.grid.dims(), true)?;
            for (slot, (kinetic, (&v, amp))) in out
                .column_mut(local_col)
                .iter_mut()
                .zip(scratch.iter().zip(self.v_loc.iter().zip(column)))
            {
                *slot += kinetic + v * amp;
            }
        }
        Ok(out)
    }
}

/// Inverse-kinetic smoother used by the iterative eigensolver:
/// `ψ ← F⁻¹(Fψ / (½|G|² + 1))`.  Damps the high-G error components that
/// dominate the residual without touching the cheap low-G ones.
pub fn precondition(
    grid: &PwGrid,
    half_g2: &[f64],
    residual: &mut DistMatrix<Complex64>,
) -> Result<()> {
    if residual.layout() != Layout::ColumnBlock {
        return Err(Error::ShapeMismatch {
            what: "preconditioner input",
            detail: "residuals must be column partitioned".into(),
        });
    }
    if residual.rows() != grid.n_points() || half_g2.len() != grid.n_points() {
        return Err(Error::LengthMismatch {
            what: "residual grid",
            expected: grid.n_points(),
            got: residual.rows(),
        });
    }
    for local_col in 0..residual.local_cols() {
        let column = residual.column_mut(local_col);
        fft3d_in_place(column, grid.dims(), false)?;
        for (value, &t) in column.iter_mut().zip(half_g2) {
            *value /= t + 1.0;
        }
        fft3d_in_place(column, grid.dims(), true)?;
    }
    Ok(())
}
