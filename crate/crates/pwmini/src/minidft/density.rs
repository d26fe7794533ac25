//! Electron density and the local potentials built from it.
//!
//! Closed-shell occupation: the lowest `N_e/2` orbitals each carry two
//! electrons, so `ρ(r) = 2·Σ_j |ψ_j(r)|²`.  Each rank accumulates the
//! partial density of the columns it owns and the partials are summed with
//! an allreduce, leaving the full density replicated everywhere.

use num_complex::Complex64;

use crate::collectives::baseline_allreduce;
use crate::error::{Error, Result};
use crate::layout::{DistMatrix, Layout};
use crate::minidft::fft::fft3d_in_place;
use crate::minidft::grid::PwGrid;
use crate::pseudo::minimum_image;
use crate::transport::World;

/// One attractive Gaussian well of the external potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Well {
    pub center: [f64; 3],
    pub depth: f64,
    pub width: f64,
}

/// Replicated density from the occupied orbitals of a column-partitioned
/// wavefunction set.  `n_electrons` must be even and fit in the available
/// orbitals (`N_e ≤ 2·N_wf`).
pub fn compute_density(
    world: &World,
    psi: &DistMatrix<Complex64>,
    n_electrons: usize,
) -> Result<Vec<f64>> {
    if psi.layout() != Layout::ColumnBlock {
        return Err(Error::ShapeMismatch {
            what: "density input",
            detail: "wavefunctions must be column partitioned".into(),
        });
    }
    if n_electrons == 0 || n_electrons % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "electron count must be positive and even, got {n_electrons}"
        )));
    }
    let occupied = n_electrons / 2;
    if occupied > psi.cols() {
        return Err(Error::InvalidArgument(format!(
            "{n_electrons} electrons need {occupied} orbitals but only {} are present",
            psi.cols()
        )));
    }
    let mut rho = vec![0.0; psi.rows()];
    for (local_col, global_col) in psi.owned().enumerate() {
        if global_col >= occupied {
            break;
        }
        for (slot, amp) in rho.iter_mut().zip(psi.column(local_col)) {
            *slot += 2.0 * amp.norm_sqr();
        }
    }
    baseline_allreduce(world, &mut rho)?;
    Ok(rho)
}

/// Quadrature integral `Σ_r f(r)·ΔV`.
pub fn integrate(values: &[f64], dv: f64) -> f64 {
    values.iter().sum::<f64>() * dv
}

/// Hartree potential of a periodic density: `V_H(G) = 4π·ρ̂(G)/|G|²` with
/// the divergent G = 0 term dropped (neutralising background).
pub fn hartree_potential(grid: &PwGrid, rho: &[f64]) -> Result<Vec<f64>> {
    if rho.len() != grid.n_points() {
        return Err(Error::LengthMismatch {
            what: "density grid",
            expected: grid.n_points(),
            got: rho.len(),
        });
    }
    let mut spectrum: Vec<Complex64> =
        rho.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft3d_in_place(&mut spectrum, grid.dims(), false)?;
    for (value, half_g2) in spectrum.iter_mut().zip(grid.kinetic_spectrum()) {
        if half_g2 > 0.0 {
            // kinetic_spectrum stores ½|G|², so |G|² = 2·half_g2.
            *value *= 4.0 * std::f64::consts::PI / (2.0 * half_g2);
        } else {
            *value = Complex64::ZERO;
        }
    }
    fft3d_in_place(&mut spectrum, grid.dims(), true)?;
    // ρ is real, so the filtered spectrum stays conjugate-symmetric and the
    // imaginary parts are pure rounding noise.
    Ok(spectrum.into_iter().map(|v| v.re).collect())
}

/// External potential: a sum of attractive Gaussian wells with
/// minimum-image periodic distances.
pub fn external_potential(grid: &PwGrid, wells: &[Well]) -> Vec<f64> {
    let mut v = vec![0.0; grid.n_points()];
    for well in wells {
        let inv_two_w2 = 1.0 / (2.0 * well.width * well.width);
        for (flat, idx) in grid.indices() {
            let d = minimum_image(idx, grid.dims(), grid.lengths(), well.center);
            let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            v[flat] -= well.depth * (-r2 * inv_two_w2).exp();
        }
    }
    v
}
