//! Real/reciprocal-space box grid for the plane-wave basis.
//!
//! The grid is dense (no sphere truncation): every FFT point carries a
//! plane wave `e^{iG·r}` with `G = 2π·m/L` and the usual signed FFT
//! frequencies `m`.  Axis sizes come from the kinetic-energy cutoff via
//! `N_i = round(√(2·E_cut)·L_i/π)`, rounded up to an FFT-friendly length.

use crate::error::{Error, Result};
use crate::minidft::fft::next_fft_friendly;

/// Uniform box grid: cell edge lengths and points per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PwGrid {
    ecut: f64,
    lengths: [f64; 3],
    dims: [usize; 3],
}

impl PwGrid {
    /// Sizes each axis from the cutoff: `N_i = round(√(2·E_cut)·L_i/π)`,
    /// then rounds up to the next FFT-friendly length (never below 1).
    pub fn from_ecut(ecut: f64, lengths: [f64; 3]) -> Result<Self> {
        if !(ecut > 0.0) || !ecut.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "cutoff must be positive and finite, got {ecut}"
            )));
        }
        Self::check_lengths(lengths)?;
        let mut dims = [0usize; 3];
        for (axis, slot) in dims.iter_mut().enumerate() {
            let raw = ((2.0 * ecut).sqrt() * lengths[axis] / std::f64::consts::PI).round();
            *slot = next_fft_friendly(raw.max(1.0) as u64) as usize;
        }
        Ok(Self { ecut, lengths, dims })
    }

    /// Builds a grid with explicit axis sizes.  The stored cutoff is the
    /// largest one fully resolved on every axis, `min_i ½(π·N_i/L_i)²`.
    pub fn from_dims(dims: [usize; 3], lengths: [f64; 3]) -> Result<Self> {
        Self::check_lengths(lengths)?;
        if dims.iter().any(|&n| n == 0) {
            return Err(Error::InvalidArgument(format!(
                "grid dimensions must be positive, got {dims:?}"
            )));
        }
        let ecut = (0..3)
            .map(|i| {
                let g = std::f64::consts::PI * dims[i] as f64 / lengths[i];
                0.5 * g * g
            })
            .fold(f64::INFINITY, f64::min);
        Ok(Self { ecut, lengths, dims })
    }

    fn check_lengths(lengths: [f64; 3]) -> Result<()> {
        if lengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cell lengths must be positive and finite, got {lengths:?}"
            )));
        }
        Ok(())
    }

    pub fn ecut(&self) -> f64 {
        self.ecut
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.lengths
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Total number of grid points.
    pub fn n_points(&self) -> usize {
        self.dims.iter().product()
    }

    /// Cell volume Ω.
    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    /// Quadrature weight ΔV = Ω / N_r of one grid point.
    pub fn dv(&self) -> f64 {
        self.volume() / self.n_points() as f64
    }

    /// Signed FFT frequency for index `i` on an axis of length `n`.
    fn signed_freq(i: usize, n: usize) -> i64 {
        if i <= n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    /// Real-space position of grid point `(i, j, k)`.
    pub fn position(&self, idx: [usize; 3]) -> [f64; 3] {
        [
            self.lengths[0] * idx[0] as f64 / self.dims[0] as f64,
            self.lengths[1] * idx[1] as f64 / self.dims[1] as f64,
            self.lengths[2] * idx[2] as f64 / self.dims[2] as f64,
        ]
    }

    /// Reciprocal vector G at grid point `(i, j, k)` of the spectrum.
    pub fn g_vector(&self, idx: [usize; 3]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for axis in 0..3 {
            let m = Self::signed_freq(idx[axis], self.dims[axis]);
            g[axis] = std::f64::consts::TAU * m as f64 / self.lengths[axis];
        }
        g
    }

    /// Flat x-fastest index of `(i, j, k)`.
    pub fn flat(&self, idx: [usize; 3]) -> usize {
        idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])
    }

    /// `½|G|²` for every spectral point, in x-fastest flat order.  This is
    /// the kinetic operator in the plane-wave basis.
    pub fn kinetic_spectrum(&self) -> Vec<f64> {
        let [n0, n1, n2] = self.dims;
        let mut table = Vec::with_capacity(self.n_points());
        for k in 0..n2 {
            for j in 0..n1 {
                for i in 0..n0 {
                    let g = self.g_vector([i, j, k]);
                    table.push(0.5 * (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]));
                }
            }
        }
        table
    }

    /// Visits every grid point as `(flat, [i, j, k])` in flat order.
    pub fn indices(&self) -> impl Iterator<Item = (usize, [usize; 3])> + '_ {
        let [n0, n1, n2] = self.dims;
        (0..n2).flat_map(move |k| {
            (0..n1).flat_map(move |j| {
                (0..n0).map(move |i| (i + n0 * (j + n1 * k), [i, j, k]))
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn unit_cell_at_minimal_cutoff_needs_one_point() {
        let grid = PwGrid::from_ecut(PI * PI / 2.0, [1.0, 1.0, 1.0]).unwrap();
        assert_eq!(grid.dims(), [1, 1, 1]);
        assert_eq!(grid.n_points(), 1);
    }

    #[test]
    fn cubic_cell_sizing_fixed_point() {
        // √(2·5) = √10 cancels the cell factor, leaving N = 84 per axis.
        let edge = 84.0 * PI / 10f64.sqrt();
        let grid = PwGrid::from_ecut(5.0, [edge; 3]).unwrap();
        assert_eq!(grid.dims(), [84, 84, 84]);
        assert_eq!(grid.n_points(), 592_704);
    }

    #[test]
    fn elongated_cell_sizing_fixed_point() {
        let unit = PI / 10f64.sqrt();
        let grid = PwGrid::from_ecut(5.0, [88.0 * unit, 88.0 * unit, 176.0 * unit]).unwrap();
        assert_eq!(grid.dims(), [88, 88, 176]);
        assert_eq!(grid.n_points(), 1_362_944);
    }

    #[test]
    fn awkward_axis_rounds_up_to_friendly_length() {
        // √(2·8) = 4, L = 17π/4 per axis ⇒ raw N = 17, bumped to 18 = 2·3².
        let grid = PwGrid::from_ecut(8.0, [17.0 * PI / 4.0; 3]).unwrap();
        assert_eq!(grid.dims(), [18, 18, 18]);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(PwGrid::from_ecut(0.0, [1.0; 3]).is_err());
        assert!(PwGrid::from_ecut(-1.0, [1.0; 3]).is_err());
        assert!(PwGrid::from_ecut(1.0, [1.0, 0.0, 1.0]).is_err());
        assert!(PwGrid::from_dims([4, 0, 4], [1.0; 3]).is_err());
        assert!(PwGrid::from_dims([4, 4, 4], [1.0, -2.0, 1.0]).is_err());
    }

    #[test]
    fn quadrature_weight_matches_volume() {
        let grid = PwGrid::from_dims([4, 5, 6], [2.0, 3.0, 4.0]).unwrap();
        assert_eq!(grid.volume(), 24.0);
        assert!((grid.dv() - 24.0 / 120.0).abs() < 1e-15);
    }

    #[test]
    fn frequencies_follow_fft_layout() {
        let grid = PwGrid::from_dims([4, 4, 4], [2.0 * PI, 2.0 * PI, 2.0 * PI]).unwrap();
        // With L = 2π the G components are exactly the signed frequencies.
        assert_eq!(grid.g_vector([0, 0, 0]), [0.0, 0.0, 0.0]);
        assert_eq!(grid.g_vector([1, 0, 0])[0], 1.0);
        assert_eq!(grid.g_vector([2, 0, 0])[0], 2.0); // Nyquist stays positive
        assert_eq!(grid.g_vector([3, 0, 0])[0], -1.0);
    }

    #[test]
    fn kinetic_table_matches_per_point_formula() {
        let grid = PwGrid::from_dims([3, 4, 5], [1.5, 2.5, 3.5]).unwrap();
        let table = grid.kinetic_spectrum();
        assert_eq!(table.len(), grid.n_points());
        for (flat, idx) in grid.indices() {
            let g = grid.g_vector(idx);
            let want = 0.5 * (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
            assert_eq!(table[flat], want);
            assert_eq!(grid.flat(idx), flat);
        }
    }

    #[test]
    fn derived_cutoff_is_resolved_on_every_axis() {
        let grid = PwGrid::from_dims([8, 12, 10], [3.0, 4.0, 5.0]).unwrap();
        for axis in 0..3 {
            let g = PI * grid.dims()[axis] as f64 / grid.lengths()[axis];
            assert!(grid.ecut() <= 0.5 * g * g + 1e-12);
        }
        // Re-deriving dims from the stored cutoff never shrinks an axis.
        let rebuilt = PwGrid::from_ecut(grid.ecut(), grid.lengths()).unwrap();
        for axis in 0..3 {
            assert!(rebuilt.dims()[axis] <= grid.dims()[axis]);
        }
    }
}
