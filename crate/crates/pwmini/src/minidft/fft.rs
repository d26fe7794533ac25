//! Self-contained mixed-radix complex FFT.
//!
//! The plane-wave machinery only ever transforms box grids whose axis
//! lengths we choose ourselves, so there is no need for Bluestein or
//! split-radix heroics.  A recursive Cooley–Tukey decimation in time with a
//! generic prime butterfly handles any length; [`next_fft_friendly`] rounds
//! grid axes up until the largest prime factor is small (≤ 13), which keeps
//! the generic butterfly cheap.
//!
//! Conventions: the forward transform is unscaled,
//! `X[k] = Σ_t x[t]·e^{-2πi·kt/n}`, and the inverse carries the `1/n`
//! factor, so `inverse(forward(x)) == x` up to rounding.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest prime factor we consider "friendly"; the generic butterfly costs
/// O(p²) per stage, which is still negligible at this size.
pub const MAX_FRIENDLY_PRIME: u64 = 13;

fn smallest_prime_factor(n: usize) -> usize {
    if n % 2 == 0 {
        return 2;
    }
    let mut p = 3;
    while p * p <= n {
        if n % p == 0 {
            return p;
        }
        p += 2;
    }
    n
}

/// Largest prime factor of `n` (`n == 1` gives 1).
pub fn max_prime_factor(mut n: u64) -> u64 {
    let mut largest = 1;
    let mut p = 2;
    while p * p <= n {
        while n % p == 0 {
            largest = largest.max(p);
            n /= p;
        }
        p += 1;
    }
    largest.max(n.max(1))
}

/// Smallest `m >= n` whose prime factors are all `<= MAX_FRIENDLY_PRIME`.
pub fn next_fft_friendly(n: u64) -> u64 {
    let mut m = n.max(1);
    while max_prime_factor(m) > MAX_FRIENDLY_PRIME {
        m += 1;
    }
    m
}

/// In-place 1-D transform of `data`.
pub fn fft_in_place(data: &mut [Complex64], inverse: bool) {
    let n = data.len();
    if n <= 1 {
        return;
    }
    fft_rec(data, inverse);
    if inverse {
        let scale = 1.0 / n as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

fn fft_rec(data: &mut [Complex64], inverse: bool) {
    let n = data.len();
    if n == 1 {
        return;
    }
    let p = smallest_prime_factor(n);
    let m = n / p;
    if m == 1 {
        butterfly(data, &data.to_vec(), 1, inverse);
        return;
    }
    // Decimation in time: sub-sequence r holds the inputs at positions
    // r, r+p, r+2p, …; each is transformed recursively and the results are
    // recombined with the twiddle factors folded into the butterfly.
    let mut sub = vec![Complex64::ZERO; n];
    for r in 0..p {
        let lane = &mut sub[r * m..(r + 1) * m];
        for (t, slot) in lane.iter_mut().enumerate() {
            *slot = data[t * p + r];
        }
        fft_rec(lane, inverse);
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let step = sign * std::f64::consts::TAU / n as f64;
    for q in 0..m {
        for s in 0..p {
            let k = q + s * m;
            let mut acc = Complex64::ZERO;
            for r in 0..p {
                let phase = step * ((r * k) % n) as f64;
                acc += sub[r * m + q] * Complex64::from_polar(1.0, phase);
            }
            data[k] = acc;
        }
    }
}

/// Direct O(p²) transform used when the remaining length is a bare prime.
fn butterfly(out: &mut [Complex64], input: &[Complex64], stride: usize, inverse: bool) {
    let p = out.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let step = sign * std::f64::consts::TAU / p as f64;
    for (k, slot) in out.iter_mut().enumerate() {
        let mut acc = Complex64::ZERO;
        for r in 0..p {
            let phase = step * ((r * k) % p) as f64;
            acc += input[r * stride] * Complex64::from_polar(1.0, phase);
        }
        *slot = acc;
    }
}

/// In-place 3-D transform on an x-fastest box grid
/// (`idx = i + n0·(j + n1·k)`).
pub fn fft3d_in_place(data: &mut [Complex64], dims: [usize; 3], inverse: bool) -> Result<()> {
    let [n0, n1, n2] = dims;
    let total = n0 * n1 * n2;
    if data.len() != total {
        return Err(Error::LengthMismatch {
            what: "fft3d grid",
            expected: total,
            got: data.len(),
        });
    }
    if total == 0 {
        return Ok(());
    }
    // Axis 0: contiguous lines.
    for line in 0..n1 * n2 {
        fft_in_place(&mut data[line * n0..(line + 1) * n0], inverse);
    }
    // Axes 1 and 2: gather the strided line, transform, scatter back.
    let mut lane = vec![Complex64::ZERO; n1.max(n2)];
    for k in 0..n2 {
        for i in 0..n0 {
            let base = i + n0 * n1 * k;
            for j in 0..n1 {
                lane[j] = data[base + n0 * j];
            }
            fft_in_place(&mut lane[..n1], inverse);
            for j in 0..n1 {
                data[base + n0 * j] = lane[j];
            }
        }
    }
    for j in 0..n1 {
        for i in 0..n0 {
            let base = i + n0 * j;
            for k in 0..n2 {
                lane[k] = data[base + n0 * n1 * k];
            }
            fft_in_place(&mut lane[..n2], inverse);
            for k in 0..n2 {
                data[base + n0 * n1 * k] = lane[k];
            }
        }
    }
    Ok(())
}
