//! Fixed-point radix-2 decimation-in-time FFT on Q1.31 complex samples.
//!
//! Each of the log2(N) stages halves its butterfly outputs with an
//! arithmetic right shift, so the result equals the DFT scaled by 1/N.
//! Twiddle products are rounded half away from zero; butterfly outputs that
//! leave the Q1.31 range saturate.

use super::AccelError;
use num_complex::Complex;

pub type Q31 = i32;

pub const FFT_POINTS: usize = 512;

/// Converts a real in [-1, 1] to Q1.31, saturating at the top of the range.
pub fn q31_from_f64(v: f64) -> Q31 {
    let scaled = (v * 2f64.powi(31)).round();
    scaled.clamp(i32::MIN as f64, i32::MAX as f64) as i32
}

pub fn q31_to_f64(v: Q31) -> f64 {
    v as f64 / 2f64.powi(31)
}

/// `exp(-2πik/n)` for k in 0..n/2.
fn twiddles(n: usize) -> Vec<Complex<Q31>> {
    (0..n / 2)
        .map(|k| {
            let theta = -std::f64::consts::TAU * k as f64 / n as f64;
            Complex::new(q31_from_f64(theta.cos()), q31_from_f64(theta.sin()))
        })
        .collect()
}

/// `p / 2^31` rounded half away from zero.
#[inline]
fn round_shift31(p: i128) -> i64 {
    let half = 1i128 << 30;
    let mag = (p.abs() + half) >> 31;
    (if p < 0 { -mag } else { mag }) as i64
}

#[inline]
fn twiddle_mul(x: Complex<Q31>, w: Complex<Q31>) -> Complex<i64> {
    let (xr, xi) = (x.re as i128, x.im as i128);
    let (wr, wi) = (w.re as i128, w.im as i128);
    Complex::new(round_shift31(xr * wr - xi * wi), round_shift31(xr * wi + xi * wr))
}

#[inline]
fn halve_sat(v: i64) -> Q31 {
    (v >> 1).clamp(i32::MIN as i64, i32::MAX as i64) as i32
}

/// In-place scaled FFT; `data.len()` must be a power of two.
pub fn fft_radix2_q31(data: &mut [Complex<Q31>]) -> Result<(), AccelError> {
    let n = data.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(AccelError::ShapeMismatch(format!(
            "FFT length {n} is not a power of two"
        )));
    }
    let bits = n.trailing_zeros();
    if bits > 0 {
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if i < j {
                data.swap(i, j);
            }
        }
    }
    let tw = twiddles(n);
    let mut half = 1;
    while half < n {
        let stride = n / (2 * half);
        for start in (0..n).step_by(2 * half) {
            for k in 0..half {
                let u = data[start + k];
                let t = twiddle_mul(data[start + k + half], tw[k * stride]);
                let (ur, ui) = (u.re as i64, u.im as i64);
                data[start + k] = Complex::new(halve_sat(ur + t.re), halve_sat(ui + t.im));
                data[start + k + half] = Complex::new(halve_sat(ur - t.re), halve_sat(ui - t.im));
            }
        }
        half *= 2;
    }
    Ok(())
}

/// The 512-point kernel.
pub fn kernel_fft512_fxp(input: &[Complex<Q31>]) -> Result<Vec<Complex<Q31>>, AccelError> {
    if input.len() != FFT_POINTS {
        return Err(AccelError::ShapeMismatch(format!(
            "FFT kernel takes {FFT_POINTS} points, got {}",
            input.len()
        )));
    }
    let mut out = input.to_vec();
    fft_radix2_q31(&mut out)?;
    Ok(out)
}
