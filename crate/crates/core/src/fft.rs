//! Unnormalized discrete Fourier transforms.
//!
//! Forward: `X[k] = sum_n x[n] exp(-2 pi i k n / N)`. Inverse uses the positive
//! exponent and divides by `N`. Power-of-two lengths use an iterative radix-2
//! Cooley-Tukey kernel; other lengths go through Bluestein's chirp-z
//! convolution on a padded power-of-two buffer.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

fn radix2_inplace(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let step = sign * 2.0 * PI / len as f64;
        let half = len / 2;
        // twiddles computed directly rather than by recurrence to keep error flat
        let tw: Vec<Complex64> = (0..half).map(|k| Complex64::from_polar(1.0, step * k as f64)).collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let u = buf[start + k];
                let v = buf[start + k + half] * tw[k];
                buf[start + k] = u + v;
                buf[start + k + half] = u - v;
            }
        }
        len <<= 1;
    }
}

fn bluestein(input: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = input.len();
    let m = (2 * n - 1).next_power_of_two();
    let sign = if inverse { 1.0 } else { -1.0 };
    // chirp w[k] = exp(sign * i pi k^2 / n); k^2 reduced mod 2n to keep the angle small
    let chirp: Vec<Complex64> = (0..n)
        .map(|k| {
            let k2 = ((k as u128 * k as u128) % (2 * n as u128)) as f64;
            Complex64::from_polar(1.0, sign * PI * k2 / n as f64)
        })
        .collect();
    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = input[k] * chirp[k];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        b[k] = chirp[k].conj();
        b[m - k] = chirp[k].conj();
    }
    radix2_inplace(&mut a, false);
    radix2_inplace(&mut b, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    radix2_inplace(&mut a, true);
    let scale = 1.0 / m as f64;
    (0..n).map(|k| a[k] * scale * chirp[k]).collect()
}

/// 1D transform of arbitrary length. The inverse includes the `1/N` factor.
pub fn fft(input: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = input.len();
    let mut out = if n.is_power_of_two() {
        let mut buf = input.to_vec();
        radix2_inplace(&mut buf, inverse);
        buf
    } else {
        bluestein(input, inverse)
    };
    if inverse && n > 0 {
        let s = 1.0 / n as f64;
        out.iter_mut().for_each(|v| *v *= s);
    }
    out
}

/// N-dimensional transform of a row-major array with the given dims.
pub fn fftn(data: &[Complex64], dims: &[usize], inverse: bool) -> Result<Vec<Complex64>> {
    let total: usize = dims.iter().product();
    if dims.is_empty() || total != data.len() || total == 0 {
        return Err(Error::invalid(format!("fftn: {} values for dims {dims:?}", data.len())));
    }
    let mut out = data.to_vec();
    for axis in 0..dims.len() {
        let n = dims[axis];
        if n == 1 {
            continue;
        }
        let stride: usize = dims[axis + 1..].iter().product();
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for base in 0..total {
            // visit each line once, from its first element
            if (base / stride) % n != 0 {
                continue;
            }
            for (i, slot) in line.iter_mut().enumerate() {
                *slot = out[base + i * stride];
            }
            let t = fft(&line, inverse);
            for (i, v) in t.into_iter().enumerate() {
                out[base + i * stride] = v;
            }
        }
    }
    Ok(out)
}

/// 2D transform of a row-major `rows x cols` array.
pub fn fft2(data: &[Complex64], rows: usize, cols: usize, inverse: bool) -> Result<Vec<Complex64>> {
    fftn(data, &[rows, cols], inverse)
}

/// Moves the zero-frequency bin to index `(rows/2, cols/2)`.
pub fn fftshift<T: Copy>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = data.to_vec();
    for r in 0..rows {
        for c in 0..cols {
            out[((r + rows / 2) % rows) * cols + (c + cols / 2) % cols] = data[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[Complex64], inverse: bool) -> Vec<Complex64> {
        let n = x.len();
        let sign = if inverse { 1.0 } else { -1.0 };
        (0..n)
            .map(|k| {
                let s: Complex64 = (0..n)
                    .map(|j| x[j] * Complex64::from_polar(1.0, sign * 2.0 * PI * (k * j) as f64 / n as f64))
                    .sum();
                if inverse { s / n as f64 } else { s }
            })
            .collect()
    }

    fn signal(n: usize) -> Vec<Complex64> {
        (0..n).map(|i| Complex64::new((i as f64 * 0.37).sin() + 0.1 * i as f64, (i as f64 * 1.3).cos())).collect()
    }

    #[test]
    fn matches_naive_dft_radix2_and_bluestein() {
        for n in [1, 2, 3, 5, 8, 12, 16, 17, 31, 64] {
            let x = signal(n);
            for inverse in [false, true] {
                let a = fft(&x, inverse);
                let b = naive(&x, inverse);
                for (p, q) in a.iter().zip(&b) {
                    assert!((p - q).norm() < 1e-9, "n={n} inverse={inverse}");
                }
            }
        }
    }

    #[test]
    fn roundtrip() {
        let x = signal(45);
        let y = fft(&fft(&x, false), true);
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn fftn_matches_separable_2d_naive() {
        let (r, c) = (6, 8);
        let x = signal(r * c);
        let got = fft2(&x, r, c, false).unwrap();
        for kr in 0..r {
            for kc in 0..c {
                let mut s = Complex64::new(0.0, 0.0);
                for i in 0..r {
                    for j in 0..c {
                        let ang = -2.0 * PI * ((kr * i) as f64 / r as f64 + (kc * j) as f64 / c as f64);
                        s += x[i * c + j] * Complex64::from_polar(1.0, ang);
                    }
                }
                assert!((s - got[kr * c + kc]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn shift_centers_dc() {
        let d: Vec<usize> = (0..12).collect();
        let s = fftshift(&d, 3, 4);
        assert_eq!(s[1 * 4 + 2], 0);
    }
}
