//! Normalized 1-D discrete Fourier transforms.
//!
//! Convention: `forward` returns `c_k = (1/n) sum_j f_j exp(-2 pi i j k / n)`,
//! so for midpoint samples of a periodic function the output approximates the
//! continuum coefficients `(1/L) integral f exp(-2 pi i k x / L) dx` up to a
//! cell-phase factor of unit modulus. `inverse` applies the unnormalized
//! synthesis `f_j = sum_k c_k exp(+2 pi i j k / n)`.

use crate::scalar::Scalar;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Cached forward and inverse plans for one transform size.
pub struct Spectral1d<T: Scalar + rustfft::FftNum> {
    n: usize,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
}

impl<T: Scalar + rustfft::FftNum> Spectral1d<T> {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "transform size must be positive");
        let mut planner = FftPlanner::new();
        Spectral1d {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Normalized coefficients of a real sample vector.
    pub fn forward(&self, real: &[T]) -> Vec<Complex<T>> {
        assert_eq!(real.len(), self.n);
        let mut buf: Vec<Complex<T>> =
            real.iter().map(|&x| Complex::new(x, T::zero())).collect();
        self.fwd.process(&mut buf);
        let scale = T::one() / T::real(self.n as f64);
        for c in &mut buf {
            *c = *c * scale;
        }
        buf
    }

    /// Normalized coefficients of a complex sample vector, in place.
    pub fn forward_complex(&self, buf: &mut [Complex<T>]) {
        assert_eq!(buf.len(), self.n);
        self.fwd.process(buf);
        let scale = T::one() / T::real(self.n as f64);
        for c in buf.iter_mut() {
            *c = *c * scale;
        }
    }

    /// Synthesis back to samples, in place (no further scaling).
    pub fn inverse_complex(&self, buf: &mut [Complex<T>]) {
        assert_eq!(buf.len(), self.n);
        self.inv.process(buf);
    }

    /// Synthesis of real samples from coefficients; imaginary parts are
    /// dropped, so the caller must pass Hermitian data.
    pub fn inverse_real(&self, coeffs: &[Complex<T>]) -> Vec<T> {
        assert_eq!(coeffs.len(), self.n);
        let mut buf = coeffs.to_vec();
        self.inv.process(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }
}

/// Signed integer frequency for FFT bin `j` of an `n`-point transform:
/// `0, 1, ..., n/2, -(n/2 - 1), ..., -1` (Nyquist kept positive).
pub fn signed_frequency(j: usize, n: usize) -> i64 {
    debug_assert!(j < n);
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Angular wavenumbers `2 pi k / period` in FFT bin order.
pub fn wavenumbers(n: usize, period: f64) -> Vec<f64> {
    (0..n)
        .map(|j| 2.0 * std::f64::consts::PI * signed_frequency(j, n) as f64 / period)
        .collect()
}
