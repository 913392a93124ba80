//! Unitary DFT helpers on top of `rustfft`.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place unitary DFT: `x <- F x` with `F[k, n] = exp(-j 2π k n / len) / sqrt(len)`.
pub fn fft_unitary(x: &mut [Complex64]) {
    transform(x, false);
}

/// In-place unitary inverse DFT: `x <- F^H x`.
pub fn ifft_unitary(x: &mut [Complex64]) {
    transform(x, true);
}

fn transform(x: &mut [Complex64], inverse: bool) {
    let len = x.len();
    if len <= 1 {
        return;
    }
    let fft = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    });
    fft.process(x);
    let scale = 1.0 / (len as f64).sqrt();
    for v in x.iter_mut() {
        *v *= scale;
    }
}

/// Entry `(k, n)` of the unitary DFT matrix of size `len`.
pub fn dft_entry(k: usize, n: usize, len: usize) -> Complex64 {
    let phase = -2.0 * std::f64::consts::PI * ((k * n) % len) as f64 / len as f64;
    Complex64::from_polar(1.0 / (len as f64).sqrt(), phase)
}

pub fn norm_sqr(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum()
}
