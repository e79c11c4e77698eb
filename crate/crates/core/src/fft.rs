//! Thin helpers over `rustfft` with a per-thread planner cache.
//!
//! All transforms here are unnormalized; callers apply whatever scaling
//! their convention needs.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place unnormalized forward DFT (`e^{-j2πqk/n}` kernel).
pub fn forward(buf: &mut [Complex64]) {
    if buf.len() <= 1 {
        return;
    }
    PLANNER.with(|p| {
        let fft = p.borrow_mut().plan_fft_forward(buf.len());
        fft.process(buf);
    });
}

/// In-place unnormalized inverse DFT (`e^{+j2πqk/n}` kernel).
pub fn inverse(buf: &mut [Complex64]) {
    if buf.len() <= 1 {
        return;
    }
    PLANNER.with(|p| {
        let fft = p.borrow_mut().plan_fft_inverse(buf.len());
        fft.process(buf);
    });
}

pub(crate) fn scale(buf: &mut [Complex64], factor: f64) {
    for v in buf.iter_mut() {
        *v *= factor;
    }
}

/// Applies `op` to every column of a column-major `rows x cols` buffer.
pub(crate) fn along_columns(data: &mut [Complex64], rows: usize, op: fn(&mut [Complex64])) {
    for col in data.chunks_exact_mut(rows) {
        op(col);
    }
}

/// Applies `op` to every row of a column-major `rows x cols` buffer.
pub(crate) fn along_rows(data: &mut [Complex64], rows: usize, op: fn(&mut [Complex64])) {
    let cols = data.len() / rows;
    let mut tmp = vec![Complex64::default(); cols];
    for r in 0..rows {
        for (c, t) in tmp.iter_mut().enumerate() {
            *t = data[c * rows + r];
        }
        op(&mut tmp);
        for (c, t) in tmp.iter().enumerate() {
            data[c * rows + r] = *t;
        }
    }
}

/// Unnormalized 2D forward DFT of a column-major buffer.
pub fn forward_2d(data: &mut [Complex64], rows: usize) {
    along_columns(data, rows, forward);
    along_rows(data, rows, forward);
}

/// Unnormalized 2D inverse DFT of a column-major buffer.
pub fn inverse_2d(data: &mut [Complex64], rows: usize) {
    along_columns(data, rows, inverse);
    along_rows(data, rows, inverse);
}
