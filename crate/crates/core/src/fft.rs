//! Planned 2-D FFTs over row-major buffers.
//!
//! Transforms are unnormalized in both directions, so `inverse(forward(x)) = n1*n2*x`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub(crate) struct Fft2 {
    n1: usize,
    n2: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub(crate) fn new(n1: usize, n2: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n1,
            n2,
            row_fwd: planner.plan_fft_forward(n2),
            row_inv: planner.plan_fft_inverse(n2),
            col_fwd: planner.plan_fft_forward(n1),
            col_inv: planner.plan_fft_inverse(n1),
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub(crate) fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    pub(crate) fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_inv, &self.col_inv);
    }

    /// Inverse transform scaled by `1/(n1*n2)`.
    pub(crate) fn inverse_normalized(&self, data: &mut [Complex64]) {
        self.inverse(data);
        let s = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|z| *z *= s);
    }

    fn run(&self, data: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.len());
        let (n1, n2) = (self.n1, self.n2);
        SCRATCH.with(|cell| {
            let mut bufs = cell.borrow_mut();
            let (t, scratch) = &mut *bufs;
            let need = rows.get_inplace_scratch_len().max(cols.get_inplace_scratch_len());
            if scratch.len() < need {
                scratch.resize(need, Complex64::new(0.0, 0.0));
            }
            if n2 > 1 {
                rows.process_with_scratch(data, &mut scratch[..rows.get_inplace_scratch_len()]);
            }
            if n1 > 1 {
                t.resize(n1 * n2, Complex64::new(0.0, 0.0));
                transpose(data, t, n1, n2);
                cols.process_with_scratch(t, &mut scratch[..cols.get_inplace_scratch_len()]);
                transpose(t, data, n2, n1);
            }
        });
    }
}

thread_local! {
    /// Transpose buffer and FFT scratch, reused across calls on one thread.
    static SCRATCH: std::cell::RefCell<(Vec<Complex64>, Vec<Complex64>)> =
        const { std::cell::RefCell::new((Vec::new(), Vec::new())) };
}

/// `dst[c][r] = src[r][c]` for a row-major `rows x cols` source, in cache-sized tiles.
fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const TILE: usize = 16;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Places values given on a small grid of signed offsets into an `n1 x n2`
/// periodic buffer at `(l1 mod n1, l2 mod n2)`.
pub(crate) fn embed_periodic(
    n1: usize,
    n2: usize,
    entries: impl Iterator<Item = ((i64, i64), Complex64)>,
) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n1 * n2];
    for ((l1, l2), z) in entries {
        let r = l1.rem_euclid(n1 as i64) as usize;
        let c = l2.rem_euclid(n2 as i64) as usize;
        buf[r * n2 + c] += z;
    }
    buf
}
