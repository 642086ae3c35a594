//! Orthonormal 2-D DCT-II / DCT-III used by the watermarking layer.
//!
//! The transforms are separable: rows first, then columns. Scaling is
//! chosen so that `inverse_2d(forward_2d(x)) == x` and energy is
//! preserved (Parseval), which keeps the correlation arithmetic in the
//! detector well conditioned.

use std::cell::RefCell;
use std::sync::Arc;

use rustdct::{Dct2, Dct3, DctPlanner};

thread_local! {
    static PLANNER: RefCell<DctPlanner<f64>> = RefCell::new(DctPlanner::new());
}

fn plan_dct2(len: usize) -> Arc<dyn Dct2<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_dct2(len))
}

fn plan_dct3(len: usize) -> Arc<dyn Dct3<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_dct3(len))
}

/// Forward orthonormal DCT-II along each row of a `width x height`
/// row-major buffer, in place.
fn forward_rows(data: &mut [f64], width: usize) {
    let dct = plan_dct2(width);
    let mut scratch = vec![0.0; dct.get_scratch_len()];
    let s0 = (1.0 / width as f64).sqrt();
    let s = (2.0 / width as f64).sqrt();
    for row in data.chunks_exact_mut(width) {
        dct.process_dct2_with_scratch(row, &mut scratch);
        row[0] *= s0;
        for v in row.iter_mut().skip(1) {
            *v *= s;
        }
    }
}

/// Inverse of [`forward_rows`].
fn inverse_rows(data: &mut [f64], width: usize) {
    let dct = plan_dct3(width);
    let mut scratch = vec![0.0; dct.get_scratch_len()];
    let s0 = 2.0 / (width as f64).sqrt();
    let s = (2.0 / width as f64).sqrt();
    for row in data.chunks_exact_mut(width) {
        row[0] *= s0;
        for v in row.iter_mut().skip(1) {
            *v *= s;
        }
        dct.process_dct3_with_scratch(row, &mut scratch);
    }
}

fn transpose(src: &[f64], dst: &mut [f64], width: usize, height: usize) {
    for y in 0..height {
        for x in 0..width {
            dst[x * height + y] = src[y * width + x];
        }
    }
}

/// Full-frame orthonormal 2-D DCT-II of a row-major buffer.
pub fn forward_2d(pixels: &[f64], width: usize, height: usize) -> Vec<f64> {
    assert_eq!(pixels.len(), width * height);
    let mut data = pixels.to_vec();
    forward_rows(&mut data, width);
    let mut t = vec![0.0; data.len()];
    transpose(&data, &mut t, width, height);
    forward_rows(&mut t, height);
    transpose(&t, &mut data, height, width);
    data
}

/// Inverse of [`forward_2d`].
pub fn inverse_2d(coeffs: &[f64], width: usize, height: usize) -> Vec<f64> {
    assert_eq!(coeffs.len(), width * height);
    let mut t = vec![0.0; coeffs.len()];
    transpose(coeffs, &mut t, width, height);
    inverse_rows(&mut t, height);
    let mut data = vec![0.0; coeffs.len()];
    transpose(&t, &mut data, height, width);
    inverse_rows(&mut data, width);
    data
}
