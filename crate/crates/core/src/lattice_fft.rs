//! Multi-dimensional FFT on the periodic lattice `Z_N^d`, built from 1D passes.

use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Lazily planned forward transform of length `N`, shareable across threads.
#[derive(Clone, Default)]
pub struct FftCache(OnceLock<Arc<dyn Fft<f64>>>);

impl std::fmt::Debug for FftCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("FftCache")
    }
}

impl FftCache {
    fn get(&self, n: usize) -> &Arc<dyn Fft<f64>> {
        self.0.get_or_init(|| FftPlanner::new().plan_fft_forward(n))
    }
}

/// In-place forward DFT over every axis of a row-major `n^dim` array.
pub fn forward(data: &mut [Complex64], n: usize, dim: usize, cache: &FftCache) {
    let fft = cache.get(n);
    let total = data.len();
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..dim {
        let stride = n.pow((dim - 1 - axis) as u32);
        for start in 0..total {
            if !(start / stride).is_multiple_of(n) {
                continue;
            }
            for (i, v) in line.iter_mut().enumerate() {
                *v = data[start + i * stride];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for (i, v) in line.iter().enumerate() {
                data[start + i * stride] = *v;
            }
        }
    }
}

/// Forward DFT of a real array.
pub fn forward_real(values: &[f64], n: usize, dim: usize, cache: &FftCache) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    forward(&mut data, n, dim, cache);
    data
}
