//! Small signal helpers: Gaussian smoothing of sampled sequences.

use crate::float::Float;

/// Normalized Gaussian kernel with standard deviation `sigma` (in samples),
/// truncated at four sigma. `sigma <= 0` yields the identity kernel.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let half = (4.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for w in &mut k {
        *w /= sum;
    }
    k
}

/// Convolves `data` with a Gaussian of standard deviation `sigma` samples,
/// reflecting at the boundaries (the edge sample is repeated: `dcba|abcd`).
///
/// The kernel has unit sum, so constants pass through unchanged and the
/// output never exceeds the input range.
pub fn gaussian_smooth<T: Float>(data: &[T], sigma: f64) -> Vec<T> {
    if sigma <= 0.0 || data.len() <= 1 {
        return data.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let half = (kernel.len() / 2) as i64;
    let n = data.len() as i64;
    let mut out = Vec::with_capacity(data.len());
    for i in 0..n {
        let mut acc = T::zero();
        for (k, w) in kernel.iter().enumerate() {
            let mut j = i + k as i64 - half;
            // Reflect as many times as needed; one pass suffices when the
            // kernel is shorter than the data.
            loop {
                if j < 0 {
                    j = -j - 1;
                } else if j >= n {
                    j = 2 * n - j - 1;
                } else {
                    break;
                }
            }
            acc += T::of(*w) * data[j as usize];
        }
        out.push(acc);
    }
    out
}
