//! Deterministic parallel reductions.
//!
//! Rayon's tree reductions change float summation order with work stealing.
//! Summing fixed-size chunks in parallel and folding the chunk results in
//! index order gives bit-identical results for any thread count.

use rayon::prelude::*;

const CHUNK: usize = 8192;

/// Sum of a slice with a fixed reduction order.
pub fn chunked_sum(values: &[f64]) -> f64 {
    if values.len() <= CHUNK {
        return values.iter().sum();
    }
    values
        .par_chunks(CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

/// Dot product with a fixed reduction order.
pub fn chunked_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() <= CHUNK {
        return a.iter().zip(b).map(|(x, y)| x * y).sum();
    }
    a.par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| x * y).sum::<f64>())
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

/// Sum of absolute differences with a fixed reduction order.
pub fn chunked_abs_diff_sum(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() <= CHUNK {
        return a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    }
    a.par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}
