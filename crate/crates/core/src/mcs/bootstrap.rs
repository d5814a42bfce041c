use rand::Rng;

use super::McsError;

/// Block starts for one moving-block replicate of a length-`n` series.
/// `ceil(n / b)` uniform starts in `[0, n - b]`.
pub fn block_starts<R: Rng + ?Sized>(n: usize, b: usize, rng: &mut R) -> Result<Vec<usize>, McsError> {
    if b == 0 || b > n {
        return Err(McsError::Contract(format!("block size {b} must lie in 1..={n}")));
    }
    Ok((0..n.div_ceil(b)).map(|_| rng.gen_range(0..=n - b)).collect())
}

/// Overlapping moving-block resample of `0..n`, truncated to length `n`.
pub fn block_bootstrap_indices<R: Rng + ?Sized>(n: usize, b: usize, rng: &mut R) -> Result<Vec<usize>, McsError> {
    let starts = block_starts(n, b, rng)?;
    Ok(starts.iter().flat_map(|&s| s..s + b).take(n).collect())
}

/// Running sums with a leading zero, so `p[j] - p[i]` sums `x[i..j]`.
pub(crate) fn prefix_sums(x: &[f64]) -> Vec<f64> {
    let mut p = Vec::with_capacity(x.len() + 1);
    let mut acc = 0.0;
    p.push(0.0);
    for v in x {
        acc += v;
        p.push(acc);
    }
    p
}

/// Mean of the resample described by `starts` (last block truncated).
pub(crate) fn resampled_mean(prefix: &[f64], starts: &[usize], b: usize) -> f64 {
    let n = prefix.len() - 1;
    let mut total = 0.0;
    let mut left = n;
    for &s in starts {
        let len = b.min(left);
        total += prefix[s + len] - prefix[s];
        left -= len;
    }
    total / n as f64
}
