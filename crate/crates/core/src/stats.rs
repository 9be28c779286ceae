//! Small statistical helpers shared by the probes.

/// Sample mean and unbiased variance. Returns `(0, 0)` for an empty slice
/// and variance `0` for a single sample.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Empirical quantile with linear interpolation; input must be sorted.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let q = q.clamp(0.0, 1.0);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Least-squares line through `(x, y)` points: returns `(slope, intercept)`.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    assert!(pts.len() >= 2, "linear fit needs at least two points");
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    (slope, intercept)
}

/// Standard error of the mean of a correlated sequence by the method of
/// batch means: the sequence is cut into `batches` contiguous blocks (any
/// remainder at the front is dropped), and the spread of the block means
/// estimates the variance of the overall mean.
///
/// Returns `(mean, standard error)`. Falls back to the i.i.d. formula when
/// there are too few samples to form the requested number of batches.
pub fn batch_means(xs: &[f64], batches: usize) -> (f64, f64) {
    let (mean, var) = mean_var(xs);
    if batches < 2 || xs.len() < 2 * batches {
        return (mean, (var / xs.len().max(1) as f64).sqrt());
    }
    let size = xs.len() / batches;
    let start = xs.len() - size * batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| {
            let block = &xs[start + b * size..start + (b + 1) * size];
            block.iter().sum::<f64>() / size as f64
        })
        .collect();
    let (bmean, bvar) = mean_var(&means);
    (bmean, (bvar / batches as f64).sqrt())
}
