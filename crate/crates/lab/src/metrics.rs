//! Quality metrics and rank statistics.

use magnituder::Matrix;

/// PSNR reported for a perfect reconstruction, where the true value is infinite.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Peak signal-to-noise ratio for signals with peak value 1, capped at [`PSNR_CAP_DB`].
pub fn psnr(prediction: &Matrix, target: &Matrix) -> f64 {
    let mse = prediction
        .mse(target)
        .expect("PSNR operands must share a shape");
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (-10.0 * mse.log10()).min(PSNR_CAP_DB)
}

/// Mean absolute difference.
pub fn mean_abs_error(prediction: &Matrix, target: &Matrix) -> f64 {
    assert_eq!(
        prediction.shape(),
        target.shape(),
        "operands must share a shape"
    );
    let n = prediction.as_slice().len().max(1) as f64;
    prediction
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` when either input is constant or shorter than 2.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len(), "spearman needs paired samples");
    if xs.len() < 2 {
        return None;
    }
    pearson(&ranks(xs), &ranks(ys))
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Least-squares slope of `ys` against `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>()
}

/// Whether `values` never decreases, except for at most `allowed` drops each no larger than `tolerance`.
pub fn non_decreasing_with_slack(values: &[f64], allowed: usize, tolerance: f64) -> bool {
    let mut drops = 0;
    for w in values.windows(2) {
        if w[1] < w[0] {
            if w[0] - w[1] > tolerance {
                return false;
            }
            drops += 1;
        }
    }
    drops <= allowed
}
