//! Experiment runners behind the command-line interface: the toy-sinusoid
//! density sweep, the duplicate-noise denoising study, and the similarity
//! enforcement demo. Each runner is a pure function of its config, so runs
//! are reproducible from a recorded manifest.

mod dup_noise;
mod enforce_demo;
mod sweep;

pub use dup_noise::{
    run_duplicate_noise, DupNoiseResult, DupNoiseRow, DuplicateNoiseSpec,
};
pub use enforce_demo::{
    run_enforce_demo, DemoDataset, DemoRun, EnforceDemoConfig, EnforceDemoResult,
};
pub use sweep::{
    run_toy_sweep, Estimator, MedianRow, SlopeFit, SweepCellRow, SweepConfig, SweepRecipe,
    SweepResult,
};

/// Median of a sample, averaging the two middle values for even sizes.
pub(crate) fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty sample");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Least-squares fit of `ln y = slope · ln x + intercept`.
///
/// Needs at least two points with positive coordinates; returns
/// `(slope, intercept)` or `None` when the fit is undefined.
pub(crate) fn loglog_slope(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 || points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return None;
    }
    let n = points.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for &(x, y) in points {
        sx += x.ln();
        sy += y.ln();
    }
    let (mx, my) = (sx / n, sy / n);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in points {
        let dx = x.ln() - mx;
        sxx += dx * dx;
        sxy += dx * (y.ln() - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_handles_both_parities() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&mut [7.5]), 7.5);
    }

    #[test]
    fn loglog_fit_recovers_an_exact_power_law() {
        let points: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0, 16.0]
            .iter()
            .map(|&f: &f64| (f, 3.0 * f.powf(-1.25)))
            .collect();
        let (slope, intercept) = loglog_slope(&points).unwrap();
        assert!((slope - (-1.25)).abs() <= 1e-12, "slope {slope}");
        assert!((intercept - 3.0f64.ln()).abs() <= 1e-12, "intercept {intercept}");
    }

    #[test]
    fn degenerate_fits_are_rejected() {
        assert!(loglog_slope(&[(2.0, 5.0)]).is_none());
        assert!(loglog_slope(&[(2.0, 5.0), (2.0, 7.0)]).is_none());
        assert!(loglog_slope(&[(1.0, 0.0), (2.0, 1.0)]).is_none());
        assert!(loglog_slope(&[]).is_none());
    }
}
