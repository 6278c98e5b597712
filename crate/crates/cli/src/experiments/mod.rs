pub mod dynamics;
pub mod thompson;
pub mod wasserstein;

use std::time::Instant;

use rayon::prelude::*;

use crate::CliError;

/// Run `tasks` in parallel batches, handing results to `sink` in task order.
/// Each batch is as wide as the pool, so rows reach disk as soon as a batch
/// completes while the output order stays independent of scheduling.
pub(crate) fn run_ordered<T, R, F, S>(tasks: Vec<T>, work: F, mut sink: S) -> Result<(), CliError>
where
    T: Send + Sync,
    R: Send,
    F: Fn(&T) -> Result<R, CliError> + Sync,
    S: FnMut(&T, R) -> Result<(), CliError>,
{
    let width = rayon::current_num_threads().max(1);
    for batch in tasks.chunks(width) {
        let results: Vec<Result<R, CliError>> = batch.par_iter().map(&work).collect();
        for (task, result) in batch.iter().zip(results) {
            sink(task, result?)?;
        }
    }
    Ok(())
}

/// Value and elapsed seconds of `f`.
pub(crate) fn timed<R>(f: impl FnOnce() -> R) -> (R, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// Median of a nonempty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolated quantile.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(quantile(&[0.0, 10.0], 0.25), 2.5);
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((log_log_slope(&x, &y) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn ordered_sink_sees_task_order() {
        let mut seen = Vec::new();
        run_ordered((0..10).collect(), |t| Ok(t * 2), |t, r| {
            seen.push((*t, r));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, (0..10).map(|t| (t, t * 2)).collect::<Vec<_>>());
    }
}
