use super::{MtfModel, MtfSamples};
use crate::error::{Error, Result};
use crate::lm::{minimize, LmOptions};

/// Starting points for the multi-start fit, `[a1, b1, c1, a2, b2, c2]`.
const SEEDS: [[f64; 6]; 8] = [
    [0.5, 0.0, 0.2, 0.5, 0.0, 0.5],
    [0.01, 0.6, 0.1, 1.0, 0.0, 0.25],
    [1.0, 0.0, 0.3, 0.01, 0.3, 0.1],
    [0.3, 0.2, 0.2, 0.7, -0.1, 0.3],
    [0.0, 0.25, 0.1, 1.0, 0.0, 1e4],
    [0.2, 0.4, 0.1, 0.8, 0.0, 0.2],
    [0.5, -0.2, 0.3, 0.5, 0.2, 0.3],
    [0.05, 0.3, 0.05, 0.95, 0.0, 0.35],
];

#[derive(Clone, Debug)]
pub struct FitReport {
    pub model: MtfModel,
    /// Sum of squared residuals of the chosen start.
    pub sse: f64,
    /// Final SSE of every start, `NaN` where the start failed outright.
    pub start_sse: Vec<f64>,
}

/// Least-squares fit of the two-Gaussian model; the best of eight starts wins.
pub fn fit_mtf(samples: &MtfSamples) -> Result<FitReport> {
    let n = samples.freq.len();
    if n < 7 || samples.value.len() != n {
        return Err(Error::Fit(format!("need at least 7 MTF samples, got {n}")));
    }
    let lo = samples.freq.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.freq.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo > 0.05 || hi < 0.45 {
        return Err(Error::Fit(format!("samples span [{lo}, {hi}], need [0, 0.5]")));
    }
    let residuals = |p: &[f64]| -> Option<Vec<f64>> {
        if p[2].abs() < 1e-9 || p[5].abs() < 1e-9 {
            return None;
        }
        let m = MtfModel::from_params([p[0], p[1], p[2], p[3], p[4], p[5]]);
        Some(samples.freq.iter().zip(&samples.value).map(|(&f, &v)| m.eval_raw(f) - v).collect())
    };
    let mut best: Option<(f64, [f64; 6])> = None;
    let mut start_sse = Vec::with_capacity(SEEDS.len());
    let mut any_converged = false;
    for seed in SEEDS.iter() {
        match minimize(residuals, seed, LmOptions::default()) {
            Some(r) => {
                start_sse.push(r.cost);
                any_converged |= r.converged;
                if best.is_none_or(|(c, _)| r.cost < c) {
                    best = Some((r.cost, [r.x[0], r.x[1], r.x[2], r.x[3], r.x[4], r.x[5]]));
                }
            }
            None => start_sse.push(f64::NAN),
        }
    }
    match best {
        Some((sse, p)) if any_converged => {
            let mut model = MtfModel::from_params(p);
            // Sign of a width is irrelevant; keep it positive.
            model.c1 = model.c1.abs();
            model.c2 = model.c2.abs();
            Ok(FitReport { model, sse, start_sse })
        }
        _ => Err(Error::Fit(format!("no start converged; final SSE per start {start_sse:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sampled(m: &MtfModel) -> MtfSamples {
        let freq: Vec<f64> = (0..=64).map(|i| i as f64 / 128.0).collect();
        let value = freq.iter().map(|&f| m.eval_raw(f)).collect();
        MtfSamples { freq, value }
    }

    #[test]
    fn recovers_reference_curve() {
        let truth = MtfModel::reference_camera();
        let fit = fit_mtf(&sampled(&truth)).unwrap();
        let worst = (0..=500)
            .map(|i| i as f64 * 0.001)
            .map(|f| (fit.model.eval_raw(f) - truth.eval_raw(f)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.01, "max deviation {worst}");
    }

    #[test]
    fn flat_target() {
        let freq: Vec<f64> = (0..=32).map(|i| i as f64 / 64.0).collect();
        let value = vec![1.0; freq.len()];
        let fit = fit_mtf(&MtfSamples { freq: freq.clone(), value }).unwrap();
        for f in freq {
            assert!((fit.model.eval_raw(f) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_narrow_coverage() {
        let s = MtfSamples { freq: (0..10).map(|i| i as f64 * 0.01).collect(), value: vec![1.0; 10] };
        assert!(fit_mtf(&s).is_err());
    }
}
