//! Univariate AR base models: conditional least-squares fitting with AICc
//! order selection, iterated forecasts, and aligned in-sample fitted panels.

use nalgebra::{DMatrix, DVector};

use crate::error::{ReconError, Result};
use crate::linalg;

/// Spectral-radius bound accepted for a fitted model (near-stationarity).
const STATIONARITY_BOUND: f64 = 1.0 + 1e-6;

/// A fitted autoregression y_t = intercept + Σ φ_i y_{t−i} + ε_t.
#[derive(Debug, Clone, PartialEq)]
pub struct ARModel {
    pub order_p: usize,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Maximum-likelihood innovation variance (RSS over the fit sample).
    pub sigma2: f64,
    pub aicc: f64,
    pub series_id: String,
}

impl ARModel {
    /// Largest modulus among the companion-matrix eigenvalues; < 1 for a
    /// stationary model.
    pub fn companion_spectral_radius(&self) -> f64 {
        companion_radius(&self.coefficients)
    }
}

fn companion_radius(coefficients: &[f64]) -> f64 {
    let p = coefficients.len();
    if p == 0 {
        return 0.0;
    }
    let mut companion = DMatrix::zeros(p, p);
    for (j, phi) in coefficients.iter().enumerate() {
        companion[(0, j)] = *phi;
    }
    for i in 1..p {
        companion[(i, i - 1)] = 1.0;
    }
    linalg::spectral_radius(&companion)
}

/// Fits AR(p) for p = 0..max_p by conditional least squares on the common
/// sample t = max_p..T, then returns the AICc minimizer.
///
/// All candidate orders share the same effective sample (T_eff = T − max_p)
/// so their AICc values are comparable. Candidates that are explosive,
/// collinear, or have zero residual variance are skipped.
pub fn fit_ar(series: &[f64], max_p: usize, series_id: &str) -> Result<ARModel> {
    let t = series.len();
    if t < max_p + 10 {
        return Err(ReconError::SeriesTooShort {
            required: max_p + 10,
            actual: t,
        });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(ReconError::NonFiniteInput);
    }
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi - lo == 0.0 {
        return Err(ReconError::DegenerateVariance(series_id.to_string()));
    }
    let t_eff = t - max_p;
    let targets = DVector::from_fn(t_eff, |i, _| series[max_p + i]);

    let mut best: Option<ARModel> = None;
    for p in 0..=max_p {
        let k = p + 2;
        // The correction term needs T_eff − k − 1 > 0.
        if t_eff <= k + 1 {
            continue;
        }
        let mut design = DMatrix::zeros(t_eff, p + 1);
        for row in 0..t_eff {
            design[(row, 0)] = 1.0;
            for lag in 1..=p {
                design[(row, lag)] = series[max_p + row - lag];
            }
        }
        let beta = match linalg::lstsq_qr(&design, &targets) {
            Ok(b) => b,
            Err(_) => continue,
        };
        let coefficients: Vec<f64> = (1..=p).map(|i| beta[i]).collect();
        if companion_radius(&coefficients) >= STATIONARITY_BOUND {
            continue;
        }
        let resid = &targets - design * &beta;
        let rss = resid.norm_squared();
        let sigma2 = rss / t_eff as f64;
        if !sigma2.is_finite() || sigma2 <= 0.0 {
            continue;
        }
        let n = t_eff as f64;
        let log_l = -0.5 * n * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0);
        let aicc = -2.0 * log_l + 2.0 * k as f64 * n / (n - k as f64 - 1.0);
        let candidate = ARModel {
            order_p: p,
            intercept: beta[0],
            coefficients,
            sigma2,
            aicc,
            series_id: series_id.to_string(),
        };
        let better = match &best {
            None => true,
            Some(b) => candidate.aicc < b.aicc,
        };
        if better {
            best = Some(candidate);
        }
    }
    best.ok_or_else(|| ReconError::DegenerateVariance(series_id.to_string()))
}

/// Iterated plug-in forecasts for horizons 1..h.
pub fn forecast(model: &ARModel, history: &[f64], h: usize) -> Result<Vec<f64>> {
    let p = model.order_p;
    if history.len() < p {
        return Err(ReconError::HistoryTooShort {
            required: p,
            actual: history.len(),
        });
    }
    // Most recent first: lags[i] = value at lag i+1.
    let mut lags: Vec<f64> = history.iter().rev().take(p).copied().collect();
    let mut out = Vec::with_capacity(h);
    for _ in 0..h {
        let mut v = model.intercept;
        for (i, phi) in model.coefficients.iter().enumerate() {
            v += phi * lags[i];
        }
        if p > 0 {
            lags.rotate_right(1);
            lags[0] = v;
        }
        out.push(v);
    }
    Ok(out)
}

/// h-step in-sample fitted values and residuals.
///
/// fitted[i] predicts series index t = order_p + h − 1 + i using data through
/// t − h; residuals are actual − fitted. For h = 1 these coincide with the
/// regression residuals of the fit on the overlapping index range.
pub fn insample_fitted(model: &ARModel, series: &[f64], h: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = series.len();
    let p = model.order_p;
    if t <= p + h {
        return Err(ReconError::SeriesTooShort {
            required: p + h + 1,
            actual: t,
        });
    }
    let start = p + h - 1;
    let mut fitted = Vec::with_capacity(t - start);
    let mut residuals = Vec::with_capacity(t - start);
    for target in start..t {
        // History through target − h; `target + 1 ≥ h` holds because
        // target ≥ p + h − 1, so the bound cannot underflow.
        let preds = forecast(model, &series[..target + 1 - h], h)?;
        let f = preds[h - 1];
        fitted.push(f);
        residuals.push(series[target] - f);
    }
    Ok((fitted, residuals))
}

/// Per-series base models plus the aligned fitted/residual matrices they
/// induce over a training panel.
#[derive(Debug, Clone)]
pub struct ForecastPanel {
    /// 1×m h-step-ahead forecasts from the end of the training sample.
    pub base: DMatrix<f64>,
    /// T_fit×m fitted values, rows aligned at `fitted_start`.
    pub fitted: DMatrix<f64>,
    /// T_fit×m residuals (actual − fitted).
    pub residuals: DMatrix<f64>,
    pub h: usize,
    pub models: Vec<ARModel>,
    /// Index into the training rows where the fitted rows begin
    /// (= max_p + h − 1, common across series).
    pub fitted_start: usize,
}

/// Fits one AR model per column of the training panel and assembles base
/// forecasts, fitted values, and residuals on a common row range.
pub fn build_forecast_panel(
    y_train: &DMatrix<f64>,
    labels: &[String],
    h: usize,
    max_p: usize,
) -> Result<ForecastPanel> {
    let (t, m) = (y_train.nrows(), y_train.ncols());
    if labels.len() != m {
        return Err(ReconError::DimensionMismatch {
            expected: format!("{m} labels"),
            actual: format!("{}", labels.len()),
        });
    }
    if h == 0 {
        return Err(ReconError::ConfigError("horizon must be at least 1".into()));
    }
    let fitted_start = max_p + h - 1;
    if t <= fitted_start {
        return Err(ReconError::SeriesTooShort {
            required: fitted_start + 1,
            actual: t,
        });
    }
    let t_fit = t - fitted_start;
    let mut base = DMatrix::zeros(1, m);
    let mut fitted = DMatrix::zeros(t_fit, m);
    let mut residuals = DMatrix::zeros(t_fit, m);
    let mut models = Vec::with_capacity(m);
    for j in 0..m {
        let series: Vec<f64> = y_train.column(j).iter().copied().collect();
        let model = fit_ar(&series, max_p, &labels[j])?;
        let (f, r) = insample_fitted(&model, &series, h)?;
        // Per-series output starts at p_j + h − 1; drop the head so every
        // column is aligned at max_p + h − 1.
        let skip = max_p - model.order_p;
        for (row, idx) in (skip..f.len()).enumerate() {
            fitted[(row, j)] = f[idx];
            residuals[(row, j)] = r[idx];
        }
        base[(0, j)] = forecast(&model, &series, h)?[h - 1];
        models.push(model);
    }
    Ok(ForecastPanel {
        base,
        fitted,
        residuals,
        h,
        models,
        fitted_start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn ar1_series(phi: f64, sigma: f64, t: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = Vec::with_capacity(t + 100);
        let mut prev = 0.0;
        for _ in 0..(t + 100) {
            let eps: f64 = rng.sample(StandardNormal);
            prev = phi * prev + sigma * eps;
            y.push(prev);
        }
        y.split_off(100)
    }

    /// Append-only recursion oracle, independent of the ring-buffer
    /// implementation in `forecast`.
    fn recursion_oracle(intercept: f64, coeffs: &[f64], history: &[f64], h: usize) -> Vec<f64> {
        let mut buf = history.to_vec();
        let mut out = Vec::new();
        for _ in 0..h {
            let mut v = intercept;
            for (i, phi) in coeffs.iter().enumerate() {
                v += phi * buf[buf.len() - 1 - i];
            }
            buf.push(v);
            out.push(v);
        }
        out
    }

    #[test]
    fn white_noise_mostly_selects_order_zero() {
        let mut zero_count = 0;
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let series: Vec<f64> = (0..500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let model = fit_ar(&series, 5, "wn").unwrap();
            if model.order_p == 0 {
                zero_count += 1;
            }
        }
        assert!(
            zero_count > 100,
            "order 0 selected only {zero_count}/200 times on white noise"
        );
    }

    #[test]
    fn ar1_coefficient_is_recovered() {
        // When AICc picks an order above 1 the individual coefficients
        // shift, but the lag-polynomial persistence Σφᵢ stays near φ.
        let series = ar1_series(0.9, 1.0, 500, 42);
        let model = fit_ar(&series, 5, "ar1").unwrap();
        assert!(model.order_p >= 1);
        let persistence: f64 = model.coefficients.iter().sum();
        assert!(
            (persistence - 0.9).abs() < 0.08,
            "persistence estimate {persistence} too far from 0.9 (order {})",
            model.order_p
        );
        assert!(model.companion_spectral_radius() < 1.0);
        assert!(model.sigma2 > 0.0);
    }

    #[test]
    fn constant_series_never_yields_a_model() {
        let series = vec![3.0; 50];
        assert!(matches!(
            fit_ar(&series, 3, "const"),
            Err(ReconError::DegenerateVariance(_))
        ));
    }

    #[test]
    fn short_series_is_rejected() {
        let series = vec![1.0, 2.0, 3.0];
        assert!(matches!(
            fit_ar(&series, 5, "short"),
            Err(ReconError::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn fitting_is_deterministic() {
        let series = ar1_series(0.5, 1.0, 200, 7);
        let a = fit_ar(&series, 5, "x").unwrap();
        let b = fit_ar(&series, 5, "x").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn order_zero_forecasts_equal_intercept() {
        let model = ARModel {
            order_p: 0,
            intercept: 1.5,
            coefficients: vec![],
            sigma2: 1.0,
            aicc: 0.0,
            series_id: "c".into(),
        };
        let out = forecast(&model, &[9.0, 9.0], 4).unwrap();
        assert_eq!(out, vec![1.5; 4]);
    }

    #[test]
    fn ar1_forecasts_follow_geometric_recursion() {
        let model = ARModel {
            order_p: 1,
            intercept: 0.0,
            coefficients: vec![0.5],
            sigma2: 1.0,
            aicc: 0.0,
            series_id: "g".into(),
        };
        let out = forecast(&model, &[7.0, 2.0], 3).unwrap();
        assert_eq!(out, vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn ar2_forecast_matches_recursion_oracle() {
        let model = ARModel {
            order_p: 2,
            intercept: 0.7,
            coefficients: vec![0.5, -0.3],
            sigma2: 1.0,
            aicc: 0.0,
            series_id: "a2".into(),
        };
        let history = [1.0, 2.0, -0.5, 0.8];
        let got = forecast(&model, &history, 6).unwrap();
        let want = recursion_oracle(0.7, &[0.5, -0.3], &history, 6);
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-14);
        }
    }

    #[test]
    fn forecast_rejects_short_history() {
        let model = ARModel {
            order_p: 3,
            intercept: 0.0,
            coefficients: vec![0.1, 0.1, 0.1],
            sigma2: 1.0,
            aicc: 0.0,
            series_id: "h".into(),
        };
        assert!(matches!(
            forecast(&model, &[1.0, 2.0], 1),
            Err(ReconError::HistoryTooShort { .. })
        ));
    }

    #[test]
    fn one_step_fitted_values_are_the_regression_line() {
        let model = ARModel {
            order_p: 1,
            intercept: 0.3,
            coefficients: vec![0.6],
            sigma2: 1.0,
            aicc: 0.0,
            series_id: "f".into(),
        };
        let series = [1.0, 2.0, 0.5, -1.0, 0.25];
        let (fitted, residuals) = insample_fitted(&model, &series, 1).unwrap();
        assert_eq!(fitted.len(), 4);
        for (i, f) in fitted.iter().enumerate() {
            let expect = 0.3 + 0.6 * series[i];
            assert!((f - expect).abs() < 1e-14);
            assert!((residuals[i] - (series[i + 1] - expect)).abs() < 1e-14);
        }
    }

    #[test]
    fn two_step_fitted_values_match_closed_form() {
        // For AR(1): ŷ_{t|t−2} = c(1+φ) + φ²·y_{t−2}.
        let (c, phi) = (0.4, 0.7);
        let model = ARModel {
            order_p: 1,
            intercept: c,
            coefficients: vec![phi],
            sigma2: 1.0,
            aicc: 0.0,
            series_id: "f2".into(),
        };
        let series = ar1_series(0.7, 1.0, 30, 3);
        let (fitted, _) = insample_fitted(&model, &series, 2).unwrap();
        for (i, f) in fitted.iter().enumerate() {
            let expect = c * (1.0 + phi) + phi * phi * series[i];
            assert!((f - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_series_under_its_own_model_has_zero_residuals() {
        let model = ARModel {
            order_p: 1,
            intercept: 0.0,
            coefficients: vec![0.5],
            sigma2: 1.0,
            aicc: 0.0,
            series_id: "d".into(),
        };
        let mut series = vec![8.0];
        for _ in 0..20 {
            series.push(0.5 * series.last().unwrap());
        }
        let (_, residuals) = insample_fitted(&model, &series, 1).unwrap();
        assert!(residuals.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn fitted_residual_mean_is_negligible_with_intercept() {
        let series = ar1_series(0.6, 2.0, 400, 11);
        let model = fit_ar(&series, 5, "m").unwrap();
        let (_, residuals) = insample_fitted(&model, &series, 1).unwrap();
        // Restrict to the common fit sample the regression used.
        let skip = 5 - model.order_p;
        let fit_resid = &residuals[skip..];
        let mean = fit_resid.iter().sum::<f64>() / fit_resid.len() as f64;
        let sd = (series.iter().map(|v| v * v).sum::<f64>() / series.len() as f64).sqrt();
        assert!(mean.abs() < 1e-8 * sd);
    }

    #[test]
    fn one_step_residuals_equal_regression_residuals() {
        let series = ar1_series(0.4, 1.0, 120, 13);
        let max_p = 4;
        let model = fit_ar(&series, max_p, "r").unwrap();
        let p = model.order_p;
        let t_eff = series.len() - max_p;
        let design = DMatrix::from_fn(t_eff, p + 1, |row, col| {
            if col == 0 {
                1.0
            } else {
                series[max_p + row - col]
            }
        });
        let targets = DVector::from_fn(t_eff, |i, _| series[max_p + i]);
        let beta = linalg::lstsq_qr(&design, &targets).unwrap();
        let reg_resid = targets - design * beta;
        let (_, residuals) = insample_fitted(&model, &series, 1).unwrap();
        let skip = max_p - p;
        for (i, r) in reg_resid.iter().enumerate() {
            assert!((residuals[skip + i] - r).abs() < 1e-10);
        }
    }

    #[test]
    fn panel_builder_aligns_columns_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let t = 150;
        let mut y = DMatrix::zeros(t, 2);
        let s1 = ar1_series(0.8, 1.0, t, 100);
        for (i, v) in s1.iter().enumerate() {
            y[(i, 0)] = *v;
        }
        for i in 0..t {
            y[(i, 1)] = rng.sample::<f64, _>(StandardNormal);
        }
        let labels = vec!["a".to_string(), "b".to_string()];
        let panel = build_forecast_panel(&y, &labels, 1, 5).unwrap();
        assert_eq!(panel.fitted_start, 5);
        assert_eq!(panel.fitted.nrows(), t - 5);
        assert_eq!(panel.base.shape(), (1, 2));
        // residuals = actual − fitted on the aligned range
        for row in 0..panel.fitted.nrows() {
            for col in 0..2 {
                let actual = y[(row + 5, col)];
                let diff = actual - panel.fitted[(row, col)] - panel.residuals[(row, col)];
                assert!(diff.abs() < 1e-12);
            }
        }
        let again = build_forecast_panel(&y, &labels, 1, 5).unwrap();
        assert_eq!(panel.base, again.base);
        assert_eq!(panel.fitted, again.fitted);
    }
}
