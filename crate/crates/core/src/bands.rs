//! Extreme-value normalisation, quantiles of the maximum of Gaussian
//! vectors, simultaneous confidence bands, the chi-squared ellipsoid and the
//! order test built on the normalised maximum of studentised coefficients.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ar_model::TimeSeries;
use crate::error::{Error, Result};
use crate::estimation::{fit, InverseDiagonal, SequentialFits, YwFit};
use crate::special::{chi2_quantile, normal_quantile};

/// Constant entering the second-order term of the centring sequence `b_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnVariant {
    /// `log pi`: the classical constant for the maximum of `d` absolute
    /// standard normals, `(2 Phi(a z + b) - 1)^d -> exp(-e^{-z})`.
    #[default]
    Berman,
    /// `log 4 pi`, the constant for the maximum of `d` signed normals.
    Log4Pi,
    /// `4 pi - 4`, kept for comparison with the published constant.
    Verbatim,
}

impl BnVariant {
    fn constant(self) -> f64 {
        match self {
            BnVariant::Berman => std::f64::consts::PI.ln(),
            BnVariant::Log4Pi => (4.0 * std::f64::consts::PI).ln(),
            BnVariant::Verbatim => 4.0 * std::f64::consts::PI - 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationConstants {
    pub d_n: usize,
    pub a_n: f64,
    pub b_n: f64,
    pub variant: BnVariant,
}

impl NormalizationConstants {
    /// Raw-scale critical value `a_n z + b_n` for a Gumbel-scale `z`.
    pub fn threshold(&self, z: f64) -> f64 {
        self.a_n * z + self.b_n
    }

    /// Gumbel-scale value `(t - b_n) / a_n` of a raw-scale threshold.
    pub fn normalize(&self, t: f64) -> f64 {
        (t - self.b_n) / self.a_n
    }
}

/// `a_n = (2 log d)^{-1/2}`,
/// `b_n = (2 log d)^{1/2} - (8 log d)^{-1/2} (log log d + c)`.
pub fn norm_constants(d_n: usize) -> Result<NormalizationConstants> {
    norm_constants_with(d_n, BnVariant::default())
}

pub fn norm_constants_with(d_n: usize, variant: BnVariant) -> Result<NormalizationConstants> {
    if d_n < 2 {
        return Err(Error::InvalidDimension(format!(
            "normalisation constants need d_n >= 2, got {d_n}"
        )));
    }
    let l = (d_n as f64).ln();
    let a_n = (2.0 * l).powf(-0.5);
    let b_n = (2.0 * l).sqrt() - (8.0 * l).powf(-0.5) * (l.ln() + variant.constant());
    Ok(NormalizationConstants {
        d_n,
        a_n,
        b_n,
        variant,
    })
}

pub fn gumbel_cdf(z: f64) -> f64 {
    (-(-z).exp()).exp()
}

/// `V_{1-alpha} = -log(-log(1 - alpha))`.
pub fn gumbel_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(-(-(-alpha).ln_1p()).ln())
}

/// The normalised statistics `(sqrt(n) |theta_i - c_i| / sqrt(gamma*_ii sigma^2) - b_n) / a_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxStatistics {
    pub values: Vec<f64>,
    /// `sqrt(n) |theta_i - c_i| / sqrt(gamma*_ii sigma^2)` before normalisation.
    pub studentized: Vec<f64>,
    pub constants: NormalizationConstants,
    pub n: usize,
    pub sigma2_hat: f64,
}

impl MaxStatistics {
    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Statistics for one fit of order `k` with externally supplied constants.
pub fn max_statistics_for(
    fit: &YwFit,
    inv: &InverseDiagonal,
    n: usize,
    constants: NormalizationConstants,
    centre: Option<&[f64]>,
) -> Result<MaxStatistics> {
    if inv.order != fit.order {
        return Err(Error::DimensionMismatch {
            expected: fit.order,
            got: inv.order,
        });
    }
    if let Some(c) = centre {
        if c.len() != fit.order {
            return Err(Error::DimensionMismatch {
                expected: fit.order,
                got: c.len(),
            });
        }
    }
    if !(fit.sigma2_hat > 0.0) {
        return Err(Error::Degenerate { order: fit.order });
    }
    let sqrt_n = (n as f64).sqrt();
    let studentized: Vec<f64> = fit
        .coeffs
        .iter()
        .zip(&inv.diag)
        .enumerate()
        .map(|(i, (theta, g))| {
            let c = centre.map_or(0.0, |c| c[i]);
            sqrt_n * ((theta - c) / (g * fit.sigma2_hat).sqrt()).abs()
        })
        .collect();
    let values = studentized
        .iter()
        .map(|s| constants.normalize(*s))
        .collect();
    Ok(MaxStatistics {
        values,
        studentized,
        constants,
        n,
        sigma2_hat: fit.sigma2_hat,
    })
}

/// Statistics at the largest order of `fits`, centred at zero.
pub fn max_statistics(
    fits: &SequentialFits,
    inv: &InverseDiagonal,
    n: usize,
    variant: BnVariant,
) -> Result<MaxStatistics> {
    let constants = norm_constants_with(fits.max_order(), variant)?;
    max_statistics_for(fits.last(), inv, n, constants, None)
}

/// Statistics at the largest order of `fits`, centred at hypothesised
/// coefficients `theta0`.
pub fn max_statistics_centered(
    fits: &SequentialFits,
    inv: &InverseDiagonal,
    n: usize,
    theta0: &[f64],
    variant: BnVariant,
) -> Result<MaxStatistics> {
    let constants = norm_constants_with(fits.max_order(), variant)?;
    max_statistics_for(fits.last(), inv, n, constants, Some(theta0))
}

/// How the critical value of `max_i |xi_i|` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum QuantileMode {
    /// Gumbel limit, `a_n V_{1-alpha} + b_n`.
    Gumbel,
    /// Exact law of the maximum of `d` independent `|N(0, 1)|`.
    #[default]
    IidExact,
    /// Monte Carlo with the estimated correlation of the coefficient errors.
    McCorrelated { samples: usize, seed: u64 },
}

impl QuantileMode {
    pub fn name(&self) -> &'static str {
        match self {
            QuantileMode::Gumbel => "gumbel",
            QuantileMode::IidExact => "iid_exact",
            QuantileMode::McCorrelated { .. } => "mc_correlated",
        }
    }
}

/// Solves `(2 Phi(x) - 1)^d = 1 - alpha`.
pub fn iid_max_quantile(d: usize, alpha: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidDimension("dimension must be positive".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    // upper tail (1 - (1 - alpha)^{1/d}) / 2 computed without cancellation
    let tail = -0.5 * ((-alpha).ln_1p() / d as f64).exp_m1();
    Ok(-normal_quantile(tail)?)
}

/// Exact CDF of `max_i |eta_i|` for `d` independent standard normals.
pub fn iid_max_cdf(d: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let inner = 1.0 - 2.0 * crate::special::normal_sf(x);
    inner.powi(d as i32)
}

const MC_BATCH: usize = 4096;

/// Correlation matrix with unit diagonal from a covariance-type matrix.
pub fn correlation_from_covariance(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    if cov.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: cov.ncols(),
        });
    }
    let sd: Vec<f64> = (0..d).map(|i| cov[(i, i)].sqrt()).collect();
    if sd.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::NotPositiveDefinite { order: d });
    }
    Ok(DMatrix::from_fn(d, d, |i, j| cov[(i, j)] / (sd[i] * sd[j])))
}

/// Empirical `1 - alpha` quantile of `max_i |xi_i|` with `xi ~ N(0, R)`.
/// Batch `b` draws from the ChaCha stream `b` of `seed`, so the result does
/// not depend on how batches are scheduled.
pub fn mc_max_quantile(
    correlation: &DMatrix<f64>,
    alpha: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if samples == 0 {
        return Err(Error::Domain(
            "Monte Carlo needs at least one sample".into(),
        ));
    }
    let d = correlation.nrows();
    let chol = Cholesky::new(correlation.clone()).ok_or(Error::NotPositiveDefinite { order: d })?;
    let l = chol.l();
    let batches = samples.div_ceil(MC_BATCH);
    let mut maxima: Vec<f64> = (0..batches)
        .into_par_iter()
        .flat_map_iter(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let len = MC_BATCH.min(samples - b * MC_BATCH);
            let mut eta = DVector::<f64>::zeros(d);
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                for v in eta.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let xi = &l * &eta;
                out.push(xi.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            }
            out
        })
        .collect();
    maxima.sort_by(f64::total_cmp);
    let rank = ((1.0 - alpha) * samples as f64).ceil() as usize;
    Ok(maxima[rank.clamp(1, samples) - 1])
}

/// Raw-scale `1 - alpha` critical value of `max_{i <= d} |xi_i|`.
pub fn quantile_max_gaussian(
    d: usize,
    alpha: f64,
    mode: QuantileMode,
    correlation: Option<&DMatrix<f64>>,
    variant: BnVariant,
) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidDimension("dimension must be positive".into()));
    }
    match mode {
        QuantileMode::Gumbel => {
            let c = norm_constants_with(d, variant)?;
            Ok(c.threshold(gumbel_quantile(alpha)?))
        }
        QuantileMode::IidExact => iid_max_quantile(d, alpha),
        QuantileMode::McCorrelated { samples, seed } => {
            let r = correlation.ok_or_else(|| {
                Error::Domain("correlated Monte Carlo mode needs a correlation matrix".into())
            })?;
            if r.nrows() != d || r.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.nrows(),
                });
            }
            mc_max_quantile(r, alpha, samples, seed)
        }
    }
}

/// Simultaneous band `theta_hat_i +- w_i` with
/// `w_i = c sqrt(gamma*_ii sigma^2 / n)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceBand {
    pub level: f64,
    pub mode: QuantileMode,
    /// Raw-scale critical value `c = a_n x + b_n`.
    pub critical: f64,
    /// The same critical value on the Gumbel scale, `x`.
    pub gumbel_scale: f64,
    pub constants: NormalizationConstants,
    pub centers: Vec<f64>,
    pub half_widths: Vec<f64>,
}

impl ConfidenceBand {
    pub fn lower(&self) -> Vec<f64> {
        self.centers
            .iter()
            .zip(&self.half_widths)
            .map(|(c, w)| c - w)
            .collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.centers
            .iter()
            .zip(&self.half_widths)
            .map(|(c, w)| c + w)
            .collect()
    }

    /// True iff every coordinate of `theta` lies in its interval.
    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.centers.len()
            && theta
                .iter()
                .zip(self.centers.iter().zip(&self.half_widths))
                .all(|(t, (c, w))| (t - c).abs() <= *w)
    }
}

pub fn confidence_band(
    fits: &SequentialFits,
    inv: &InverseDiagonal,
    n: usize,
    level: f64,
    mode: QuantileMode,
    variant: BnVariant,
) -> Result<ConfidenceBand> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!(
            "level must lie in (0, 1), got {level}"
        )));
    }
    let fit = fits.last();
    let d = fit.order;
    if inv.order != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: inv.order,
        });
    }
    if !(fit.sigma2_hat > 0.0) {
        return Err(Error::Degenerate { order: d });
    }
    let constants = norm_constants_with(d, variant)?;
    let correlation = match (mode, &inv.full) {
        (QuantileMode::McCorrelated { .. }, Some(full)) => Some(correlation_from_covariance(full)?),
        (QuantileMode::McCorrelated { .. }, None) => {
            return Err(Error::Domain(
                "correlated Monte Carlo mode needs the full inverse matrix".into(),
            ))
        }
        _ => None,
    };
    let critical = quantile_max_gaussian(d, 1.0 - level, mode, correlation.as_ref(), variant)?;
    if !(critical > 0.0) {
        return Err(Error::DegenerateBand {
            threshold: critical,
        });
    }
    let sqrt_n = (n as f64).sqrt();
    let half_widths = inv
        .diag
        .iter()
        .map(|g| critical * (g * fit.sigma2_hat).sqrt() / sqrt_n)
        .collect();
    Ok(ConfidenceBand {
        level,
        mode,
        critical,
        gumbel_scale: constants.normalize(critical),
        constants,
        centers: fit.coeffs.clone(),
        half_widths,
    })
}

/// `n (theta_hat - theta0)' Gamma_m (theta_hat - theta0) / sigma^2(m)`.
pub fn ellipsoid_statistic(
    fit: &YwFit,
    gamma_hat: &DMatrix<f64>,
    n: usize,
    theta0: &[f64],
) -> Result<f64> {
    let m = fit.order;
    if gamma_hat.nrows() != m || gamma_hat.ncols() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: gamma_hat.nrows(),
        });
    }
    if theta0.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: theta0.len(),
        });
    }
    if !(fit.sigma2_hat > 0.0) {
        return Err(Error::Degenerate { order: m });
    }
    let diff = DVector::from_iterator(m, fit.coeffs.iter().zip(theta0).map(|(a, b)| a - b));
    let qf = diff.dot(&(gamma_hat * &diff));
    Ok(n as f64 * qf / fit.sigma2_hat)
}

/// Membership of `theta0` in the chi-squared confidence ellipsoid.
pub fn ellipsoid_contains(
    fit: &YwFit,
    gamma_hat: &DMatrix<f64>,
    n: usize,
    theta0: &[f64],
    level: f64,
) -> Result<bool> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!(
            "level must lie in (0, 1), got {level}"
        )));
    }
    let stat = ellipsoid_statistic(fit, gamma_hat, n, theta0)?;
    if fit.order == 0 {
        return Ok(true);
    }
    Ok(stat <= chi2_quantile(fit.order as f64, level)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderTestResult {
    pub q0: usize,
    pub offset: usize,
    pub d_n: usize,
    pub statistic: f64,
    pub threshold: f64,
    pub reject: bool,
    /// Upper-tail probability under the Gumbel limit; asymptotic only.
    pub p_value_gumbel: f64,
}

/// Test of `q <= q0` from precomputed statistics at order `d_n`.
pub fn order_test_from(
    stats: &MaxStatistics,
    q0: usize,
    k: usize,
    alpha: f64,
) -> Result<OrderTestResult> {
    let d_n = stats.dim();
    if k == 0 || q0 + k > d_n {
        return Err(Error::InvalidRange(format!(
            "need k >= 1 and q0 + k <= d_n, got q0 = {q0}, k = {k}, d_n = {d_n}"
        )));
    }
    let statistic = stats.values[q0 + k - 1..]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let threshold = gumbel_quantile(alpha)?;
    Ok(OrderTestResult {
        q0,
        offset: k,
        d_n,
        statistic,
        threshold,
        reject: statistic > threshold,
        p_value_gumbel: -(-(-statistic).exp()).exp_m1(),
    })
}

/// Test of `H0: q <= q0` against `q > q0` on a series.
pub fn order_test(
    series: &TimeSeries,
    q0: usize,
    k: usize,
    d_n: usize,
    alpha: f64,
    variant: BnVariant,
) -> Result<OrderTestResult> {
    if k == 0 || q0 + k > d_n {
        return Err(Error::InvalidRange(format!(
            "need k >= 1 and q0 + k <= d_n, got q0 = {q0}, k = {k}, d_n = {d_n}"
        )));
    }
    let (fits, inv) = fit(series, d_n)?;
    let stats = max_statistics(&fits, &inv, series.len(), variant)?;
    order_test_from(&stats, q0, k, alpha)
}
