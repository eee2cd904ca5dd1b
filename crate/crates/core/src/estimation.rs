//! Sample autocovariances, Yule-Walker fits for every order from a single
//! Levinson-Durbin pass, and the diagonal of the inverse Toeplitz matrix.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::ar_model::{step_down, ArModel, AutocovSequence, AutocovSource, TimeSeries};
use crate::error::{Error, Result};

/// Relative pivot floor below which a Toeplitz matrix counts as singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Normalisation of the lag-`h` sample autocovariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceDivisor {
    /// `1/n`; keeps the Toeplitz matrix positive semidefinite.
    #[default]
    SampleSize,
    /// `1/(n - h)`.
    LagAdjusted,
}

/// `phi_h = (1/n) sum_{i=h+1}^{n} X_i X_{i-h}` for `h = 0..=max_lag`, without
/// mean removal.
pub fn sample_autocovariance(series: &TimeSeries, max_lag: usize) -> Result<AutocovSequence> {
    sample_autocovariance_with(series, max_lag, CovarianceDivisor::SampleSize)
}

pub fn sample_autocovariance_with(
    series: &TimeSeries,
    max_lag: usize,
    divisor: CovarianceDivisor,
) -> Result<AutocovSequence> {
    let x = series.values();
    let n = x.len();
    if max_lag >= n {
        return Err(Error::LagTooLarge { max_lag, n });
    }
    let values = (0..=max_lag)
        .map(|h| {
            let s: f64 = x[h..].iter().zip(x).map(|(a, b)| a * b).sum();
            match divisor {
                CovarianceDivisor::SampleSize => s / n as f64,
                CovarianceDivisor::LagAdjusted => s / (n - h) as f64,
            }
        })
        .collect();
    AutocovSequence::new(values, AutocovSource::Sample)
}

/// Yule-Walker fit of a single order `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct YwFit {
    pub order: usize,
    /// `theta_1(m), ..., theta_m(m)`; the `theta_0 = -1` convention is implicit.
    pub coeffs: Vec<f64>,
    pub sigma2_hat: f64,
    /// Partial autocorrelations `k_1, ..., k_m`.
    pub reflection: Vec<f64>,
}

/// Fits for every order `0..=max_order`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialFits {
    pub phi0: f64,
    pub fits: Vec<YwFit>,
}

impl SequentialFits {
    pub fn max_order(&self) -> usize {
        self.fits.len() - 1
    }

    pub fn get(&self, m: usize) -> &YwFit {
        &self.fits[m]
    }

    pub fn last(&self) -> &YwFit {
        self.fits.last().expect("order 0 is always present")
    }

    pub fn sigma2(&self) -> impl Iterator<Item = f64> + '_ {
        self.fits.iter().map(|f| f.sigma2_hat)
    }
}

/// Levinson-Durbin recursion on `autocov` up to `max_order`.
pub fn levinson_durbin(autocov: &AutocovSequence, max_order: usize) -> Result<SequentialFits> {
    if max_order > autocov.max_lag() {
        return Err(Error::LagTooLarge {
            max_lag: max_order,
            n: autocov.values().len(),
        });
    }
    let phi = autocov.values();
    let phi0 = phi[0];
    if !(phi0 > 0.0) {
        return Err(Error::Degenerate { order: 0 });
    }
    let mut fits = Vec::with_capacity(max_order + 1);
    fits.push(YwFit {
        order: 0,
        coeffs: Vec::new(),
        sigma2_hat: phi0,
        reflection: Vec::new(),
    });
    let mut coeffs: Vec<f64> = Vec::with_capacity(max_order);
    let mut reflection: Vec<f64> = Vec::with_capacity(max_order);
    let mut err = phi0;
    for m in 1..=max_order {
        let acc: f64 = (1..m).map(|i| coeffs[i - 1] * phi[m - i]).sum();
        let k = (phi[m] - acc) / err;
        if !k.is_finite() || k.abs() >= 1.0 {
            return Err(Error::Degenerate { order: m });
        }
        let mut next: Vec<f64> = (1..m)
            .map(|i| coeffs[i - 1] - k * coeffs[m - i - 1])
            .collect();
        next.push(k);
        coeffs = next;
        reflection.push(k);
        err *= 1.0 - k * k;
        if !(err > 0.0) {
            return Err(Error::Degenerate { order: m });
        }
        fits.push(YwFit {
            order: m,
            coeffs: coeffs.clone(),
            sigma2_hat: err,
            reflection: reflection.clone(),
        });
    }
    Ok(SequentialFits { phi0, fits })
}

fn checked_cholesky(autocov: &AutocovSequence, m: usize) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let gamma = autocov.toeplitz(m)?;
    let floor = PIVOT_TOLERANCE * autocov.lag(0).abs();
    let chol = Cholesky::new(gamma).ok_or(Error::NotPositiveDefinite { order: m })?;
    let l = chol.l_dirty();
    if (0..m).any(|i| l[(i, i)] * l[(i, i)] <= floor) {
        return Err(Error::NotPositiveDefinite { order: m });
    }
    Ok(chol)
}

/// Solves `Gamma_m theta = Phi_m` by a dense Cholesky factorisation.
pub fn toeplitz_solve_direct(autocov: &AutocovSequence, m: usize) -> Result<YwFit> {
    if m > autocov.max_lag() {
        return Err(Error::LagTooLarge {
            max_lag: m,
            n: autocov.values().len(),
        });
    }
    let phi = autocov.values();
    if !(phi[0] > 0.0) {
        return Err(Error::NotPositiveDefinite { order: m });
    }
    if m == 0 {
        return Ok(YwFit {
            order: 0,
            coeffs: Vec::new(),
            sigma2_hat: phi[0],
            reflection: Vec::new(),
        });
    }
    let chol = checked_cholesky(autocov, m)?;
    let rhs = DVector::from_column_slice(&phi[1..=m]);
    let sol = chol.solve(&rhs);
    let coeffs: Vec<f64> = sol.iter().copied().collect();
    let sigma2_hat = phi[0]
        - coeffs
            .iter()
            .zip(&phi[1..])
            .map(|(t, p)| t * p)
            .sum::<f64>();
    let reflection = step_down(&coeffs).ok_or(Error::Degenerate { order: m })?;
    Ok(YwFit {
        order: m,
        coeffs,
        sigma2_hat,
        reflection,
    })
}

/// Diagonal of `Gamma_m^{-1}`, optionally with the full inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseDiagonal {
    pub order: usize,
    pub diag: Vec<f64>,
    pub full: Option<DMatrix<f64>>,
}

impl InverseDiagonal {
    fn from_full(full: DMatrix<f64>, keep_full: bool) -> Result<Self> {
        let order = full.nrows();
        let diag: Vec<f64> = full.diagonal().iter().copied().collect();
        if diag.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::NotPositiveDefinite { order });
        }
        Ok(Self {
            order,
            diag,
            full: keep_full.then_some(full),
        })
    }
}

/// Dense reference path: inverse of `Gamma_m` from its Cholesky factor.
pub fn inverse_diagonal(
    autocov: &AutocovSequence,
    m: usize,
    keep_full: bool,
) -> Result<InverseDiagonal> {
    if m == 0 {
        return Ok(InverseDiagonal {
            order: 0,
            diag: Vec::new(),
            full: keep_full.then(|| DMatrix::zeros(0, 0)),
        });
    }
    let chol = checked_cholesky(autocov, m)?;
    InverseDiagonal::from_full(chol.inverse(), keep_full)
}

/// `sigma^2 gamma*_{i,j}` (1-based `i <= j`) for the `m x m` inverse
/// covariance of an AR(p) process with coefficients `coeffs` (`p <= m`),
/// using the convention `theta_0 = -1`.
fn scaled_inverse_entry(coeffs: &[f64], m: usize, i: usize, j: usize) -> f64 {
    let p = coeffs.len();
    let lag = j - i;
    if lag > p {
        return 0.0;
    }
    let theta = |r: usize| -> f64 {
        match r {
            0 => -1.0,
            r if r <= p => coeffs[r - 1],
            _ => 0.0,
        }
    };
    let upper_first = (i - 1).min(p + i - j).min(m - j);
    let first: f64 = (0..=upper_first).map(|r| theta(r) * theta(r + lag)).sum();
    let lower_second = i.max(m + 1 - j);
    let upper_second = p + i - j;
    let second: f64 = (lower_second..=upper_second)
        .map(|r| theta(r) * theta(r + lag))
        .sum();
    first - second
}

fn closed_form_inverse(coeffs: &[f64], sigma2: f64, m: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m, m);
    for i in 1..=m {
        for j in i..=m {
            let v = scaled_inverse_entry(coeffs, m, i, j) / sigma2;
            out[(i - 1, j - 1)] = v;
            out[(j - 1, i - 1)] = v;
        }
    }
    out
}

/// Structured path: `Gamma_m^{-1}` from the order-`m` Yule-Walker fit, using
/// the fact that `Gamma_m` is the covariance matrix of the fitted AR(m)
/// model. The diagonal costs O(m^2) instead of O(m^3).
pub fn inverse_from_fit(fit: &YwFit, keep_full: bool) -> Result<InverseDiagonal> {
    let m = fit.order;
    if !(fit.sigma2_hat > 0.0) {
        return Err(Error::Degenerate { order: m });
    }
    if keep_full {
        return InverseDiagonal::from_full(
            closed_form_inverse(&fit.coeffs, fit.sigma2_hat, m),
            true,
        );
    }
    let diag: Vec<f64> = (1..=m)
        .map(|i| scaled_inverse_entry(&fit.coeffs, m, i, i) / fit.sigma2_hat)
        .collect();
    if diag.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(Error::NotPositiveDefinite { order: m });
    }
    Ok(InverseDiagonal {
        order: m,
        diag,
        full: None,
    })
}

/// Exact `Gamma_m^{-1}` of a true causal AR model with `m >= order`, by the
/// closed-form double-sum expression in the model coefficients.
pub fn exact_inverse_true(model: &ArModel, m: usize) -> Result<DMatrix<f64>> {
    if m < model.order() {
        return Err(Error::InvalidDimension(format!(
            "inverse dimension {m} is below the model order {}",
            model.order()
        )));
    }
    if !crate::ar_model::validate_causal(model) {
        return Err(Error::NotCausal);
    }
    Ok(closed_form_inverse(model.coeffs(), model.sigma2(), m))
}

/// Sample autocovariance, Levinson-Durbin and the dense inverse diagonal at
/// order `d_n`.
pub fn fit(series: &TimeSeries, d_n: usize) -> Result<(SequentialFits, InverseDiagonal)> {
    let acv = sample_autocovariance(series, d_n)?;
    let fits = levinson_durbin(&acv, d_n)?;
    let inv = inverse_diagonal(&acv, d_n, false)?;
    Ok((fits, inv))
}
