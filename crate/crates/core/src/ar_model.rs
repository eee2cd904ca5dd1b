//! True autoregressive processes: causality, exact autocovariances and
//! simulation of sample paths.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of discarded start-up observations.
pub const DEFAULT_BURN_IN: usize = 1000;

/// Distribution of the driving noise, always mean zero and rescaled to the
/// model's innovation variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum InnovationLaw {
    #[default]
    Gaussian,
    StudentT {
        df: f64,
    },
    Uniform,
}

impl InnovationLaw {
    fn validate(&self) -> Result<()> {
        match *self {
            InnovationLaw::StudentT { df } if !(df > 4.0) || !df.is_finite() => Err(
                Error::InvalidModel(format!("student-t innovations need df > 4, got {df}")),
            ),
            _ => Ok(()),
        }
    }
}

/// An AR(q) process `X_k = theta_1 X_{k-1} + ... + theta_q X_{k-q} + eps_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    coeffs: Vec<f64>,
    sigma2: f64,
    #[serde(default)]
    innovation: InnovationLaw,
}

impl ArModel {
    pub fn new(coeffs: Vec<f64>, sigma2: f64, innovation: InnovationLaw) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidModel(format!(
                "innovation variance must be positive, got {sigma2}"
            )));
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "coefficient {} is not finite",
                i + 1
            )));
        }
        innovation.validate()?;
        Ok(Self {
            coeffs,
            sigma2,
            innovation,
        })
    }

    pub fn gaussian(coeffs: Vec<f64>, sigma2: f64) -> Result<Self> {
        Self::new(coeffs, sigma2, InnovationLaw::Gaussian)
    }

    /// Builds the causal model whose step-down reflection coefficients are
    /// `reflection` (each must lie strictly inside (-1, 1)).
    pub fn from_reflection(reflection: &[f64], sigma2: f64) -> Result<Self> {
        if reflection.iter().any(|k| !(k.abs() < 1.0)) {
            return Err(Error::NotCausal);
        }
        Self::gaussian(step_up(reflection), sigma2)
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn innovation(&self) -> InnovationLaw {
        self.innovation
    }

    /// Coefficient `theta_i` for `i >= 1`, zero past the order.
    pub fn coeff(&self, i: usize) -> f64 {
        if i == 0 || i > self.coeffs.len() {
            0.0
        } else {
            self.coeffs[i - 1]
        }
    }
}

/// Observed sample path.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySeries);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Copy with the sample mean removed.
    pub fn centered(&self) -> Self {
        let m = self.mean();
        Self {
            values: self.values.iter().map(|v| v - m).collect(),
        }
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutocovSource {
    Sample,
    Exact,
}

/// Autocovariances `(phi_0, ..., phi_H)` indexed by lag.
#[derive(Debug, Clone, PartialEq)]
pub struct AutocovSequence {
    values: Vec<f64>,
    source: AutocovSource,
}

impl AutocovSequence {
    pub fn new(values: Vec<f64>, source: AutocovSource) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDimension(
                "autocovariance sequence needs at least lag 0".into(),
            ));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { values, source })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source(&self) -> AutocovSource {
        self.source
    }

    pub fn max_lag(&self) -> usize {
        self.values.len() - 1
    }

    pub fn lag(&self, h: usize) -> f64 {
        self.values[h]
    }

    /// The `m x m` Toeplitz matrix `(phi_{|i-j|})`.
    pub fn toeplitz(&self, m: usize) -> Result<DMatrix<f64>> {
        if m > 0 && m - 1 > self.max_lag() {
            return Err(Error::LagTooLarge {
                max_lag: m - 1,
                n: self.values.len(),
            });
        }
        Ok(DMatrix::from_fn(m, m, |i, j| self.values[i.abs_diff(j)]))
    }
}

/// Step-down (reverse Levinson) recursion. Returns the reflection
/// coefficients `k_1..k_p` of the AR polynomial with coefficients `coeffs`,
/// or `None` when some `|k_j| >= 1` or a division degenerates.
pub fn step_down(coeffs: &[f64]) -> Option<Vec<f64>> {
    let p = coeffs.len();
    let mut reflection = vec![0.0; p];
    let mut cur = coeffs.to_vec();
    for m in (1..=p).rev() {
        let k = cur[m - 1];
        if !k.is_finite() || k.abs() >= 1.0 {
            return None;
        }
        reflection[m - 1] = k;
        let denom = 1.0 - k * k;
        if !(denom > 0.0) {
            return None;
        }
        let prev: Vec<f64> = (1..m)
            .map(|i| (cur[i - 1] + k * cur[m - i - 1]) / denom)
            .collect();
        cur = prev;
    }
    Some(reflection)
}

/// Inverse of [`step_down`]: AR coefficients from reflection coefficients.
pub fn step_up(reflection: &[f64]) -> Vec<f64> {
    let mut coeffs: Vec<f64> = Vec::with_capacity(reflection.len());
    for (idx, &k) in reflection.iter().enumerate() {
        let m = idx + 1;
        let mut next: Vec<f64> = (1..m)
            .map(|i| coeffs[i - 1] - k * coeffs[m - i - 1])
            .collect();
        next.push(k);
        coeffs = next;
    }
    coeffs
}

/// True iff `1 - theta_1 z - ... - theta_q z^q` has no zero in `|z| <= 1`.
pub fn validate_causal(model: &ArModel) -> bool {
    step_down(model.coeffs()).is_some()
}

/// Exact autocovariances `phi_0..phi_{max_lag}` of a causal model, built
/// from the reflection coefficients by running Levinson-Durbin backwards.
pub fn true_autocovariance(model: &ArModel, max_lag: usize) -> Result<AutocovSequence> {
    let reflection = step_down(model.coeffs()).ok_or(Error::NotCausal)?;
    let q = model.order();
    let phi0 = model.sigma2() / reflection.iter().map(|k| 1.0 - k * k).product::<f64>();
    let mut values = Vec::with_capacity(max_lag.max(q) + 1);
    values.push(phi0);
    let mut coeffs: Vec<f64> = Vec::with_capacity(q);
    let mut err = phi0;
    for (idx, &k) in reflection.iter().enumerate() {
        let m = idx + 1;
        // k_m = (phi_m - sum_i theta_i(m-1) phi_{m-i}) / sigma^2(m-1)
        let acc: f64 = (1..m).map(|i| coeffs[i - 1] * values[m - i]).sum();
        values.push(acc + k * err);
        let mut next: Vec<f64> = (1..m)
            .map(|i| coeffs[i - 1] - k * coeffs[m - i - 1])
            .collect();
        next.push(k);
        coeffs = next;
        err *= 1.0 - k * k;
    }
    for h in (q + 1)..=max_lag {
        let next = (1..=q).map(|i| model.coeff(i) * values[h - i]).sum();
        values.push(next);
    }
    values.truncate(max_lag + 1);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("autocovariances overflow".into()));
    }
    AutocovSequence::new(values, AutocovSource::Exact)
}

enum Innovations {
    Gaussian(Normal<f64>),
    StudentT(StudentT<f64>, f64),
    Uniform(Uniform<f64>),
}

impl Innovations {
    fn new(law: InnovationLaw, sigma2: f64) -> Result<Self> {
        let sd = sigma2.sqrt();
        let bad = |e: String| Error::InvalidModel(e);
        Ok(match law {
            InnovationLaw::Gaussian => {
                Innovations::Gaussian(Normal::new(0.0, sd).map_err(|e| bad(e.to_string()))?)
            }
            InnovationLaw::StudentT { df } => Innovations::StudentT(
                StudentT::new(df).map_err(|e| bad(e.to_string()))?,
                sd * ((df - 2.0) / df).sqrt(),
            ),
            InnovationLaw::Uniform => {
                let half = (3.0 * sigma2).sqrt();
                Innovations::Uniform(
                    Uniform::new_inclusive(-half, half).map_err(|e| bad(e.to_string()))?,
                )
            }
        })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Innovations::Gaussian(d) => d.sample(rng),
            Innovations::StudentT(d, scale) => scale * d.sample(rng),
            Innovations::Uniform(d) => d.sample(rng),
        }
    }
}

/// Simulates `burn_in + n` observations from a zero initial state and
/// returns the last `n`. Deterministic in `(model, n, burn_in, seed)`.
pub fn simulate(model: &ArModel, n: usize, burn_in: usize, seed: u64) -> Result<TimeSeries> {
    if !validate_causal(model) {
        return Err(Error::NotCausal);
    }
    if n == 0 {
        return Err(Error::EmptySeries);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Innovations::new(model.innovation(), model.sigma2())?;
    let coeffs = model.coeffs();
    let total = burn_in + n;
    let mut path = Vec::with_capacity(total);
    for k in 0..total {
        let mut x = noise.draw(&mut rng);
        for (i, &c) in coeffs.iter().enumerate() {
            if let Some(back) = k.checked_sub(i + 1) {
                x += c * path[back];
            }
        }
        path.push(x);
    }
    TimeSeries::new(path.split_off(burn_in))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ar(coeffs: &[f64]) -> ArModel {
        ArModel::gaussian(coeffs.to_vec(), 1.0).unwrap()
    }

    #[test]
    fn causality_examples() {
        assert!(validate_causal(&ar(&[0.5])));
        assert!(!validate_causal(&ar(&[1.0])));
        assert!(validate_causal(&ar(&[0.1, -0.3, 0.05, 0.2, -0.1, 0.2])));
        assert!(validate_causal(&ar(&[])));
        assert!(!validate_causal(&ar(&[0.5, 0.6])));
    }

    #[test]
    fn step_up_inverts_step_down() {
        let theta = [0.1, -0.3, 0.05, 0.2, -0.1, 0.2];
        let k = step_down(&theta).unwrap();
        let back = step_up(&k);
        for (a, b) in theta.iter().zip(&back) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_models() {
        assert!(ArModel::gaussian(vec![0.5], 0.0).is_err());
        assert!(ArModel::new(vec![0.5], 1.0, InnovationLaw::StudentT { df: 3.0 }).is_err());
        assert!(ArModel::gaussian(vec![f64::NAN], 1.0).is_err());
    }

    #[test]
    fn ar1_autocovariance_closed_form() {
        let acv = true_autocovariance(&ar(&[0.5]), 1).unwrap();
        assert!((acv.lag(0) - 4.0 / 3.0).abs() < 1e-14);
        assert!((acv.lag(1) - 2.0 / 3.0).abs() < 1e-14);
        assert_eq!(acv.source(), AutocovSource::Exact);
    }

    #[test]
    fn white_noise_autocovariance() {
        let model = ArModel::gaussian(vec![0.0, 0.0], 2.0).unwrap();
        let acv = true_autocovariance(&model, 3).unwrap();
        assert_eq!(acv.values(), &[2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn truncates_below_order() {
        let model = ar(&[0.3, -0.2, 0.1]);
        let acv = true_autocovariance(&model, 1).unwrap();
        assert_eq!(acv.values().len(), 2);
    }

    #[test]
    fn non_causal_autocovariance_fails() {
        assert_eq!(true_autocovariance(&ar(&[1.2]), 3), Err(Error::NotCausal));
        assert_eq!(simulate(&ar(&[1.0]), 10, 0, 1), Err(Error::NotCausal));
    }

    #[test]
    fn white_noise_simulation_is_raw_innovations() {
        let model = ar(&[]);
        let s = simulate(&model, 100_000, DEFAULT_BURN_IN, 11).unwrap();
        let n = s.len() as f64;
        let var = s.values().iter().map(|v| v * v).sum::<f64>() / n;
        assert!((var - 1.0).abs() < 3.0 / n.sqrt() * 2.0f64.sqrt());

        // with zero coefficients the path is exactly the noise stream
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let raw: Vec<f64> = (0..15).map(|_| normal.sample(&mut rng)).collect();
        let sim = simulate(&ar(&[0.0, 0.0]), 10, 5, 5).unwrap();
        assert_eq!(sim.values(), &raw[5..]);
    }

    #[test]
    fn simulation_is_deterministic() {
        let model = ar(&[0.5, -0.25]);
        let a = simulate(&model, 500, 100, 42).unwrap();
        let b = simulate(&model, 500, 100, 42).unwrap();
        let c = simulate(&model, 500, 100, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn ar1_lag_one_autocorrelation() {
        let s = simulate(&ar(&[0.9]), 100_000, DEFAULT_BURN_IN, 3).unwrap();
        let x = s.values();
        let c0: f64 = x.iter().map(|v| v * v).sum();
        let c1: f64 = x.windows(2).map(|w| w[0] * w[1]).sum();
        assert!((c1 / c0 - 0.9).abs() < 0.01);
    }

    #[test]
    fn other_innovation_laws_have_target_variance() {
        for law in [InnovationLaw::StudentT { df: 8.0 }, InnovationLaw::Uniform] {
            let model = ArModel::new(vec![], 2.0, law).unwrap();
            let s = simulate(&model, 100_000, 0, 9).unwrap();
            let var = s.values().iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
            assert!((var / 2.0 - 1.0).abs() < 0.05, "{law:?}: {var}");
        }
    }

    #[test]
    fn time_series_validation() {
        assert_eq!(TimeSeries::new(vec![]), Err(Error::EmptySeries));
        assert_eq!(
            TimeSeries::new(vec![1.0, f64::INFINITY]),
            Err(Error::NonFinite { index: 1 })
        );
        let s = TimeSeries::new(vec![1.0, 2.0, 3.0]).unwrap().centered();
        assert_eq!(s.values(), &[-1.0, 0.0, 1.0]);
    }
}
