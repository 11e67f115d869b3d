//! Forward diffusion noising.
//!
//! Produces the information-free copy of the test input by jumping straight to
//! step `t` of the forward process:
//! `x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps`, `eps ~ N(0, I)`.
//! Outputs are not clamped.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Noise schedule with cumulative products precomputed. Steps are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    /// `steps` betas spaced linearly from `beta_start` to `beta_end` inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidSchedule("step count must be positive".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas = if steps == 1 {
            vec![beta_start]
        } else {
            let span = beta_end - beta_start;
            let last = (steps - 1) as f64;
            (0..steps)
                .map(|i| beta_start + span * i as f64 / last)
                .collect()
        };
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidSchedule("empty schedule".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidSchedule(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Number of steps `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Cumulative product up to step `t` (1-based).
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.len() {
            return Err(Error::StepOutOfRange { t, max: self.len() });
        }
        Ok(self.alpha_bars[t - 1])
    }
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}

/// Row-major real tensor; serialized as `{"shape": [...], "values": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let t = Self { shape, values };
        t.validate()?;
        Ok(t)
    }

    /// 1-D tensor over `values`.
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        Self::new(vec![values.len()], values)
    }

    pub fn validate(&self) -> Result<()> {
        let count: usize = self.shape.iter().product();
        if self.shape.is_empty() || count == 0 {
            return Err(Error::InvalidTensor(format!(
                "zero-size shape {:?}",
                self.shape
            )));
        }
        if count != self.values.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {:?} holds {count} values, found {}",
                self.shape,
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor"));
        }
        Ok(())
    }
}

/// Noises `x0` to step `t` of `schedule` with noise drawn from `seed`.
pub fn diffuse(x0: &Tensor, t: usize, schedule: &DiffusionSchedule, seed: u64) -> Result<Tensor> {
    x0.validate()?;
    let alpha_bar = schedule.alpha_bar(t)?;
    diffuse_with_alpha_bar(x0, alpha_bar, seed)
}

/// Closed-form noising at an explicit cumulative product `alpha_bar` in `[0, 1]`.
///
/// `alpha_bar == 1` returns `x0` bit for bit.
pub fn diffuse_with_alpha_bar(x0: &Tensor, alpha_bar: f64, seed: u64) -> Result<Tensor> {
    x0.validate()?;
    if !(0.0..=1.0).contains(&alpha_bar) {
        return Err(Error::InvalidSchedule(format!(
            "alpha_bar {alpha_bar} outside [0, 1]"
        )));
    }
    if alpha_bar == 1.0 {
        return Ok(x0.clone());
    }
    let signal = alpha_bar.sqrt();
    let noise = (1.0 - alpha_bar).sqrt();
    let mut rng = rng::seeded(seed);
    let values = x0
        .values
        .iter()
        .map(|x| {
            let eps: f64 = StandardNormal.sample(&mut rng);
            signal * x + noise * eps
        })
        .collect();
    Ok(Tensor {
        shape: x0.shape.clone(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let (ma, va) = mean_var(a);
        let (mb, vb) = mean_var(b);
        let n = a.len() as f64;
        let cov = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / (n - 1.0);
        cov / (va.sqrt() * vb.sqrt())
    }

    #[test]
    fn linear_schedule_examples() {
        let s = DiffusionSchedule::linear(1, 0.05, 0.05).unwrap();
        assert_eq!(s.betas(), &[0.05]);

        let s = DiffusionSchedule::linear(2, 0.1, 0.3).unwrap();
        assert_relative_eq!(s.betas()[1], 0.3, epsilon = 1e-15);
        assert_relative_eq!(s.alpha_bars()[0], 0.9, epsilon = 1e-12);
        assert_relative_eq!(s.alpha_bars()[1], 0.63, epsilon = 1e-12);

        assert!(DiffusionSchedule::linear(10, 0.1, 1.0).is_err());
        assert!(DiffusionSchedule::linear(10, 0.0, 0.5).is_err());
        assert!(DiffusionSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(DiffusionSchedule::linear(0, 0.1, 0.2).is_err());
    }

    #[test]
    fn default_schedule_is_monotone() {
        let s = DiffusionSchedule::default();
        assert_eq!(s.len(), 1000);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        let mut prod = 1.0;
        for (i, b) in s.betas().iter().enumerate() {
            prod *= 1.0 - b;
            assert!((s.alpha_bars()[i] - prod).abs() <= 1e-12);
        }
        assert!(s.alpha_bars().iter().all(|a| *a > 0.0 && *a <= 1.0));
    }

    #[test]
    fn step_bounds() {
        let s = DiffusionSchedule::linear(5, 0.1, 0.2).unwrap();
        let x = Tensor::from_vec(vec![1.0]).unwrap();
        assert!(matches!(
            diffuse(&x, 0, &s, 1),
            Err(Error::StepOutOfRange { .. })
        ));
        assert!(matches!(
            diffuse(&x, 6, &s, 1),
            Err(Error::StepOutOfRange { .. })
        ));
        assert!(diffuse(&x, 5, &s, 1).is_ok());
    }

    #[test]
    fn rejects_zero_size_tensor() {
        let x = Tensor {
            shape: vec![0, 3],
            values: vec![],
        };
        assert!(diffuse(&x, 1, &DiffusionSchedule::default(), 0).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn identity_and_pure_noise_limits() {
        let x = Tensor::new(vec![2, 2], vec![0.25, -0.0, 1.0, 0.5]).unwrap();
        let same = diffuse_with_alpha_bar(&x, 1.0, 9).unwrap();
        let bits: Vec<u64> = same.values.iter().map(|v| v.to_bits()).collect();
        let want: Vec<u64> = x.values.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, want);

        let noise = diffuse_with_alpha_bar(&x, 0.0, 9).unwrap();
        let zeros = Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap();
        assert_eq!(noise, diffuse_with_alpha_bar(&zeros, 0.0, 9).unwrap());
    }

    #[test]
    fn deterministic_under_seed() {
        let x = Tensor::from_vec((0..64).map(|i| i as f64 / 64.0).collect()).unwrap();
        let s = DiffusionSchedule::default();
        assert_eq!(
            diffuse(&x, 500, &s, 42).unwrap(),
            diffuse(&x, 500, &s, 42).unwrap()
        );
        assert_ne!(
            diffuse(&x, 500, &s, 42).unwrap(),
            diffuse(&x, 500, &s, 43).unwrap()
        );
    }

    #[test]
    fn closed_form_moments() {
        let n = 20_000;
        let x = Tensor::from_vec(vec![1.0; n]).unwrap();
        let out = diffuse_with_alpha_bar(&x, 0.25, 2024).unwrap();
        let (mean, var) = mean_var(&out.values);
        let sigma = 0.75f64.sqrt();
        assert!(
            (mean - 0.5).abs() <= 3.0 * sigma / (n as f64).sqrt(),
            "mean {mean}"
        );
        assert!((var - 0.75).abs() <= 0.02 * 0.75, "var {var}");
    }

    /// Iterating the one-step update must match the closed form in distribution.
    #[test]
    fn iterative_process_matches_closed_form_moments() {
        let s = DiffusionSchedule::linear(200, 1e-3, 0.02).unwrap();
        let t = 150;
        let n = 20_000;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let iterated: Vec<f64> = (0..n)
            .map(|_| {
                let mut x = 1.0;
                for a in &s.alphas()[..t] {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    x = a.sqrt() * x + (1.0 - a).sqrt() * eps;
                }
                x
            })
            .collect();
        let abar = s.alpha_bar(t).unwrap();
        let (mean, var) = mean_var(&iterated);
        let sd = (1.0 - abar).sqrt();
        assert!((mean - abar.sqrt()).abs() <= 3.0 * sd / (n as f64).sqrt());
        assert!((var - (1.0 - abar)).abs() <= 0.02 * (1.0 - abar));

        let closed = diffuse(&Tensor::from_vec(vec![1.0; n]).unwrap(), t, &s, 5).unwrap();
        let (cm, cv) = mean_var(&closed.values);
        assert!((cm - mean).abs() <= 6.0 * sd / (n as f64).sqrt());
        assert!((cv - var).abs() <= 0.04 * (1.0 - abar));
    }

    #[test]
    fn correlation_with_input_decays() {
        // Smooth gradient "image".
        let side = 64;
        let img: Vec<f64> = (0..side * side)
            .map(|i| ((i / side) as f64 / side as f64 + (i % side) as f64 / side as f64) / 2.0)
            .collect();
        let x = Tensor::new(vec![side, side], img.clone()).unwrap();
        let s = DiffusionSchedule::default();
        let corr: Vec<f64> = [100, 500, 900]
            .iter()
            .map(|&t| pearson(&img, &diffuse(&x, t, &s, 3).unwrap().values))
            .collect();
        assert!(corr[0] > corr[1] && corr[1] > corr[2], "{corr:?}");
    }
}
