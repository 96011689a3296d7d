use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::models::LatentMap;
use crate::numerics::Tensor;

/// The three numbers that determine a linear schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleSpec {
    /// The common `[1e-4, 0.02]` thousand-step range rescaled by
    /// `1000 / t_max`, so a short chain still ends near pure noise. The end
    /// value is capped at 0.5.
    pub fn scaled(t_max: usize) -> Self {
        let s = 1000.0 / t_max.max(1) as f64;
        Self { t_max, beta_start: (1e-4 * s).min(0.5), beta_end: (0.02 * s).min(0.5) }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        build_schedule(self.t_max, self.beta_start, self.beta_end)
    }

    /// FNV-1a over the little-endian bytes of the three fields.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let bytes = (self.t_max as u64)
            .to_le_bytes()
            .into_iter()
            .chain(self.beta_start.to_bits().to_le_bytes())
            .chain(self.beta_end.to_bits().to_le_bytes());
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self::scaled(50)
    }
}

/// Per-step tables, indexed by `t = 1..=t_max`; `ᾱ_0 = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub spec: ScheduleSpec,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

pub fn build_schedule(t_max: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t_max == 0 {
        bail!(Config, "schedule needs at least one step");
    }
    if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        bail!(Config, "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]");
    }
    let beta: Vec<f64> = (0..t_max)
        .map(|i| {
            if t_max == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (t_max - 1) as f64
            }
        })
        .collect();
    let mut alpha_bar = Vec::with_capacity(t_max + 1);
    alpha_bar.push(1.0);
    for b in &beta {
        let prev = *alpha_bar.last().expect("non-empty");
        alpha_bar.push(prev * (1.0 - b));
    }
    Ok(NoiseSchedule { spec: ScheduleSpec { t_max, beta_start, beta_end }, beta, alpha_bar })
}

impl NoiseSchedule {
    pub fn t_max(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Reverse-step noise scale: `√β_t`, and zero at the last step.
    pub fn sigma(&self, t: usize) -> f64 {
        if t <= 1 {
            0.0
        } else {
            self.beta(t).sqrt()
        }
    }

    fn check_t(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.t_max() {
            bail!(Contract, "timestep {t} outside [{lo}, {}]", self.t_max());
        }
        Ok(())
    }
}

/// `√ᾱ_t·y + √(1−ᾱ_t)·ε` on plain tensors.
pub fn diffuse(y: &Tensor<f32>, t: usize, eps: &Tensor<f32>, sched: &NoiseSchedule) -> Result<Tensor<f32>> {
    sched.check_t(t, 0)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    y.zip_map(eps, |yv, ev| (a * yv as f64 + b * ev as f64) as f32)
}

/// Noise a clean latent to step `t` (`t = 0` returns it unchanged).
pub fn forward_diffuse(y: &LatentMap, t: usize, eps: &Tensor<f32>, sched: &NoiseSchedule) -> Result<LatentMap> {
    if y.timestep().is_some() {
        bail!(Contract, "forward diffusion starts from a clean latent");
    }
    let v = diffuse(&y.values, t, eps, sched)?;
    Ok(if t == 0 { LatentMap::clean(v) } else { LatentMap::noisy(v, t) })
}

/// `(1/√α)·(y − ((1−α)/√(1−ᾱ))·ε̂) + σ·z`.
pub fn ddpm_update(
    y: &Tensor<f32>,
    eps_hat: &Tensor<f32>,
    z: &Tensor<f32>,
    alpha: f64,
    alpha_bar: f64,
    sigma: f64,
) -> Result<Tensor<f32>> {
    y.expect_same_shape(eps_hat)?;
    y.expect_same_shape(z)?;
    let c = (1.0 - alpha) / (1.0 - alpha_bar).sqrt();
    let inv = 1.0 / alpha.sqrt();
    Ok(Tensor::from_fn(y.shape(), |i| {
        let mean = inv * (y.data()[i] as f64 - c * eps_hat.data()[i] as f64);
        (mean + sigma * z.data()[i] as f64) as f32
    }))
}

/// One ancestral step from `t` to `t − 1`. `z` is ignored when `σ_t = 0`.
pub fn reverse_step(y: &LatentMap, eps_hat: &Tensor<f32>, sched: &NoiseSchedule, z: &Tensor<f32>) -> Result<LatentMap> {
    let Some(t) = y.timestep() else { bail!(Contract, "reverse step needs a noisy latent") };
    if t == 0 {
        bail!(Contract, "no reverse step below timestep 1");
    }
    sched.check_t(t, 1)?;
    let v = ddpm_update(&y.values, eps_hat, z, sched.alpha(t), sched.alpha_bar(t), sched.sigma(t))?;
    Ok(if t == 1 { LatentMap::clean(v) } else { LatentMap::noisy(v, t - 1) })
}

/// `(y_t − √(1−ᾱ)·ε) / √ᾱ`.
pub fn predict_x0(y: &Tensor<f32>, eps: &Tensor<f32>, t: usize, sched: &NoiseSchedule) -> Result<Tensor<f32>> {
    sched.check_t(t, 0)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    y.zip_map(eps, |yv, ev| ((yv as f64 - b * ev as f64) / a) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    #[test]
    fn single_step_schedule() {
        let s = build_schedule(1, 0.3, 0.3).unwrap();
        assert_eq!(s.alpha_bar(1), 1.0 - 0.3);
        assert_eq!(s.sigma(1), 0.0);
    }

    #[test]
    fn constant_half_schedule() {
        let s = build_schedule(2, 0.5, 0.5).unwrap();
        assert_eq!([s.alpha_bar(1), s.alpha_bar(2)], [0.5, 0.25]);
        assert_eq!(s.sigma(2), 0.5f64.sqrt());
    }

    #[test]
    fn invalid_ranges_rejected() {
        for (a, b) in [(0.0, 0.1), (0.2, 0.1), (0.1, 1.0), (-0.1, 0.2)] {
            assert!(matches!(build_schedule(10, a, b), Err(crate::Error::Config(_))));
        }
        assert!(build_schedule(0, 0.1, 0.2).is_err());
    }

    #[test]
    fn default_schedule_ends_near_pure_noise() {
        let s = ScheduleSpec::default().build().unwrap();
        assert_eq!(s.t_max(), 50);
        assert!(s.alpha_bar(50) < 1e-3);
    }

    proptest! {
        #[test]
        fn alpha_bar_strictly_decreasing(t_max in 1usize..200, a in 1e-5f64..0.5, d in 0.0f64..0.49) {
            let s = build_schedule(t_max, a, (a + d).min(0.99)).unwrap();
            for t in 1..=t_max {
                prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
                prop_assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
            }
        }
    }

    #[test]
    fn forward_hand_case() {
        let s = build_schedule(2, 0.5, 0.5).unwrap();
        let y = LatentMap::clean(Tensor::scalar(2.0));
        let out = forward_diffuse(&y, 2, &Tensor::scalar(1.0), &s).unwrap();
        assert!((out.values.item().unwrap() as f64 - (1.0 + 0.75f64.sqrt())).abs() < 1e-6);
        assert_eq!(out.timestep(), Some(2));
        let same = forward_diffuse(&y, 0, &Tensor::scalar(1.0), &s).unwrap();
        assert_eq!(same, y);
        assert!(matches!(forward_diffuse(&y, 3, &Tensor::scalar(1.0), &s), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn reverse_hand_case() {
        let one = |v: f32| Tensor::scalar(v);
        let out = ddpm_update(&one(1.0), &one(0.2), &one(5.0), 0.99, 0.5, 0.0).unwrap();
        let want = (1.0 - 0.01 / 0.5f64.sqrt() * 0.2) / 0.99f64.sqrt();
        assert!((out.item().unwrap() as f64 - want).abs() < 1e-6);
        assert!((want - 1.0021951).abs() < 1e-6);
        let pure = ddpm_update(&one(1.0), &one(0.0), &one(0.0), 0.81, 0.5, 0.0).unwrap();
        assert!((pure.item().unwrap() - 1.0 / 0.9).abs() < 1e-6);
    }

    #[test]
    fn reverse_step_contracts() {
        let s = build_schedule(5, 0.01, 0.2).unwrap();
        let z = Tensor::zeros(&[2]);
        assert!(matches!(reverse_step(&LatentMap::clean(z.clone()), &z, &s, &z), Err(crate::Error::Contract(_))));
        assert!(matches!(reverse_step(&LatentMap::noisy(z.clone(), 0), &z, &s, &z), Err(crate::Error::Contract(_))));
        let last = reverse_step(&LatentMap::noisy(z.clone(), 1), &z, &s, &z).unwrap();
        assert_eq!(last.timestep(), None);
        let mid = reverse_step(&LatentMap::noisy(z.clone(), 3), &z, &s, &z).unwrap();
        assert_eq!(mid.timestep(), Some(2));
    }

    #[test]
    fn x0_identity() {
        let s = ScheduleSpec::default().build().unwrap();
        let mut rng = Rng::new(4);
        let y = Tensor::randn(&[4, 8, 8], &mut rng);
        for t in [1, 10, 25, 40] {
            let eps = Tensor::randn(&[4, 8, 8], &mut rng);
            let yt = diffuse(&y, t, &eps, &s).unwrap();
            let back = predict_x0(&yt, &eps, t, &s).unwrap();
            assert!(back.max_abs_diff(&y).unwrap() < 1e-5);
        }
    }

    #[test]
    fn monte_carlo_moments() {
        // Each draw is a whole latent-shaped ε; moments pool over draws and
        // elements of a constant latent.
        let s = ScheduleSpec::default().build().unwrap();
        let mut rng = Rng::new(9);
        let y = Tensor::full(&[4, 8, 8], 2.0f32);
        for t in [1, 10, 25] {
            let ab = s.alpha_bar(t);
            let (mut n, mut sum, mut sum2) = (0f64, 0f64, 0f64);
            for _ in 0..10_000 {
                let yt = diffuse(&y, t, &Tensor::randn(&[4, 8, 8], &mut rng), &s).unwrap();
                for &v in yt.data() {
                    n += 1.0;
                    sum += v as f64;
                    sum2 += (v as f64).powi(2);
                }
            }
            let mean = sum / n;
            let var = sum2 / n - mean * mean;
            let (m_want, v_want) = (ab.sqrt() * 2.0, 1.0 - ab);
            assert!((mean - m_want).abs() <= 0.02 * m_want, "t {t}: mean {mean} vs {m_want}");
            assert!((var - v_want).abs() <= 0.02 * v_want, "t {t}: var {var} vs {v_want}");
        }
    }
}
