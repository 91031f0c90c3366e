use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::rng::stream;
use crate::error::{Error, Result};
use crate::eval::SplitData;

/// Two interleaved spiral arms with a fixed number of flipped labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpiralsDataset {
    pub points: Vec<[f64; 2]>,
    /// Observed labels (after flipping).
    pub labels: Vec<u32>,
    pub clean_labels: Vec<u32>,
    pub flip_mask: Vec<bool>,
}

/// Largest angle reached by each arm.
pub const SPIRAL_TURN: f64 = 3.0 * std::f64::consts::PI;
/// Radial jitter, as a fraction of the maximum radius (1.0).
pub const RADIAL_JITTER: f64 = 0.05;

/// Generates `n` points, half per arm, and flips exactly `round(noise_rate * n)` labels
/// chosen uniformly at random.
pub fn gen_spirals(n: usize, noise_rate: f64, seed: u64) -> Result<SpiralsDataset> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::validation(format!("spirals need an even count of at least 4, got {n}")));
    }
    if !(0.0..0.5).contains(&noise_rate) {
        return Err(Error::validation(format!("noise rate must be in [0, 0.5), got {noise_rate}")));
    }
    let mut geo = stream(seed, 0, "spirals/geometry");
    let jitter = Normal::new(0.0, RADIAL_JITTER).expect("valid sigma");
    let mut points = Vec::with_capacity(n);
    let mut clean_labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % 2) as u32;
        let theta: f64 = geo.random_range(0.0..SPIRAL_TURN);
        let r = theta / SPIRAL_TURN + jitter.sample(&mut geo);
        let phase = theta + class as f64 * std::f64::consts::PI;
        points.push([r * phase.cos(), r * phase.sin()]);
        clean_labels.push(class);
    }
    let flips = (noise_rate * n as f64).round() as usize;
    let mut flip_mask = vec![false; n];
    let mut pick = stream(seed, 0, "spirals/flips");
    for i in sample(&mut pick, n, flips).iter() {
        flip_mask[i] = true;
    }
    let labels = clean_labels
        .iter()
        .zip(&flip_mask)
        .map(|(&y, &f)| if f { 1 - y } else { y })
        .collect();
    Ok(SpiralsDataset { points, labels, clean_labels, flip_mask })
}

impl SpiralsDataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> SpiralsDataset {
        SpiralsDataset {
            points: rows.iter().map(|&i| self.points[i]).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            clean_labels: rows.iter().map(|&i| self.clean_labels[i]).collect(),
            flip_mask: rows.iter().map(|&i| self.flip_mask[i]).collect(),
        }
    }

    pub fn split_data(&self) -> SplitData {
        SplitData {
            dim: 2,
            inputs: self.points.iter().flat_map(|p| p.iter().copied()).collect(),
            labels: self.labels.clone(),
        }
    }
}

/// Train, validation and test sets, all drawn from the same noisy generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthData {
    pub noise_rate: f64,
    pub train: SpiralsDataset,
    pub val: SpiralsDataset,
    pub test: SpiralsDataset,
}

impl SynthData {
    pub fn generate(n_train: usize, n_eval: usize, noise_rate: f64, seed: u64) -> Result<Self> {
        let sub = |tag: &str| stream(seed, 0, tag).random::<u64>();
        Ok(SynthData {
            noise_rate,
            train: gen_spirals(n_train, noise_rate, sub("data/train"))?,
            val: gen_spirals(n_eval, noise_rate, sub("data/val"))?,
            test: gen_spirals(n_eval, noise_rate, sub("data/test"))?,
        })
    }

    /// 1000 training points, 500 validation and 500 test points, 20% flipped labels.
    pub fn standard(seed: u64) -> Result<Self> {
        Self::generate(1000, 500, 0.2, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_noise_level() {
        let d = gen_spirals(1000, 0.2, 1).unwrap();
        assert_eq!(d.flip_mask.iter().filter(|&&f| f).count(), 200);
        for i in 0..d.len() {
            assert_eq!(d.flip_mask[i], d.labels[i] != d.clean_labels[i]);
        }
        let ones = d.clean_labels.iter().filter(|&&y| y == 1).count();
        assert_eq!(ones, 500);
    }

    #[test]
    fn zero_noise_and_determinism() {
        let d = gen_spirals(100, 0.0, 3).unwrap();
        assert_eq!(d.labels, d.clean_labels);
        assert!(d.flip_mask.iter().all(|&f| !f));
        assert_eq!(gen_spirals(100, 0.1, 9).unwrap(), gen_spirals(100, 0.1, 9).unwrap());
        assert_ne!(gen_spirals(100, 0.1, 9).unwrap(), gen_spirals(100, 0.1, 10).unwrap());
    }

    #[test]
    fn invalid_arguments() {
        assert!(gen_spirals(3, 0.1, 0).is_err());
        assert!(gen_spirals(10, 0.5, 0).is_err());
        assert!(gen_spirals(10, -0.1, 0).is_err());
    }

    #[test]
    fn points_stay_near_unit_disk() {
        let d = gen_spirals(1000, 0.2, 5).unwrap();
        let max_r = d.points.iter().map(|p| p[0].hypot(p[1])).fold(0.0, f64::max);
        assert!(max_r < 1.0 + 6.0 * RADIAL_JITTER);
    }
}
