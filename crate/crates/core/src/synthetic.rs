//! Seeded synthetic series: linear trend, sinusoidal seasonal profiles and
//! AR(1) noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::rng_for;
use crate::stats::{mad, MAD_TO_SD};

/// A series with injected anomalies and where they are.
#[derive(Debug, Clone, PartialEq)]
pub struct Injected {
    pub values: Vec<f64>,
    /// Spike positions, sorted.
    pub spikes: Vec<usize>,
    /// Every zeroed cell, sorted.
    pub zero_cells: Vec<usize>,
    /// Spike size in observations of the noise scale.
    pub spike_size: f64,
}

/// One seasonal profile: harmonic amplitudes of a period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub period: usize,
    /// Amplitude of harmonic `h + 1`.
    pub harmonics: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub level: f64,
    pub slope: f64,
    pub profiles: Vec<Profile>,
    pub ar: f64,
    pub innovation_sd: f64,
}

impl SyntheticSpec {
    /// One year of half-hourly data with daily and weekly cycles.
    pub fn half_hourly_year() -> Self {
        Self {
            n: 17_520,
            level: 100.0,
            slope: 0.001,
            profiles: vec![
                Profile {
                    period: 48,
                    harmonics: vec![10.0, 4.0],
                },
                Profile {
                    period: 336,
                    harmonics: vec![5.0],
                },
            ],
            ar: 0.9,
            innovation_sd: 1.0,
        }
    }

    pub fn periods(&self) -> Vec<usize> {
        self.profiles.iter().map(|p| p.period).collect()
    }

    /// Trend plus seasonal part at `t`.
    pub fn deterministic(&self, t: usize) -> f64 {
        let mut v = self.level + self.slope * t as f64;
        for p in &self.profiles {
            let phase = 2.0 * std::f64::consts::PI * t as f64 / p.period as f64;
            for (h, a) in p.harmonics.iter().enumerate() {
                v += a * ((h + 1) as f64 * phase).sin();
            }
        }
        v
    }

    pub fn generate(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng_for(seed, 0x7379_6e74);
        let normal = Normal::new(0.0, self.innovation_sd.max(0.0)).expect("finite SD");
        let stationary_sd = if self.ar.abs() < 1.0 {
            self.innovation_sd / (1.0 - self.ar * self.ar).sqrt()
        } else {
            self.innovation_sd
        };
        let mut e = stationary_sd * normal.sample(&mut rng) / self.innovation_sd.max(f64::MIN_POSITIVE);
        if self.innovation_sd == 0.0 {
            e = 0.0;
        }
        (0..self.n)
            .map(|t| {
                if t > 0 {
                    e = self.ar * e + normal.sample(&mut rng);
                }
                self.deterministic(t) + e
            })
            .collect()
    }
}

impl SyntheticSpec {
    /// Robust SD of `y` around the deterministic part.
    pub fn noise_scale(&self, y: &[f64]) -> f64 {
        let noise: Vec<f64> = y.iter().enumerate().map(|(t, v)| v - self.deterministic(t)).collect();
        mad(&noise) * MAD_TO_SD
    }

    /// Zeroes `zero_days` whole aligned days (of the first profile's period)
    /// and adds `spikes` jumps of `±size` noise scales elsewhere. Days are at
    /// least three days apart; spikes keep a day's distance from zeroed cells
    /// and two cells from each other.
    pub fn inject(&self, y: &[f64], spikes: usize, zero_days: usize, size: f64, seed: u64) -> Injected {
        let n = y.len();
        let day = self.profiles.first().map_or(48, |p| p.period);
        let days = n / day;
        let mut rng = rng_for(seed, 0x696e_6a63);
        let mut chosen: Vec<usize> = Vec::new();
        let mut attempts = 0;
        while chosen.len() < zero_days && attempts < 100_000 {
            attempts += 1;
            let d = rng.random_range(1..days.saturating_sub(1).max(2));
            if chosen.iter().all(|&c| c.abs_diff(d) >= 3) {
                chosen.push(d);
            }
        }
        chosen.sort_unstable();
        let zero_cells: Vec<usize> = chosen.iter().flat_map(|&d| d * day..(d + 1) * day).collect();
        let scale = self.noise_scale(y);
        let mut values = y.to_vec();
        for &t in &zero_cells {
            values[t] = 0.0;
        }
        let mut positions: Vec<usize> = Vec::new();
        attempts = 0;
        while positions.len() < spikes && attempts < 100_000 {
            attempts += 1;
            let t = rng.random_range(day..n - day);
            let near_zero = chosen.iter().any(|&d| t + day >= d * day && t < (d + 2) * day);
            if !near_zero && positions.iter().all(|&p| p.abs_diff(t) >= 2) {
                positions.push(t);
            }
        }
        positions.sort_unstable();
        for &t in &positions {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            values[t] += sign * size * scale;
        }
        Injected {
            values,
            spikes: positions,
            zero_cells,
            spike_size: size * scale,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_noise_free_variants() {
        let spec = SyntheticSpec::half_hourly_year();
        assert_eq!(spec.generate(4), spec.generate(4));
        assert_ne!(spec.generate(4), spec.generate(5));
        let quiet = SyntheticSpec {
            innovation_sd: 0.0,
            ..spec.clone()
        };
        let y = quiet.generate(1);
        assert!((y[100] - spec.deterministic(100)).abs() < 1e-12);
    }

    #[test]
    fn injection_places_what_was_asked() {
        let spec = SyntheticSpec::half_hourly_year();
        let y = spec.generate(2);
        let inj = spec.inject(&y, 20, 10, 8.0, 2);
        assert_eq!(inj.spikes.len(), 20);
        assert_eq!(inj.zero_cells.len(), 480);
        assert!(inj.zero_cells.iter().all(|&t| inj.values[t] == 0.0));
        for &t in &inj.spikes {
            assert!(((inj.values[t] - y[t]).abs() - inj.spike_size).abs() < 1e-9);
        }
        let touched = (0..y.len()).filter(|&t| inj.values[t] != y[t]).count();
        assert_eq!(touched, 500);
    }
}
