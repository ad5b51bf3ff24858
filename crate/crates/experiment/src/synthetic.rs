//! Seeded synthetic datasets with hourly timestamps.

use std::f64::consts::PI;

use chrono::{Duration, NaiveDate};
use psloss::data::RawDataset;
use psloss::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Each channel is a sum of sinusoids at `periods` with random amplitudes
/// and phases, a slow linear drift and uniform noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub channels: usize,
    pub periods: Vec<f64>,
    pub noise: f64,
    #[serde(default)]
    pub drift: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn sinusoid(rows: usize, channels: usize, seed: u64) -> Self {
        SyntheticSpec {
            rows,
            channels,
            periods: vec![24.0],
            noise: 0.1,
            drift: 0.0,
            seed,
        }
    }

    /// Same shape as the hourly electricity-transformer data: 17420 rows,
    /// 7 channels, daily and weekly cycles.
    pub fn ett_like(seed: u64) -> Self {
        SyntheticSpec {
            rows: 17420,
            channels: 7,
            periods: vec![24.0, 168.0],
            noise: 0.3,
            drift: 0.5,
            seed,
        }
    }

    pub fn generate(&self) -> Result<RawDataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let start = NaiveDate::from_ymd_opt(2016, 7, 1)
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .expect("valid start date");
        let timestamps = (0..self.rows)
            .map(|i| {
                (start + Duration::hours(i as i64))
                    .format("%Y-%m-%d %H:%M:%S")
                    .to_string()
            })
            .collect();
        let names = (0..self.channels).map(|c| format!("x{c}")).collect();

        let shape: Vec<Vec<(f64, f64)>> = (0..self.channels)
            .map(|_| {
                self.periods
                    .iter()
                    .map(|_| (rng.gen_range(0.5..2.0), rng.gen_range(0.0..2.0 * PI)))
                    .collect()
            })
            .collect();
        let slopes: Vec<f64> = (0..self.channels)
            .map(|_| self.drift * rng.gen_range(-1.0..1.0) / self.rows.max(1) as f64)
            .collect();

        let mut values = Vec::with_capacity(self.rows * self.channels);
        for t in 0..self.rows {
            let tf = t as f64;
            for c in 0..self.channels {
                let mut v = slopes[c] * tf;
                for (period, (amp, phase)) in self.periods.iter().zip(&shape[c]) {
                    v += amp * (2.0 * PI * tf / period + phase).sin();
                }
                v += self.noise * rng.gen_range(-1.0..1.0);
                values.push(v);
            }
        }
        RawDataset::new(timestamps, names, values)
    }
}
