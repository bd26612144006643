use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::SimError;

/// Injected transport delay. `lo_ms..=hi_ms` bounds the end-to-end delay
/// (sender → relay → receiver); each direction draws independently from
/// half that range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub lo_ms: f64,
    pub hi_ms: f64,
    pub seed: u64,
    /// Probability that a lossy-channel message is dropped on each hop.
    pub drop_rate: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            lo_ms: 35.0,
            hi_ms: 120.0,
            seed: 0,
            drop_rate: 0.0,
        }
    }
}

impl LatencyModel {
    pub fn zero(seed: u64) -> Self {
        Self {
            lo_ms: 0.0,
            hi_ms: 0.0,
            seed,
            drop_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.lo_ms.is_finite()
            && self.hi_ms.is_finite()
            && 0.0 <= self.lo_ms
            && self.lo_ms <= self.hi_ms
            && (0.0..=1.0).contains(&self.drop_rate);
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(format!(
                "latency needs 0 <= lo <= hi and drop rate in [0, 1], got {}:{} drop {}",
                self.lo_ms, self.hi_ms, self.drop_rate
            )))
        }
    }

    /// Parses `LO:HI` in milliseconds.
    pub fn parse_range(s: &str) -> Result<(f64, f64), SimError> {
        let bad = || SimError::InvalidConfig(format!("latency must be LO:HI in ms, got {s:?}"));
        let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        Ok((lo, hi))
    }

    /// One-hop delay in microseconds.
    pub fn sample_hop_us<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let lo = (self.lo_ms * 500.0).round() as u64;
        let hi = (self.hi_ms * 500.0).round() as u64;
        if lo >= hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    }

    pub fn drops<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        self.drop_rate > 0.0 && rng.random_bool(self.drop_rate)
    }
}

/// Summary of a sample set, in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub min_ms: f64,
    pub max_ms: f64,
    pub mean_ms: f64,
}

impl LatencyStats {
    pub fn of_us(samples: &[u64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let ms = |us: u64| us as f64 / 1000.0;
        Self {
            count: samples.len(),
            min_ms: ms(*samples.iter().min().expect("non-empty")),
            max_ms: ms(*samples.iter().max().expect("non-empty")),
            mean_ms: samples.iter().map(|&s| ms(s)).sum::<f64>() / samples.len() as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parse_range() {
        assert_eq!(LatencyModel::parse_range("35:120").unwrap(), (35.0, 120.0));
        assert!(LatencyModel::parse_range("35").is_err());
    }

    #[test]
    fn invalid_models_rejected() {
        let m = LatencyModel {
            lo_ms: 10.0,
            hi_ms: 5.0,
            ..Default::default()
        };
        assert!(m.validate().is_err());
        let m = LatencyModel {
            drop_rate: 1.5,
            ..Default::default()
        };
        assert!(m.validate().is_err());
    }

    #[test]
    fn zero_model_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(LatencyModel::zero(1).sample_hop_us(&mut rng), 0);
    }
}
