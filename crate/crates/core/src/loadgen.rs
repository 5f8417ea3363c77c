//! Offered-load patterns: i.i.d. uniform draws from a small set of rates
//! (training) and phase-shifted sinusoids (generalization tests).

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const SINE_MEAN: f64 = 12.5;
pub const SINE_AMPLITUDE: f64 = 7.5;

pub const DEFAULT_LEVELS: [f64; 4] = [5.0, 10.0, 15.0, 20.0];
pub const DEFAULT_PERIOD: f64 = 100.0;
pub const DEFAULT_PHASES: [f64; 2] = [0.0, PI / 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LoadPattern {
    Random {
        levels: Vec<f64>,
        seed: u64,
    },
    Sinusoidal {
        period: f64,
        phases: [f64; 2],
    },
}

impl LoadPattern {
    pub fn random(seed: u64) -> Self {
        LoadPattern::Random {
            levels: DEFAULT_LEVELS.to_vec(),
            seed,
        }
    }

    pub fn sinusoidal() -> Self {
        LoadPattern::Sinusoidal {
            period: DEFAULT_PERIOD,
            phases: DEFAULT_PHASES,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LoadPattern::Random { .. } => "random",
            LoadPattern::Sinusoidal { .. } => "sinusoidal",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LoadPattern::Random { levels, .. } => {
                if levels.is_empty() {
                    return Err(Error::invalid("random load levels must be nonempty"));
                }
                if levels.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
                    return Err(Error::invalid("random load levels must be finite and >= 0"));
                }
            }
            LoadPattern::Sinusoidal { period, phases } => {
                if !(*period > 0.0) || !period.is_finite() {
                    return Err(Error::invalid("sinusoidal period must be positive"));
                }
                if phases.iter().any(|p| !p.is_finite()) {
                    return Err(Error::invalid("sinusoidal phases must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Offered load of `service` (0-based) at `step`.
    pub fn load(&self, service: usize, step: u64) -> f64 {
        match self {
            LoadPattern::Random { .. } => random_load(self, service, step).expect("kind checked"),
            LoadPattern::Sinusoidal { .. } => {
                sinusoidal_load(self, service, step).expect("kind checked")
            }
        }
    }

    pub fn loads(&self, step: u64) -> (f64, f64) {
        (self.load(0, step), self.load(1, step))
    }
}

/// Uniform draw from the pattern's levels, a pure function of
/// `(seed, service, step)`. The two services use independent streams.
pub fn random_load(pattern: &LoadPattern, service: usize, step: u64) -> Result<f64> {
    match pattern {
        LoadPattern::Random { levels, seed } => {
            if levels.is_empty() {
                return Err(Error::invalid("random load levels must be nonempty"));
            }
            let sub = rng::derive_seed(*seed, 0x10AD + service as u64);
            let mut r = rng::stream_at(sub, service as u64, step);
            Ok(levels[r.random_range(0..levels.len())])
        }
        _ => Err(Error::invalid("random_load called on a non-random pattern")),
    }
}

/// `12.5 + 7.5 sin(2 pi step / T + phase)`.
pub fn sinusoidal_load(pattern: &LoadPattern, service: usize, step: u64) -> Result<f64> {
    match pattern {
        LoadPattern::Sinusoidal { period, phases } => {
            let phase = phases
                .get(service)
                .ok_or_else(|| Error::invalid(format!("no phase for service {service}")))?;
            // integral periods repeat bit-for-bit
            let step = if period.fract() == 0.0 && *period <= u64::MAX as f64 {
                step % *period as u64
            } else {
                step
            };
            let x = 2.0 * PI * step as f64 / period + phase;
            Ok(SINE_MEAN + SINE_AMPLITUDE * x.sin())
        }
        _ => Err(Error::invalid("sinusoidal_load called on a non-sinusoidal pattern")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sinusoid_repeats_exactly() {
        let p = LoadPattern::sinusoidal();
        for t in 0..300 {
            assert_eq!(p.loads(t), p.loads(t + 100));
        }
    }

    #[test]
    fn random_values_are_levels_and_deterministic() {
        let p = LoadPattern::random(42);
        for step in 0..1000 {
            let v = random_load(&p, 0, step).unwrap();
            assert!(DEFAULT_LEVELS.contains(&v));
            assert_eq!(v, random_load(&p, 0, step).unwrap());
        }
    }

    #[test]
    fn random_levels_are_uniform() {
        let p = LoadPattern::random(7);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for step in 0..n {
            let v = p.load(1, step);
            counts[DEFAULT_LEVELS.iter().position(|&l| l == v).unwrap()] += 1;
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - 0.25).abs() <= 0.01, "frequency {f}");
        }
    }

    #[test]
    fn services_use_independent_streams() {
        let p = LoadPattern::random(3);
        let n = 20_000;
        let same = (0..n).filter(|&s| p.load(0, s) == p.load(1, s)).count();
        let f = same as f64 / n as f64;
        // independent uniform over 4 levels agree with probability 1/4
        assert!((f - 0.25).abs() < 0.02, "agreement {f}");
    }

    #[test]
    fn sinusoid_landmarks() {
        let p = LoadPattern::Sinusoidal { period: 100.0, phases: [0.0, PI / 2.0] };
        assert!((sinusoidal_load(&p, 0, 0).unwrap() - 12.5).abs() < 1e-12);
        assert!((sinusoidal_load(&p, 0, 25).unwrap() - 20.0).abs() < 1e-12);
        assert!((sinusoidal_load(&p, 0, 75).unwrap() - 5.0).abs() < 1e-12);
        // service 2 leads by a quarter period
        assert!((sinusoidal_load(&p, 1, 0).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_kind_rejected() {
        assert!(random_load(&LoadPattern::sinusoidal(), 0, 0).is_err());
        assert!(sinusoidal_load(&LoadPattern::random(1), 0, 0).is_err());
        assert!(LoadPattern::Sinusoidal { period: 0.0, phases: [0.0, 0.0] }.validate().is_err());
        assert!(LoadPattern::Random { levels: vec![], seed: 0 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn sinusoid_bounded_and_periodic(step in 0u64..100_000, period in 1u64..500, phase in -10.0f64..10.0) {
            let p = LoadPattern::Sinusoidal { period: period as f64, phases: [phase, phase] };
            let v = p.load(0, step);
            prop_assert!((5.0 - 1e-12..=20.0 + 1e-12).contains(&v));
            prop_assert!((v - p.load(0, step + period)).abs() < 1e-9);
        }

        #[test]
        fn random_always_in_levels(seed: u64, step: u64, service in 0usize..2) {
            let p = LoadPattern::random(seed);
            prop_assert!(DEFAULT_LEVELS.contains(&p.load(service, step)));
        }
    }
}
