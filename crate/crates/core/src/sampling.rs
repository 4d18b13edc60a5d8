//! Client sampling schedules and per-round client selection.
//!
//! A dynamic schedule decays the sampling rate exponentially,
//! `c = C * exp(-beta * t)`. The round index feeding the exponent starts at
//! either 0 or 1 ([`RoundOrigin`]): with origin zero the first round runs at
//! the full initial rate, with origin one it is already decayed once. The
//! client count is the half-up rounding of `c * M`, clamped to
//! `[min_clients, M]`.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Index of the first round in decay exponents: `t = round + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundOrigin {
    #[default]
    Zero,
    One,
}

impl RoundOrigin {
    pub fn offset(self) -> u32 {
        match self {
            RoundOrigin::Zero => 0,
            RoundOrigin::One => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScheduleKind {
    Static,
    Dynamic { decay: f64 },
}

/// Static or exponential-decay sampling configuration.
#[derive(Debug, Clone, Serialize)]
pub struct SamplingSchedule {
    #[serde(flatten)]
    pub kind: ScheduleKind,
    /// Initial sampling rate C in (0, 1].
    pub initial_rate: f64,
    /// Floor on the per-round client count.
    pub min_clients: usize,
    pub origin: RoundOrigin,
}

impl SamplingSchedule {
    pub fn fixed(initial_rate: f64) -> SamplingSchedule {
        SamplingSchedule {
            kind: ScheduleKind::Static,
            initial_rate,
            min_clients: 2,
            origin: RoundOrigin::Zero,
        }
    }

    pub fn decaying(initial_rate: f64, decay: f64) -> SamplingSchedule {
        SamplingSchedule {
            kind: ScheduleKind::Dynamic { decay },
            initial_rate,
            min_clients: 2,
            origin: RoundOrigin::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_rate > 0.0 && self.initial_rate <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "sampling.c must lie in (0, 1], got {}",
                self.initial_rate
            )));
        }
        if let ScheduleKind::Dynamic { decay } = self.kind {
            if !(decay.is_finite() && decay >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "sampling.beta must be a non-negative number, got {decay}"
                )));
            }
        }
        if self.min_clients == 0 {
            return Err(Error::InvalidConfig(
                "sampling.min_clients must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Sampling rate for a round: `C` for static schedules,
    /// `C * exp(-beta * (round + offset))` for dynamic ones.
    pub fn rate_at(&self, round: usize) -> f64 {
        match self.kind {
            ScheduleKind::Static => self.initial_rate,
            ScheduleKind::Dynamic { decay } => {
                let t = (round + self.origin.offset() as usize) as f64;
                self.initial_rate * (-decay * t).exp()
            }
        }
    }

    /// Client count for a round: half-up rounding of `rate * total`, clamped
    /// to `[min_clients, total]`. Callers validate `total >= min_clients`.
    pub fn clients_at(&self, round: usize, total: usize) -> usize {
        assert!(
            total >= self.min_clients,
            "client population {total} below min_clients {}",
            self.min_clients
        );
        let raw = round_half_up(self.rate_at(round) * total as f64);
        (raw as usize).clamp(self.min_clients, total)
    }
}

pub(crate) fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Uniform sample of `m` distinct ids from `0..total`, ascending,
/// deterministic in the seed.
pub fn select_clients(m: usize, total: usize, seed: u64) -> Vec<usize> {
    assert!(m >= 1 && m <= total, "need 1 <= m <= total, got m={m}, total={total}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = rand::seq::index::sample(&mut rng, total, m).into_vec();
    ids.sort_unstable();
    ids
}
