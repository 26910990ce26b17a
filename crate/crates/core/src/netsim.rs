//! Deterministic one-way link emulator.
//!
//! Each [`Link`] carries messages in one direction. A send samples a one-way
//! delay from a Gaussian (clamped to a small positive floor) and optionally
//! drops the message; [`Link::poll`] hands back everything whose delivery
//! time has passed. All randomness comes from a ChaCha stream seeded by the
//! preset, so a seed and a send schedule fully determine the delivery trace.
//!
//! Presets model the published round-trip figures under a symmetric-path
//! assumption: the one-way mean and jitter are half the round-trip values.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{ChannelId, WireMessage};

/// Lower bound on any sampled (non-degenerate) delay.
pub const MIN_DELAY_MS: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetsimError {
    #[error("unknown network preset {0:?} (expected ideal, wifi or 5g)")]
    UnknownPreset(String),
    #[error("invalid network parameters: {0}")]
    InvalidPreset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkPreset {
    pub mean_one_way_delay_ms: f64,
    pub jitter_sd_ms: f64,
    pub drop_prob: f64,
    pub allow_reorder: bool,
    pub seed: u64,
}

impl NetworkPreset {
    /// Zero-delay, lossless link.
    pub fn ideal(seed: u64) -> Self {
        Self {
            mean_one_way_delay_ms: 0.0,
            jitter_sd_ms: 0.0,
            drop_prob: 0.0,
            allow_reorder: false,
            seed,
        }
    }

    /// 5.8 ± 3.3 ms round trip.
    pub fn wifi(seed: u64) -> Self {
        Self {
            mean_one_way_delay_ms: 2.9,
            jitter_sd_ms: 1.65,
            ..Self::ideal(seed)
        }
    }

    /// 40 ± 10 ms round trip.
    pub fn five_g(seed: u64) -> Self {
        Self {
            mean_one_way_delay_ms: 20.0,
            jitter_sd_ms: 5.0,
            ..Self::ideal(seed)
        }
    }

    pub fn by_name(name: &str, seed: u64) -> Result<Self, NetsimError> {
        match name.to_ascii_lowercase().as_str() {
            "ideal" => Ok(Self::ideal(seed)),
            "wifi" => Ok(Self::wifi(seed)),
            "5g" => Ok(Self::five_g(seed)),
            _ => Err(NetsimError::UnknownPreset(name.to_owned())),
        }
    }

    pub fn validate(&self) -> Result<(), NetsimError> {
        if !(self.mean_one_way_delay_ms.is_finite() && self.mean_one_way_delay_ms >= 0.0) {
            return Err(NetsimError::InvalidPreset(
                "mean_one_way_delay_ms must be >= 0".into(),
            ));
        }
        if !(self.jitter_sd_ms.is_finite() && self.jitter_sd_ms >= 0.0) {
            return Err(NetsimError::InvalidPreset(
                "jitter_sd_ms must be >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(NetsimError::InvalidPreset(
                "drop_prob must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Delay floor applied to samples. A zero-mean, zero-jitter link keeps a
    /// zero delay so that the ideal preset delivers within the same tick.
    pub fn delay_floor_ms(&self) -> f64 {
        MIN_DELAY_MS.min(self.mean_one_way_delay_ms)
    }

    /// Mean and standard deviation (ms) of the clamped delay distribution,
    /// i.e. of `max(X, floor)` with `X ~ N(mean, sd)`.
    pub fn clamped_delay_moments(&self) -> (f64, f64) {
        let (mu, sd, c) = (
            self.mean_one_way_delay_ms,
            self.jitter_sd_ms,
            self.delay_floor_ms(),
        );
        if sd == 0.0 {
            let d = mu.max(c);
            return (d, 0.0);
        }
        use statrs::distribution::{Continuous, ContinuousCDF, Normal as StdNormal};
        let n = StdNormal::new(0.0, 1.0).unwrap();
        let alpha = (c - mu) / sd;
        let (pdf, cdf) = (n.pdf(alpha), n.cdf(alpha));
        // Moments of the censored normal.
        let mean = c * cdf + mu * (1.0 - cdf) + sd * pdf;
        let second = c * c * cdf + (mu * mu + sd * sd) * (1.0 - cdf) + (mu + c) * sd * pdf;
        (mean, (second - mean * mean).max(0.0).sqrt())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChannelStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

impl ChannelStats {
    pub fn in_flight(&self) -> u64 {
        self.sent - self.delivered - self.dropped
    }
}

#[derive(Debug)]
struct InFlight {
    delivery_us: u64,
    order: u64,
    msg: WireMessage,
}

impl PartialEq for InFlight {
    fn eq(&self, other: &Self) -> bool {
        (self.delivery_us, self.order) == (other.delivery_us, other.order)
    }
}
impl Eq for InFlight {}
impl PartialOrd for InFlight {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for InFlight {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.delivery_us, self.order).cmp(&(other.delivery_us, other.order))
    }
}

/// A message handed out by [`Link::poll`], with its scheduled delivery time.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub delivery_us: u64,
    pub msg: WireMessage,
}

#[derive(Debug)]
pub struct Link {
    preset: NetworkPreset,
    rng: ChaCha8Rng,
    jitter: Option<Normal<f64>>,
    queue: BinaryHeap<Reverse<InFlight>>,
    next_order: u64,
    last_delivery_us: [u64; 4],
    stats: [ChannelStats; 4],
}

impl Link {
    pub fn new(preset: NetworkPreset) -> Result<Self, NetsimError> {
        preset.validate()?;
        let jitter = (preset.jitter_sd_ms > 0.0).then(|| {
            Normal::new(preset.mean_one_way_delay_ms, preset.jitter_sd_ms)
                .expect("validated parameters")
        });
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(preset.seed),
            preset,
            jitter,
            queue: BinaryHeap::new(),
            next_order: 0,
            last_delivery_us: [0; 4],
            stats: [ChannelStats::default(); 4],
        })
    }

    pub fn preset(&self) -> &NetworkPreset {
        &self.preset
    }

    fn sample_delay_us(&mut self) -> u64 {
        let ms = match &self.jitter {
            Some(n) => n.sample(&mut self.rng),
            None => self.preset.mean_one_way_delay_ms,
        };
        let ms = ms.max(self.preset.delay_floor_ms());
        (ms * 1000.0).round() as u64
    }

    pub fn send(&mut self, msg: WireMessage, now_us: u64) {
        // Both draws happen on every send so the random stream does not
        // depend on which messages were dropped.
        let drop_draw: f64 = self.rng.random();
        let delay_us = self.sample_delay_us();
        let ch = msg.channel().index();
        self.stats[ch].sent += 1;
        if drop_draw < self.preset.drop_prob {
            self.stats[ch].dropped += 1;
            return;
        }
        let mut delivery_us = now_us.saturating_add(delay_us);
        if !self.preset.allow_reorder {
            delivery_us = delivery_us.max(self.last_delivery_us[ch]);
        }
        self.last_delivery_us[ch] = self.last_delivery_us[ch].max(delivery_us);
        let order = self.next_order;
        self.next_order += 1;
        self.queue.push(Reverse(InFlight {
            delivery_us,
            order,
            msg,
        }));
    }

    /// Remove and return every message due at or before `now_us`, in delivery
    /// order (ties broken by send order).
    pub fn poll(&mut self, now_us: u64) -> Vec<Delivery> {
        let mut out = Vec::new();
        while let Some(Reverse(head)) = self.queue.peek() {
            if head.delivery_us > now_us {
                break;
            }
            let Reverse(item) = self.queue.pop().unwrap();
            self.stats[item.msg.channel().index()].delivered += 1;
            out.push(Delivery {
                delivery_us: item.delivery_us,
                msg: item.msg,
            });
        }
        out
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub fn stats(&self, channel: ChannelId) -> ChannelStats {
        self.stats[channel.index()]
    }

    pub fn total_stats(&self) -> ChannelStats {
        self.stats
            .iter()
            .fold(ChannelStats::default(), |acc, s| ChannelStats {
                sent: acc.sent + s.sent,
                delivered: acc.delivered + s.delivered,
                dropped: acc.dropped + s.dropped,
            })
    }
}
