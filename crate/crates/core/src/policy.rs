//! Round robin service policies.
//!
//! `RR(φ)` visits the active channels of `φ` once each, least recently used
//! first. On switching to channel `n` it flips a coin: with probability
//! `P^(M)_01 / ω_n` it keeps sending data until the first NACK, otherwise it
//! sends a single dummy packet to sense the channel and moves on. The coin
//! makes every visit look as if the channel were entered with belief
//! exactly `P^(M)_01`, which is what gives the stay lengths a closed-form
//! law. `RandRR` mixes such rounds with single idle slots.

use std::io::Write;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::capacity::{ActivationVector, CapacityError};
use crate::channel::{BeliefState, ChannelError, ChannelModel, ChannelState, TrueChannelState};
use crate::rng::RngStreams;

/// Slack allowed when checking `P^(M)_01 <= ω_n` in floating point.
const FEASIBILITY_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error(
        "round robin infeasible at slot {slot}: channel {channel} has belief {omega} \
         below the required entry probability {required} (LRU ordering violated)"
    )]
    Infeasible { slot: u64, channel: usize, omega: f64, required: f64 },

    #[error("mixing weights must be finite and >= 0 and sum to 1 (sum = {sum})")]
    InvalidWeights { sum: f64 },

    #[error("policy covers {policy} channels but the system has {system}")]
    LengthMismatch { policy: usize, system: usize },

    #[error("cannot run a round over the empty subset; use an idle slot")]
    EmptyRound,

    #[error(transparent)]
    Channel(#[from] ChannelError),

    #[error(transparent)]
    Capacity(#[from] CapacityError),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

/// Slot index at which each channel was last observed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LruClock {
    last_visit: Vec<Option<u64>>,
}

impl LruClock {
    pub fn new(channels: usize) -> Self {
        Self { last_visit: vec![None; channels] }
    }

    pub fn last_visit(&self, channel: usize) -> Option<u64> {
        self.last_visit[channel]
    }

    pub fn record(&mut self, channel: usize, slot: u64) {
        self.last_visit[channel] = Some(slot);
    }
}

/// Active channels sorted least recently used first. Never-visited channels
/// come first; ties go to the lower channel index.
pub fn lru_order(phi: &ActivationVector, clock: &LruClock) -> Vec<usize> {
    let mut order: Vec<usize> = phi.active().collect();
    // `None < Some(_)`, and the sort is stable over ascending indices.
    order.sort_by_key(|&n| clock.last_visit(n));
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SlotAction {
    Idle,
    /// A real packet; it gets through iff the channel is ON.
    Data { channel: usize, state: ChannelState },
    /// A sensing packet with no payload.
    Dummy { channel: usize, state: ChannelState },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SlotRecord {
    pub slot: u64,
    pub action: SlotAction,
}

impl SlotRecord {
    /// Channel and state revealed by feedback at the end of the slot.
    pub fn observation(&self) -> Option<(usize, ChannelState)> {
        match self.action {
            SlotAction::Idle => None,
            SlotAction::Data { channel, state } | SlotAction::Dummy { channel, state } => {
                Some((channel, state))
            }
        }
    }

    /// The channel with `μ_n = 1` in this slot, if any.
    pub fn served(&self) -> Option<usize> {
        match self.action {
            SlotAction::Data { channel, state: ChannelState::On } => Some(channel),
            _ => None,
        }
    }
}

/// One visit of a round: `length` slots on `channel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Stay {
    pub channel: usize,
    pub length: u64,
    /// False when the coin chose a dummy slot.
    pub real: bool,
}

/// Slot-by-slot record of one frame (a round or an idle slot).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoundTrace {
    /// `None` for an idle frame.
    pub phi: Option<ActivationVector>,
    pub start: u64,
    pub slots: Vec<SlotRecord>,
    pub stays: Vec<Stay>,
}

impl RoundTrace {
    /// Frame length `T`.
    pub fn len(&self) -> u64 {
        self.slots.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_idle(&self) -> bool {
        self.phi.is_none()
    }

    /// Packets served per channel over the frame (`Σ_τ μ_n(τ)`).
    pub fn service(&self, channels: usize) -> Vec<u64> {
        let mut out = vec![0; channels];
        for s in &self.slots {
            if let Some(n) = s.served() {
                out[n] += 1;
            }
        }
        out
    }

    /// Writes one CSV row per slot: slot, channel, kind, state, then `μ_n`
    /// for every channel.
    pub fn write_csv<W: Write>(&self, out: &mut csv::Writer<W>, channels: usize) -> csv::Result<()> {
        for s in &self.slots {
            let (channel, kind, state) = match s.action {
                SlotAction::Idle => (String::new(), "idle", ""),
                SlotAction::Data { channel, state } => (channel.to_string(), "data", state.as_str()),
                SlotAction::Dummy { channel, state } => (channel.to_string(), "dummy", state.as_str()),
            };
            let mut row = vec![s.slot.to_string(), channel, kind.to_string(), state.to_string()];
            row.extend((0..channels).map(|n| u8::from(s.served() == Some(n)).to_string()));
            out.write_record(&row)?;
        }
        Ok(())
    }
}

/// CSV header matching [`RoundTrace::write_csv`].
pub fn trace_csv_header(channels: usize) -> Vec<String> {
    let mut h: Vec<String> = ["slot", "channel", "kind", "state"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=channels).map(|n| format!("mu_{n}")));
    h
}

/// Everything a policy reads or mutates while it runs: the hidden channel
/// states, the controller's beliefs, the LRU clock and the clock itself.
#[derive(Debug, Clone)]
pub struct ChannelSystem {
    models: Vec<ChannelModel>,
    truth: TrueChannelState,
    belief: BeliefState,
    clock: LruClock,
    now: u64,
    rng: RngStreams,
}

impl ChannelSystem {
    /// Starts at slot 0 with stationary hidden states and unobserved beliefs.
    pub fn new(models: Vec<ChannelModel>, seed: u64, age_cap: u64) -> Result<Self> {
        let mut rng = RngStreams::new(seed);
        let truth = TrueChannelState::stationary(&models, &mut rng.channel);
        let belief = BeliefState::with_age_cap(models.len(), age_cap)?;
        let clock = LruClock::new(models.len());
        Ok(Self { models, truth, belief, clock, now: 0, rng })
    }

    pub fn with_state(
        models: Vec<ChannelModel>,
        truth: TrueChannelState,
        belief: BeliefState,
        clock: LruClock,
        rng: RngStreams,
    ) -> Self {
        Self { models, truth, belief, clock, now: 0, rng }
    }

    pub fn models(&self) -> &[ChannelModel] {
        &self.models
    }

    pub fn channels(&self) -> usize {
        self.models.len()
    }

    pub fn truth(&self) -> &TrueChannelState {
        &self.truth
    }

    pub fn belief(&self) -> &BeliefState {
        &self.belief
    }

    pub fn clock(&self) -> &LruClock {
        &self.clock
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn omega(&self, channel: usize) -> f64 {
        self.belief.omega(channel, &self.models[channel])
    }

    /// Uses `channel` for one slot and returns the revealed state.
    fn transmit(&mut self, channel: usize, real: bool, trace: &mut RoundTrace) -> Result<ChannelState> {
        let state = self.truth.state(channel);
        let action = if real {
            SlotAction::Data { channel, state }
        } else {
            SlotAction::Dummy { channel, state }
        };
        trace.slots.push(SlotRecord { slot: self.now, action });
        self.belief.advance(Some((channel, state)))?;
        self.clock.record(channel, self.now);
        self.finish_slot();
        Ok(state)
    }

    fn finish_slot(&mut self) {
        self.truth.advance(&self.models, &mut self.rng.channel);
        self.now += 1;
    }

    /// Leaves the system idle for one slot; nothing is observed.
    pub fn idle_slot(&mut self) -> RoundTrace {
        let mut trace = RoundTrace { phi: None, start: self.now, slots: vec![], stays: vec![] };
        trace.slots.push(SlotRecord { slot: self.now, action: SlotAction::Idle });
        self.belief.advance(None).expect("no observation to validate");
        self.finish_slot();
        trace
    }

    /// Runs one round of `RR(φ)` with LRU-first ordering.
    pub fn run_rr_round(&mut self, phi: &ActivationVector) -> Result<RoundTrace> {
        if phi.len() != self.channels() {
            return Err(PolicyError::LengthMismatch { policy: phi.len(), system: self.channels() });
        }
        if phi.is_zero() {
            return Err(PolicyError::EmptyRound);
        }
        let m = phi.count() as u64;
        let mut trace = RoundTrace { phi: Some(*phi), start: self.now, slots: vec![], stays: vec![] };
        for channel in lru_order(phi, &self.clock) {
            let required = self.models[channel].p01_k(m)?;
            let omega = self.omega(channel);
            if required > omega + FEASIBILITY_EPS {
                return Err(PolicyError::Infeasible { slot: self.now, channel, omega, required });
            }
            let stay_probability = (required / omega).min(1.0);
            let real = self.rng.coins.gen::<f64>() < stay_probability;
            let mut length = 1;
            if real {
                while self.transmit(channel, true, &mut trace)?.is_on() {
                    length += 1;
                }
            } else {
                self.transmit(channel, false, &mut trace)?;
            }
            trace.stays.push(Stay { channel, length, real });
        }
        Ok(trace)
    }

    /// Runs one frame of a randomized round robin policy.
    pub fn run_randrr_frame(&mut self, policy: &PolicyRandRR) -> Result<RoundTrace> {
        if policy.channels() != self.channels() {
            return Err(PolicyError::LengthMismatch { policy: policy.channels(), system: self.channels() });
        }
        match policy.sample(&mut self.rng.mixing) {
            None => Ok(self.idle_slot()),
            Some(phi) => self.run_rr_round(&phi),
        }
    }
}

/// A stationary mixture over round robin subsets and the idle operation.
#[derive(Debug, Clone)]
pub struct PolicyRandRR {
    channels: usize,
    /// `None` is the idle option `φ = 0`.
    options: Vec<(Option<ActivationVector>, f64)>,
    sampler: WeightedIndex<f64>,
}

impl PolicyRandRR {
    /// Builds a mixture; a zero activation vector stands for idling.
    pub fn new(channels: usize, weights: Vec<(ActivationVector, f64)>) -> Result<Self> {
        let sum: f64 = weights.iter().map(|(_, w)| w).sum();
        if weights.is_empty()
            || weights.iter().any(|(_, w)| !(w.is_finite() && *w >= 0.0))
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(PolicyError::InvalidWeights { sum });
        }
        if let Some((phi, _)) = weights.iter().find(|(phi, _)| phi.len() != channels) {
            return Err(PolicyError::LengthMismatch { policy: phi.len(), system: channels });
        }
        let options: Vec<(Option<ActivationVector>, f64)> = weights
            .into_iter()
            .map(|(phi, w)| ((!phi.is_zero()).then_some(phi), w))
            .collect();
        let sampler = WeightedIndex::new(options.iter().map(|(_, w)| *w))
            .map_err(|_| PolicyError::InvalidWeights { sum })?;
        Ok(Self { channels, options, sampler })
    }

    /// `RR(φ)` as the degenerate mixture.
    pub fn pure(phi: ActivationVector) -> Result<Self> {
        Self::new(phi.len(), vec![(phi, 1.0)])
    }

    pub fn idle(channels: usize) -> Result<Self> {
        Self::new(channels, vec![(ActivationVector::zero(channels)?, 1.0)])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn options(&self) -> &[(Option<ActivationVector>, f64)] {
        &self.options
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<ActivationVector> {
        if self.options.len() == 1 {
            return self.options[0].0;
        }
        self.options[self.sampler.sample(rng)].0
    }
}
