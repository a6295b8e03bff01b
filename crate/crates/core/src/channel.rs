//! Markov ON/OFF channels and exact belief tracking.
//!
//! A channel is a two-state chain with transition probabilities `p01`
//! (OFF→ON) and `p10` (ON→OFF). The controller never sees the current
//! state; it only learns the state of the channel it used, one slot late,
//! through ACK/NACK feedback. The conditional probability that a channel is
//! ON given that history depends only on the last observed state and how
//! many slots ago it was seen, so beliefs are stored as `(state, age)`
//! pairs and the probability is recomputed from the closed-form k-step
//! transition law on every query.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default age after which an observation is treated as stale and the
/// belief snaps to the stationary probability.
pub const DEFAULT_AGE_CAP: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("transition probability {name}={value} must lie strictly inside (0, 1)")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },

    #[error("channel is not positively correlated: p01 + p10 = {0} must be < 1")]
    NotPositivelyCorrelated(f64),

    #[error("k-step transition probability requires k >= 1")]
    ZeroSteps,

    #[error("channel index {index} out of range for {len} channels")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("age cap must be at least 1")]
    ZeroAgeCap,
}

pub type Result<T> = std::result::Result<T, ChannelError>;

/// State of a channel during one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelState {
    Off,
    On,
}

impl ChannelState {
    pub fn is_on(self) -> bool {
        matches!(self, ChannelState::On)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelState::Off => "OFF",
            ChannelState::On => "ON",
        }
    }
}

/// Transition law of one positively correlated ON/OFF channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct ChannelModel {
    p01: f64,
    p10: f64,
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    p01: f64,
    p10: f64,
}

impl TryFrom<RawModel> for ChannelModel {
    type Error = ChannelError;

    fn try_from(raw: RawModel) -> Result<Self> {
        ChannelModel::new(raw.p01, raw.p10)
    }
}

impl From<ChannelModel> for RawModel {
    fn from(m: ChannelModel) -> Self {
        RawModel { p01: m.p01, p10: m.p10 }
    }
}

impl ChannelModel {
    /// Builds a model, rejecting degenerate or negatively correlated chains.
    pub fn new(p01: f64, p10: f64) -> Result<Self> {
        for (name, value) in [("p01", p01), ("p10", p10)] {
            if !(value > 0.0 && value < 1.0) {
                return Err(ChannelError::ProbabilityOutOfRange { name, value });
            }
        }
        let x = p01 + p10;
        if x >= 1.0 {
            return Err(ChannelError::NotPositivelyCorrelated(x));
        }
        Ok(Self { p01, p10 })
    }

    pub fn p01(&self) -> f64 {
        self.p01
    }

    pub fn p10(&self) -> f64 {
        self.p10
    }

    pub fn p11(&self) -> f64 {
        1.0 - self.p10
    }

    pub fn p00(&self) -> f64 {
        1.0 - self.p01
    }

    /// `x = p01 + p10`, the rate at which the chain forgets its state.
    pub fn x(&self) -> f64 {
        self.p01 + self.p10
    }

    /// Stationary probability of the ON state.
    pub fn pi_on(&self) -> f64 {
        self.p01 / (self.p01 + self.p10)
    }

    /// `(1 - x)^k`, the memory left after `k` steps.
    fn memory(&self, k: u64) -> f64 {
        (1.0 - self.x()).powf(k as f64)
    }

    /// `P^(k)_{01}`: probability of being ON `k` slots after being seen OFF.
    pub fn p01_k(&self, k: u64) -> Result<f64> {
        if k == 0 {
            return Err(ChannelError::ZeroSteps);
        }
        Ok(self.pi_on() * (1.0 - self.memory(k)))
    }

    /// `P^(k)_{11}`: probability of being ON `k` slots after being seen ON.
    pub fn p11_k(&self, k: u64) -> Result<f64> {
        if k == 0 {
            return Err(ChannelError::ZeroSteps);
        }
        let pi = self.pi_on();
        Ok(pi + (1.0 - pi) * self.memory(k))
    }

    /// Probability of being ON `k` slots after being seen in state `from`.
    pub fn k_step_prob(&self, from: ChannelState, k: u64) -> Result<f64> {
        match from {
            ChannelState::Off => self.p01_k(k),
            ChannelState::On => self.p11_k(k),
        }
    }

    /// Samples the state of the next slot.
    pub fn step<R: Rng + ?Sized>(&self, state: ChannelState, rng: &mut R) -> ChannelState {
        let p_on = match state {
            ChannelState::Off => self.p01,
            ChannelState::On => self.p11(),
        };
        if rng.gen::<f64>() < p_on {
            ChannelState::On
        } else {
            ChannelState::Off
        }
    }

    /// Samples a state from the stationary distribution.
    pub fn sample_stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelState {
        if rng.gen::<f64>() < self.pi_on() {
            ChannelState::On
        } else {
            ChannelState::Off
        }
    }
}

/// Last thing the controller learned about one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Observation {
    /// Never observed; the belief is the stationary prior.
    Unobserved,
    /// Seen in `state`, `age` slots before the current slot (`age >= 1`).
    Observed { state: ChannelState, age: u64 },
}

/// Per-channel information state.
///
/// The probability `omega_n` is never stored. It is derived from the last
/// observation and its age, which keeps it exactly inside the countable set
/// `{P^(k)_01, P^(k)_11 : k >= 1} ∪ {pi_on}` instead of drifting under
/// repeated floating-point updates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeliefState {
    observations: Vec<Observation>,
    age_cap: u64,
}

impl BeliefState {
    /// All channels start unobserved.
    pub fn new(channels: usize) -> Self {
        Self {
            observations: vec![Observation::Unobserved; channels],
            age_cap: DEFAULT_AGE_CAP,
        }
    }

    pub fn with_age_cap(channels: usize, age_cap: u64) -> Result<Self> {
        if age_cap == 0 {
            return Err(ChannelError::ZeroAgeCap);
        }
        Ok(Self {
            observations: vec![Observation::Unobserved; channels],
            age_cap,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn age_cap(&self) -> u64 {
        self.age_cap
    }

    pub fn observation(&self, channel: usize) -> Observation {
        self.observations[channel]
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Conditional probability that `channel` is ON in the current slot.
    pub fn omega(&self, channel: usize, model: &ChannelModel) -> f64 {
        match self.observations[channel] {
            Observation::Unobserved => model.pi_on(),
            Observation::Observed { age, .. } if age >= self.age_cap => model.pi_on(),
            Observation::Observed { state, age } => model
                .k_step_prob(state, age)
                .expect("observed age is always >= 1"),
        }
    }

    /// Moves to the next slot. `observed` is the channel used in the slot
    /// that just ended together with the state the feedback revealed.
    pub fn advance(&mut self, observed: Option<(usize, ChannelState)>) -> Result<()> {
        if let Some((index, _)) = observed {
            if index >= self.observations.len() {
                return Err(ChannelError::IndexOutOfRange {
                    index,
                    len: self.observations.len(),
                });
            }
        }
        let cap = self.age_cap;
        for obs in &mut self.observations {
            if let Observation::Observed { age, .. } = obs {
                *age = (*age + 1).min(cap);
            }
        }
        if let Some((index, state)) = observed {
            self.observations[index] = Observation::Observed { state, age: 1 };
        }
        Ok(())
    }

    /// Copy-on-update form of [`BeliefState::advance`].
    pub fn updated(&self, observed: Option<(usize, ChannelState)>) -> Result<Self> {
        let mut next = self.clone();
        next.advance(observed)?;
        Ok(next)
    }
}

/// Hidden channel states, visible only to the simulator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueChannelState {
    states: Vec<ChannelState>,
}

impl TrueChannelState {
    pub fn new(states: Vec<ChannelState>) -> Self {
        Self { states }
    }

    /// Draws every channel from its stationary distribution.
    pub fn stationary<R: Rng + ?Sized>(models: &[ChannelModel], rng: &mut R) -> Self {
        Self {
            states: models.iter().map(|m| m.sample_stationary(rng)).collect(),
        }
    }

    pub fn state(&self, channel: usize) -> ChannelState {
        self.states[channel]
    }

    pub fn states(&self) -> &[ChannelState] {
        &self.states
    }

    /// Moves every channel across one slot boundary, independently.
    pub fn advance<R: Rng + ?Sized>(&mut self, models: &[ChannelModel], rng: &mut R) {
        debug_assert_eq!(models.len(), self.states.len());
        for (state, model) in self.states.iter_mut().zip(models) {
            *state = model.step(*state, rng);
        }
    }

    pub fn advanced<R: Rng + ?Sized>(&self, models: &[ChannelModel], rng: &mut R) -> Self {
        let mut next = self.clone();
        next.advance(models, rng);
        next
    }
}

/// True when every channel uses the same transition matrix.
pub fn is_symmetric(models: &[ChannelModel]) -> bool {
    models.windows(2).all(|w| w[0] == w[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sym() -> ChannelModel {
        ChannelModel::new(0.2, 0.2).unwrap()
    }

    /// Brute-force `P^k` by repeated 2x2 multiplication.
    fn matrix_power(m: &ChannelModel, k: u64) -> [[f64; 2]; 2] {
        let p = [[m.p00(), m.p01()], [m.p10(), m.p11()]];
        let mut acc = [[1.0, 0.0], [0.0, 1.0]];
        for _ in 0..k {
            let mut next = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    next[i][j] = acc[i][0] * p[0][j] + acc[i][1] * p[1][j];
                }
            }
            acc = next;
        }
        acc
    }

    #[test]
    fn k_step_examples() {
        let m = sym();
        assert!((m.k_step_prob(ChannelState::Off, 1).unwrap() - 0.2).abs() < 1e-15);
        // (P^2)_{01} = 0.8*0.2 + 0.2*0.8
        let brute = matrix_power(&m, 2)[0][1];
        assert!((brute - 0.32).abs() < 1e-15);
        assert!((m.k_step_prob(ChannelState::Off, 2).unwrap() - 0.32).abs() < 1e-15);
        assert!((m.k_step_prob(ChannelState::On, 5000).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_steps_rejected() {
        assert_eq!(sym().k_step_prob(ChannelState::On, 0), Err(ChannelError::ZeroSteps));
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(matches!(
            ChannelModel::new(0.0, 0.2),
            Err(ChannelError::ProbabilityOutOfRange { name: "p01", .. })
        ));
        assert!(matches!(
            ChannelModel::new(0.3, 1.0),
            Err(ChannelError::ProbabilityOutOfRange { name: "p10", .. })
        ));
        assert!(matches!(
            ChannelModel::new(0.6, 0.5),
            Err(ChannelError::NotPositivelyCorrelated(_))
        ));
        assert!(ChannelModel::new(f64::NAN, 0.2).is_err());
    }

    #[test]
    fn model_deserialization_validates() {
        let ok: ChannelModel = serde_json::from_str(r#"{"p01":0.2,"p10":0.3}"#).unwrap();
        assert_eq!(ok, ChannelModel::new(0.2, 0.3).unwrap());
        assert!(serde_json::from_str::<ChannelModel>(r#"{"p01":0.7,"p10":0.3}"#).is_err());
    }

    #[test]
    fn belief_after_on_observation() {
        let m = sym();
        let models = vec![m; 4];
        let b = BeliefState::new(4).updated(Some((2, ChannelState::On))).unwrap();
        assert!((b.omega(2, &models[2]) - 0.8).abs() < 1e-15);
        // Untouched channels keep the stationary prior.
        assert_eq!(b.omega(0, &models[0]), m.pi_on());
    }

    #[test]
    fn belief_ages_without_observation() {
        let m = sym();
        let mut b = BeliefState::new(1);
        b.advance(Some((0, ChannelState::Off))).unwrap();
        assert_eq!(b.observation(0), Observation::Observed { state: ChannelState::Off, age: 1 });
        b.advance(None).unwrap();
        assert_eq!(b.observation(0), Observation::Observed { state: ChannelState::Off, age: 2 });
        assert!((b.omega(0, &m) - 0.32).abs() < 1e-15);
        assert_eq!(b.omega(0, &m), m.k_step_prob(ChannelState::Off, 2).unwrap());
    }

    #[test]
    fn unobserved_stays_stationary() {
        let m = sym();
        let mut b = BeliefState::new(2);
        for _ in 0..10 {
            b.advance(None).unwrap();
        }
        assert_eq!(b.observation(1), Observation::Unobserved);
        assert_eq!(b.omega(1, &m), 0.5);
    }

    #[test]
    fn age_saturates_at_cap() {
        let m = ChannelModel::new(0.3, 0.1).unwrap();
        let mut b = BeliefState::with_age_cap(1, 5).unwrap();
        b.advance(Some((0, ChannelState::On))).unwrap();
        for _ in 0..20 {
            b.advance(None).unwrap();
        }
        assert_eq!(b.observation(0), Observation::Observed { state: ChannelState::On, age: 5 });
        assert_eq!(b.omega(0, &m), m.pi_on());
        assert_eq!(BeliefState::with_age_cap(1, 0), Err(ChannelError::ZeroAgeCap));
    }

    #[test]
    fn out_of_range_observation_rejected() {
        let mut b = BeliefState::new(2);
        assert_eq!(
            b.advance(Some((2, ChannelState::On))),
            Err(ChannelError::IndexOutOfRange { index: 2, len: 2 })
        );
    }

    #[test]
    fn omega_stays_in_countable_set() {
        let m = ChannelModel::new(0.15, 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b = BeliefState::new(1);
        for _ in 0..500 {
            let obs = if rng.gen::<f64>() < 0.3 {
                Some((0, if rng.gen() { ChannelState::On } else { ChannelState::Off }))
            } else {
                None
            };
            b.advance(obs).unwrap();
            let w = b.omega(0, &m);
            let member = w == m.pi_on()
                || (1..=600).any(|k| w == m.p01_k(k).unwrap() || w == m.p11_k(k).unwrap());
            assert!(member, "omega {w} not in W_n");
        }
    }

    #[test]
    fn on_to_on_frequency_matches_matrix() {
        let m = sym();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples = 1_000_000;
        let stays = (0..samples)
            .filter(|_| m.step(ChannelState::On, &mut rng).is_on())
            .count();
        let freq = stays as f64 / samples as f64;
        assert!((freq - 0.8).abs() < 0.002, "ON->ON frequency {freq}");
    }

    #[test]
    fn symmetric_detection() {
        let a = sym();
        let b = ChannelModel::new(0.2, 0.3).unwrap();
        assert!(is_symmetric(&[a, a, a]));
        assert!(!is_symmetric(&[a, b]));
        assert!(is_symmetric(&[]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn model() -> impl Strategy<Value = ChannelModel> {
            (0.01f64..0.98, 0.01f64..0.98)
                .prop_filter("positively correlated", |(a, b)| a + b < 0.99)
                .prop_map(|(a, b)| ChannelModel::new(a, b).unwrap())
        }

        proptest! {
            #[test]
            fn closed_form_matches_matrix_power(m in model(), k in 1u64..=64) {
                let brute = matrix_power(&m, k);
                prop_assert!((m.p01_k(k).unwrap() - brute[0][1]).abs() < 1e-12);
                prop_assert!((m.p11_k(k).unwrap() - brute[1][1]).abs() < 1e-12);
            }

            #[test]
            fn k_step_monotone_and_convergent(m in model()) {
                let pi = m.pi_on();
                for k in 1..1000u64 {
                    let (a0, a1) = (m.p01_k(k).unwrap(), m.p01_k(k + 1).unwrap());
                    let (b0, b1) = (m.p11_k(k).unwrap(), m.p11_k(k + 1).unwrap());
                    prop_assert!(a0 <= a1 && b0 >= b1);
                    // Strict while the remaining memory is representable.
                    if (1.0 - m.x()).powf(k as f64) * pi.min(1.0 - pi) > 1e-12 {
                        prop_assert!(a0 < a1 && b0 > b1);
                    }
                }
                prop_assert!((m.p01_k(1000).unwrap() - pi).abs() < 1e-12);
                prop_assert!((m.p11_k(1000).unwrap() - pi).abs() < 1e-12);
            }
        }
    }
}
