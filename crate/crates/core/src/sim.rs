//! Frame-based simulation of the queueing network.
//!
//! Each frame is one `RR(φ)` round or one idle slot. The frame is executed
//! on the channel system first and then replayed slot by slot against the
//! queues:
//!
//! ```text
//! y_n(t)   = min(Q_n(t), μ_n(t))
//! Q_n(t+1) = max(Q_n(t) - μ_n(t), 0) + r_n(t)
//! ```
//!
//! Admission decided at a frame boundary is applied in every slot of that
//! frame, including idle frames. Runs stop exactly at the horizon, cutting
//! the last frame short if needed.

use serde::Serialize;
use thiserror::Error;

use crate::capacity::{ActivationVector, DEFAULT_ENUMERATION_CAP};
use crate::channel::{ChannelModel, DEFAULT_AGE_CAP};
use crate::controller::{Controller, ControllerError, SelectionMode};
use crate::policy::{ChannelSystem, PolicyError, PolicyRandRR, RoundTrace};
use crate::utility::UtilityFunction;

/// Default slope threshold for [`stability_diagnostic`] (packets/slot).
pub const DEFAULT_SLOPE_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("warmup ({warmup}) exceeds horizon ({horizon})")]
    WarmupExceedsHorizon { warmup: u64, horizon: u64 },

    #[error("fixed admission for user {user} is {value}; must lie in [0, 1]")]
    RateOutOfRange { user: usize, value: f64 },

    #[error("{what} has {got} entries, expected {expected}")]
    LengthMismatch { what: &'static str, got: usize, expected: usize },

    #[error(transparent)]
    Controller(#[from] ControllerError),

    #[error(transparent)]
    Policy(#[from] PolicyError),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub models: Vec<ChannelModel>,
    pub utility: UtilityFunction,
    pub v_g: f64,
    pub mode: SelectionMode,
    pub enumeration_cap: usize,
    /// Number of slots simulated.
    pub horizon: u64,
    /// Slots excluded from averages; `None` means `horizon / 10`.
    pub warmup: Option<u64>,
    pub seed: u64,
    pub age_cap: u64,
    /// Keep a per-frame log in the metrics.
    pub record_frames: bool,
    /// Sample the backlog vector every this many slots (0 disables).
    pub trajectory_stride: u64,
}

impl RunConfig {
    pub fn new(models: Vec<ChannelModel>, utility: UtilityFunction, v_g: f64, seed: u64) -> Self {
        Self {
            models,
            utility,
            v_g,
            mode: SelectionMode::Exhaustive,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            horizon: 1_000_000,
            warmup: None,
            seed,
            age_cap: DEFAULT_AGE_CAP,
            record_frames: false,
            trajectory_stride: 0,
        }
    }

    pub fn with_horizon(mut self, horizon: u64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_warmup(mut self, warmup: u64) -> Self {
        self.warmup = Some(warmup);
        self
    }

    pub fn with_mode(mut self, mode: SelectionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn warmup_slots(&self) -> u64 {
        self.warmup.unwrap_or(self.horizon / 10)
    }

    fn validate(&self) -> Result<()> {
        let warmup = self.warmup_slots();
        if warmup > self.horizon {
            return Err(SimError::WarmupExceedsHorizon { warmup, horizon: self.horizon });
        }
        if self.utility.len() != self.models.len() {
            return Err(SimError::LengthMismatch {
                what: "utility",
                got: self.utility.len(),
                expected: self.models.len(),
            });
        }
        Ok(())
    }
}

/// One frame of the per-frame log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameRecord {
    /// `t_k`.
    pub start: u64,
    /// `T_k`, the full frame length even if the horizon cut it short.
    pub length: u64,
    pub phi: Option<ActivationVector>,
    pub admitted: Vec<f64>,
    /// Backlog at the frame boundary.
    pub backlog: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub slot: u64,
    pub backlog: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub horizon: u64,
    pub warmup: u64,
    pub frames: u64,
    pub idle_frames: u64,
    /// Post-warmup `r̄`.
    pub mean_admitted: Vec<f64>,
    /// Post-warmup `ȳ`.
    pub mean_delivered: Vec<f64>,
    /// Post-warmup average of `μ`, delivered or not.
    pub mean_service: Vec<f64>,
    /// `g(ȳ)`.
    pub utility: f64,
    /// Post-warmup time average of `Σ_n Q_n(t)`.
    pub mean_backlog: f64,
    /// Least-squares slope of `Σ_n Q_n(t)` over the post-warmup window.
    pub backlog_slope: Option<f64>,
    pub final_backlog: Vec<f64>,
    /// `max_t max_n |Q_n(t)/t - (R_n(t) - Y_n(t))/t|` over the whole run.
    pub max_ledger_residual: f64,
    pub frame_log: Vec<FrameRecord>,
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Online least-squares fit of `y` against `t`.
#[derive(Debug, Default)]
struct SlopeFit {
    n: f64,
    mean_t: f64,
    mean_y: f64,
    co_moment: f64,
    m2_t: f64,
}

impl SlopeFit {
    fn push(&mut self, t: f64, y: f64) {
        self.n += 1.0;
        let dt = t - self.mean_t;
        self.mean_t += dt / self.n;
        self.mean_y += (y - self.mean_y) / self.n;
        self.co_moment += dt * (y - self.mean_y);
        self.m2_t += dt * (t - self.mean_t);
    }

    fn slope(&self) -> Option<f64> {
        (self.n >= 2.0 && self.m2_t > 0.0).then(|| self.co_moment / self.m2_t)
    }
}

struct Accumulator {
    channels: usize,
    horizon: u64,
    warmup: u64,
    t: u64,
    q: Vec<f64>,
    admitted_total: Vec<f64>,
    delivered_total: Vec<f64>,
    admitted_window: Vec<f64>,
    delivered_window: Vec<f64>,
    service_window: Vec<f64>,
    backlog_window: f64,
    fit: SlopeFit,
    max_residual: f64,
    stride: u64,
    trajectory: Vec<TrajectoryPoint>,
}

impl Accumulator {
    fn new(channels: usize, horizon: u64, warmup: u64, stride: u64) -> Self {
        Self {
            channels,
            horizon,
            warmup,
            t: 0,
            q: vec![0.0; channels],
            admitted_total: vec![0.0; channels],
            delivered_total: vec![0.0; channels],
            admitted_window: vec![0.0; channels],
            delivered_window: vec![0.0; channels],
            service_window: vec![0.0; channels],
            backlog_window: 0.0,
            fit: SlopeFit::default(),
            max_residual: 0.0,
            stride,
            trajectory: vec![],
        }
    }

    fn done(&self) -> bool {
        self.t >= self.horizon
    }

    /// Applies one slot; `served` is the channel with `μ = 1`, if any.
    fn slot(&mut self, served: Option<usize>, rates: &[f64]) {
        if self.stride > 0 && self.t % self.stride == 0 {
            self.trajectory.push(TrajectoryPoint { slot: self.t, backlog: self.q.clone() });
        }
        let in_window = self.t >= self.warmup;
        if in_window {
            let total: f64 = self.q.iter().sum();
            self.backlog_window += total;
            self.fit.push(self.t as f64, total);
        }
        for n in 0..self.channels {
            let mu = if served == Some(n) { 1.0 } else { 0.0 };
            let y = self.q[n].min(mu);
            let r = rates[n];
            self.q[n] = self.q[n] - y + r;
            self.admitted_total[n] += r;
            self.delivered_total[n] += y;
            if in_window {
                self.admitted_window[n] += r;
                self.delivered_window[n] += y;
                self.service_window[n] += mu;
            }
        }
        self.t += 1;
        let t = self.t as f64;
        for n in 0..self.channels {
            let residual = (self.q[n] / t - (self.admitted_total[n] - self.delivered_total[n]) / t).abs();
            self.max_residual = self.max_residual.max(residual);
        }
    }

    /// Replays a frame's slots until the frame or the horizon ends.
    fn replay(&mut self, trace: &RoundTrace, rates: &[f64]) {
        for s in &trace.slots {
            if self.done() {
                break;
            }
            self.slot(s.served(), rates);
        }
    }

    fn finish(self, utility: &UtilityFunction, frames: u64, idle_frames: u64, frame_log: Vec<FrameRecord>) -> RunMetrics {
        let window = self.horizon.saturating_sub(self.warmup);
        let average = |v: &[f64]| -> Vec<f64> {
            v.iter().map(|x| if window == 0 { 0.0 } else { x / window as f64 }).collect()
        };
        let mean_delivered = average(&self.delivered_window);
        RunMetrics {
            horizon: self.horizon,
            warmup: self.warmup,
            frames,
            idle_frames,
            mean_admitted: average(&self.admitted_window),
            utility: utility.value(&mean_delivered),
            mean_delivered,
            mean_service: average(&self.service_window),
            mean_backlog: if window == 0 { 0.0 } else { self.backlog_window / window as f64 },
            backlog_slope: self.fit.slope(),
            final_backlog: self.q,
            max_ledger_residual: self.max_residual,
            frame_log,
            trajectory: self.trajectory,
        }
    }
}

fn run_loop(
    config: &RunConfig,
    mut frame: impl FnMut(&[f64], &mut ChannelSystem) -> Result<(Vec<f64>, RoundTrace)>,
) -> Result<RunMetrics> {
    config.validate()?;
    let n = config.models.len();
    let mut system = ChannelSystem::new(config.models.clone(), config.seed, config.age_cap)?;
    let mut acc = Accumulator::new(n, config.horizon, config.warmup_slots(), config.trajectory_stride);
    let mut frames = 0;
    let mut idle_frames = 0;
    let mut frame_log = vec![];
    while !acc.done() {
        let (rates, trace) = frame(&acc.q, &mut system)?;
        if config.record_frames {
            frame_log.push(FrameRecord {
                start: trace.start,
                length: trace.len(),
                phi: trace.phi,
                admitted: rates.clone(),
                backlog: acc.q.clone(),
            });
        }
        frames += 1;
        idle_frames += u64::from(trace.is_idle());
        acc.replay(&trace, &rates);
    }
    Ok(acc.finish(&config.utility, frames, idle_frames, frame_log))
}

/// Runs the QRRNUM controller for `config.horizon` slots.
pub fn run_qrrnum(config: &RunConfig) -> Result<RunMetrics> {
    let controller = Controller::new(
        &config.models,
        config.utility.clone(),
        config.v_g,
        config.mode,
        config.enumeration_cap,
    )?;
    run_loop(config, |q, system| {
        let decision = controller.frame(q)?;
        let trace = match decision.selection.phi {
            Some(phi) => system.run_rr_round(&phi)?,
            None => system.idle_slot(),
        };
        Ok((decision.admission.rates, trace))
    })
}

/// Runs a fixed randomized round robin policy with constant admission.
/// `config.v_g` and `config.mode` are ignored.
pub fn run_fixed_policy(config: &RunConfig, policy: &PolicyRandRR, r_fixed: &[f64]) -> Result<RunMetrics> {
    let n = config.models.len();
    if r_fixed.len() != n {
        return Err(SimError::LengthMismatch { what: "r_fixed", got: r_fixed.len(), expected: n });
    }
    if let Some((user, &value)) = r_fixed.iter().enumerate().find(|(_, r)| !(0.0..=1.0).contains(*r)) {
        return Err(SimError::RateOutOfRange { user, value });
    }
    run_loop(config, |_, system| Ok((r_fixed.to_vec(), system.run_randrr_frame(policy)?)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    pub verdict: Stability,
    pub slope: Option<f64>,
    pub threshold: f64,
}

/// Classifies a run by the backlog slope over its post-warmup window.
/// Needs `horizon >= 10·warmup`; shorter windows are inconclusive.
pub fn stability_diagnostic(metrics: &RunMetrics, threshold: f64) -> StabilityReport {
    let verdict = match metrics.backlog_slope {
        _ if metrics.horizon < 10 * metrics.warmup => Stability::Inconclusive,
        None => Stability::Inconclusive,
        Some(s) if s < threshold => Stability::Stable,
        Some(_) => Stability::Unstable,
    };
    StabilityReport { verdict, slope: metrics.backlog_slope, threshold }
}
