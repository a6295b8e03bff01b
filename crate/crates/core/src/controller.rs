//! The queue-dependent round robin controller (QRRNUM).
//!
//! At every frame boundary the controller looks at the backlog vector `Q`
//! and makes two independent decisions:
//!
//! * **Admission.** Per user, maximize `V_g·g_n(r) - Q_n·r` over
//!   `r ∈ [0, 1]`; the resulting rate is admitted in every slot of the
//!   frame.
//! * **Service.** Pick the subset `φ` maximizing the average MaxWeight ratio
//!
//!   ```text
//!   Σ_n Q_n·E[L_n - 1]·φ_n  /  Σ_n E[L_n]·φ_n
//!   ```
//!
//!   i.e. backlog-weighted expected service per round over expected round
//!   length, and run one round of `RR(φ)`. If the best ratio is not
//!   positive (only when `Q = 0`) the system idles for one slot.
//!
//! Mixtures of rounds never beat the best single round on this ratio, so
//! searching over single subsets is enough.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capacity::{round_length_law, ActivationVector, CapacityError, MAX_CHANNELS};
use crate::channel::{is_symmetric, ChannelError, ChannelModel};
pub use crate::utility::{BuiltinUtility, GenericUtility, UserUtility, UtilityFunction, UtilityKind};

/// Final bracket width of the golden-section admission search.
pub const GOLDEN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("V_g must be finite and > 0, got {0}")]
    InvalidVg(f64),

    #[error("backlog entry {index} is {value}; backlogs must be finite and >= 0")]
    InvalidBacklog { index: usize, value: f64 },

    #[error("backlog has {got} entries but the controller manages {expected} users")]
    LengthMismatch { got: usize, expected: usize },

    #[error("utility of user {user} ({name}) is not concave on [0, 1]")]
    NonConcave { user: usize, name: String },

    #[error("utility of user {user} ({name}) returned a non-finite value")]
    NonFiniteUtility { user: usize, name: String },

    #[error("mode symmetric_fast needs identical transition matrices on every channel")]
    NotSymmetric,

    #[error("mode exhaustive supports N <= {cap} channels, got {n}; use pairs_only")]
    EnumerationCap { n: usize, cap: usize },

    #[error("mode pairs_only needs at least two channels")]
    TooFewForPairs,

    #[error("no channels to schedule")]
    NoChannels,

    #[error(transparent)]
    Capacity(#[from] CapacityError),

    #[error(transparent)]
    Channel(#[from] ChannelError),
}

pub type Result<T> = std::result::Result<T, ControllerError>;

/// How the controller searches for the ratio-maximizing subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// All `2^N - 1` subsets.
    Exhaustive,
    /// Shared matrices only: sort by backlog and scan the top-`K` prefixes.
    SymmetricFast,
    /// Only rounds over exactly two users (or idle).
    PairsOnly,
}

impl SelectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMode::Exhaustive => "exhaustive",
            SelectionMode::SymmetricFast => "symmetric_fast",
            SelectionMode::PairsOnly => "pairs_only",
        }
    }
}

impl std::str::FromStr for SelectionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "exhaustive" => Ok(SelectionMode::Exhaustive),
            "symmetric_fast" => Ok(SelectionMode::SymmetricFast),
            "pairs_only" => Ok(SelectionMode::PairsOnly),
            other => Err(format!(
                "unknown mode '{other}' (expected exhaustive, symmetric_fast or pairs_only)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissionDecision {
    /// Packets admitted per slot for each user over the coming frame.
    pub rates: Vec<f64>,
    /// Optimal value `V_g·g(r) - Σ Q_n r_n`.
    pub h_star: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelectionDecision {
    /// `None` means idle for one slot.
    pub phi: Option<ActivationVector>,
    /// Ratio at the chosen subset (0 when idle).
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameDecision {
    pub admission: AdmissionDecision,
    pub selection: SelectionDecision,
}

fn check_backlog(q: &[f64], expected: usize) -> Result<()> {
    if q.len() != expected {
        return Err(ControllerError::LengthMismatch { got: q.len(), expected });
    }
    for (index, &value) in q.iter().enumerate() {
        if !(value.is_finite() && value >= 0.0) {
            return Err(ControllerError::InvalidBacklog { index, value });
        }
    }
    Ok(())
}

fn check_vg(v_g: f64) -> Result<()> {
    if v_g.is_finite() && v_g > 0.0 {
        Ok(())
    } else {
        Err(ControllerError::InvalidVg(v_g))
    }
}

/// Solves the per-frame admission program, one user at a time.
pub fn solve_admission(q: &[f64], utility: &UtilityFunction, v_g: f64) -> Result<AdmissionDecision> {
    check_vg(v_g)?;
    check_backlog(q, utility.len())?;
    let rates = utility
        .users()
        .iter()
        .zip(q)
        .enumerate()
        .map(|(n, (user, &qn))| admit_one(n, user, qn, v_g))
        .collect::<Result<Vec<f64>>>()?;
    let h_star = v_g * utility.value(&rates) - q.iter().zip(&rates).map(|(a, b)| a * b).sum::<f64>();
    Ok(AdmissionDecision { rates, h_star })
}

fn admit_one(user: usize, u: &UserUtility, q: f64, v_g: f64) -> Result<f64> {
    // No backlog penalty and a nondecreasing utility: admit everything.
    if q == 0.0 {
        return Ok(1.0);
    }
    match &u.kind {
        // Stationarity V·w/(1 + r) = Q, clamped to the box.
        UtilityKind::Log1p => Ok((v_g * u.weight / q - 1.0).clamp(0.0, 1.0)),
        UtilityKind::Linear => Ok(if v_g * u.weight >= q { 1.0 } else { 0.0 }),
        UtilityKind::Generic(g) => {
            golden_section_admission(|r| v_g * u.value(r) - q * r).map_err(|fault| match fault {
                SearchFault::NonConcave => ControllerError::NonConcave { user, name: g.name().to_string() },
                SearchFault::NonFinite => ControllerError::NonFiniteUtility { user, name: g.name().to_string() },
            })
        }
    }
}

enum SearchFault {
    NonConcave,
    NonFinite,
}

/// Maximizes a one-dimensional concave objective on `[0, 1]`, checking on
/// the way that no probe falls below the chord of its bracket.
fn golden_section_admission(h: impl Fn(f64) -> f64) -> std::result::Result<f64, SearchFault> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let eval = |r: f64| {
        let v = h(r);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(SearchFault::NonFinite)
        }
    };
    let below_chord = |a: f64, fa: f64, b: f64, fb: f64, x: f64, fx: f64| {
        let chord = fa + (fb - fa) * (x - a) / (b - a);
        fx < chord - 1e-9 * (1.0 + chord.abs())
    };

    let (mut a, mut b) = (0.0f64, 1.0f64);
    let (mut fa, mut fb) = (eval(a)?, eval(b)?);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (eval(c)?, eval(d)?);
    while b - a > GOLDEN_TOLERANCE {
        if below_chord(a, fa, b, fb, c, fc) || below_chord(a, fa, b, fb, d, fd) {
            return Err(SearchFault::NonConcave);
        }
        if fc >= fd {
            b = d;
            fb = fd;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            fa = fc;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    let candidates = [(mid, eval(mid)?), (0.0, eval(0.0)?), (1.0, eval(1.0)?)];
    Ok(candidates
        .into_iter()
        .fold((mid, f64::NEG_INFINITY), |best, (r, v)| if v > best.1 { (r, v) } else { best })
        .0)
}

/// The average MaxWeight ratio of `RR(φ)` at backlog `q`.
pub fn ratio_metric(q: &[f64], models: &[ChannelModel], phi: &ActivationVector) -> Result<f64> {
    check_backlog(q, models.len())?;
    let law = round_length_law(models, phi)?;
    let served: f64 = law.stays.iter().map(|s| q[s.channel] * s.mean_service()).sum();
    Ok(served / law.mean())
}

#[derive(Debug, Clone)]
struct Candidate {
    phi: ActivationVector,
    /// `(channel, E[L_n] - 1)` for every active channel.
    service: Vec<(usize, f64)>,
    mean_length: f64,
}

impl Candidate {
    fn ratio(&self, q: &[f64]) -> f64 {
        self.service.iter().map(|&(n, s)| q[n] * s).sum::<f64>() / self.mean_length
    }
}

#[derive(Debug, Clone)]
enum Search {
    Candidates(Vec<Candidate>),
    /// Coefficient of the top-`K` backlog sum, indexed by `K - 1`.
    Symmetric(Vec<f64>),
}

/// Precomputed search tables for one channel set and mode.
#[derive(Debug, Clone)]
pub struct Selector {
    channels: usize,
    mode: SelectionMode,
    search: Search,
}

fn candidate(models: &[ChannelModel], phi: ActivationVector) -> Result<Candidate> {
    let law = round_length_law(models, &phi)?;
    Ok(Candidate {
        phi,
        service: law.stays.iter().map(|s| (s.channel, s.mean_service())).collect(),
        mean_length: law.mean(),
    })
}

/// Deterministic tie-break: larger subsets first, then the smaller bitmask.
fn beats(value: f64, phi: &ActivationVector, best_value: f64, best_phi: &ActivationVector) -> bool {
    let tol = 1e-12 * value.abs().max(best_value.abs()).max(1.0);
    if value > best_value + tol {
        return true;
    }
    if value < best_value - tol {
        return false;
    }
    (phi.count(), std::cmp::Reverse(phi.mask())) > (best_phi.count(), std::cmp::Reverse(best_phi.mask()))
}

impl Selector {
    pub fn new(models: &[ChannelModel], mode: SelectionMode, enumeration_cap: usize) -> Result<Self> {
        let n = models.len();
        if n == 0 {
            return Err(ControllerError::NoChannels);
        }
        if n > MAX_CHANNELS {
            return Err(CapacityError::TooManyForMask { got: n }.into());
        }
        let search = match mode {
            SelectionMode::Exhaustive => {
                if n > enumeration_cap || n >= MAX_CHANNELS {
                    return Err(ControllerError::EnumerationCap { n, cap: enumeration_cap });
                }
                Search::Candidates(
                    ActivationVector::all_nonzero(n)
                        .map(|phi| candidate(models, phi))
                        .collect::<Result<_>>()?,
                )
            }
            SelectionMode::PairsOnly => {
                if n < 2 {
                    return Err(ControllerError::TooFewForPairs);
                }
                Search::Candidates(
                    ActivationVector::all_pairs(n)
                        .map(|phi| candidate(models, phi))
                        .collect::<Result<_>>()?,
                )
            }
            SelectionMode::SymmetricFast => {
                if !is_symmetric(models) {
                    return Err(ControllerError::NotSymmetric);
                }
                let m = models[0];
                let coefficients = (1..=n as u64)
                    .map(|k| {
                        let entry = m.p01_k(k)?;
                        Ok(entry / (k as f64 * (m.p10() + entry)))
                    })
                    .collect::<Result<_>>()?;
                Search::Symmetric(coefficients)
            }
        };
        Ok(Self { channels: n, mode, search })
    }

    pub fn mode(&self) -> SelectionMode {
        self.mode
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Picks the ratio-maximizing subset, or idle when no ratio is positive.
    pub fn select(&self, q: &[f64]) -> Result<SelectionDecision> {
        check_backlog(q, self.channels)?;
        let best = match &self.search {
            Search::Candidates(cands) => {
                let mut best: Option<(f64, ActivationVector)> = None;
                for c in cands {
                    let v = c.ratio(q);
                    if best.as_ref().is_none_or(|(bv, bp)| beats(v, &c.phi, *bv, bp)) {
                        best = Some((v, c.phi));
                    }
                }
                best
            }
            Search::Symmetric(coefficients) => {
                let mut order: Vec<usize> = (0..self.channels).collect();
                order.sort_by(|&a, &b| q[b].total_cmp(&q[a]));
                let mut prefix = 0.0;
                let mut best: Option<(f64, ActivationVector)> = None;
                for (k, coef) in coefficients.iter().enumerate() {
                    prefix += q[order[k]];
                    let v = coef * prefix;
                    let phi = ActivationVector::from_channels(&order[..=k], self.channels)?;
                    if best.as_ref().is_none_or(|(bv, bp)| beats(v, &phi, *bv, bp)) {
                        best = Some((v, phi));
                    }
                }
                best
            }
        };
        Ok(match best {
            Some((value, phi)) if value > 0.0 => SelectionDecision { phi: Some(phi), value },
            _ => SelectionDecision { phi: None, value: 0.0 },
        })
    }
}

/// One-shot subset selection; builds the search tables on every call.
pub fn select_phi(
    q: &[f64],
    models: &[ChannelModel],
    mode: SelectionMode,
    enumeration_cap: usize,
) -> Result<SelectionDecision> {
    Selector::new(models, mode, enumeration_cap)?.select(q)
}

/// The complete controller for one run.
#[derive(Debug, Clone)]
pub struct Controller {
    utility: UtilityFunction,
    v_g: f64,
    selector: Selector,
}

impl Controller {
    pub fn new(
        models: &[ChannelModel],
        utility: UtilityFunction,
        v_g: f64,
        mode: SelectionMode,
        enumeration_cap: usize,
    ) -> Result<Self> {
        check_vg(v_g)?;
        if utility.len() != models.len() {
            return Err(ControllerError::LengthMismatch { got: utility.len(), expected: models.len() });
        }
        let selector = Selector::new(models, mode, enumeration_cap)?;
        Ok(Self { utility, v_g, selector })
    }

    pub fn v_g(&self) -> f64 {
        self.v_g
    }

    pub fn utility(&self) -> &UtilityFunction {
        &self.utility
    }

    pub fn selector(&self) -> &Selector {
        &self.selector
    }

    /// Both decisions for the frame starting at backlog `q`.
    pub fn frame(&self, q: &[f64]) -> Result<FrameDecision> {
        Ok(FrameDecision {
            admission: solve_admission(q, &self.utility, self.v_g)?,
            selection: self.selector.select(q)?,
        })
    }
}

pub fn qrrnum_frame(
    q: &[f64],
    models: &[ChannelModel],
    utility: &UtilityFunction,
    v_g: f64,
    mode: SelectionMode,
    enumeration_cap: usize,
) -> Result<FrameDecision> {
    Controller::new(models, utility.clone(), v_g, mode, enumeration_cap)?.frame(q)
}
