//! The inner achievable throughput region and its round-length statistics.
//!
//! For every nonempty subset `φ` of channels, one round robin pass over `φ`
//! delivers the rate vector `η^(φ)`. The region reachable by randomly
//! mixing such passes (and idle slots) is the down-closure of the convex
//! hull of those vertices. This module enumerates the vertices, answers
//! membership and boundary queries with a small LP, computes the law of the
//! per-channel stay length `L_n` and the drift constant `B`, and maximizes a
//! concave utility over the region with Frank-Wolfe.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelModel;
use crate::lp::{self, LpError};
use crate::utility::UtilityFunction;

/// Largest channel count representable by an [`ActivationVector`].
pub const MAX_CHANNELS: usize = 64;
/// Default cap on `N` for exhaustive vertex enumeration (`2^16 - 1` vertices).
pub const DEFAULT_ENUMERATION_CAP: usize = 16;
/// Uniform slack below which a point counts as lying on the boundary.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CapacityError {
    #[error("activation vector selects no channel; the idle vector has no rate vertex")]
    ZeroActivation,

    #[error("{got} channels but at most {MAX_CHANNELS} are supported")]
    TooManyForMask { got: usize },

    #[error("activation vector has {phi} entries but there are {models} channel models")]
    LengthMismatch { phi: usize, models: usize },

    #[error(
        "N = {n} exceeds the exhaustive enumeration cap of {cap}; \
         use the pair-restricted region (mode pairs_only) for large N"
    )]
    EnumerationCap { n: usize, cap: usize },

    #[error("the pair-restricted region needs at least two channels")]
    TooFewForPairs,

    #[error("{0} requires a shared transition matrix across all channels")]
    NotSymmetric(&'static str),

    #[error("round length M must be >= 1")]
    ZeroRound,

    #[error("rate vector has {got} entries, region has {expected} channels")]
    DimensionMismatch { got: usize, expected: usize },

    #[error("rate entry {index} is {value}; rates must be finite and >= 0")]
    NegativeRate { index: usize, value: f64 },

    #[error("probe direction must be nonnegative and nonzero")]
    ZeroDirection,

    #[error("no channel models given")]
    NoChannels,

    #[error("utility has {utility} users but the region has {region} channels")]
    UtilityMismatch { utility: usize, region: usize },

    #[error("utility gradient is not finite after {0} damped steps")]
    NonFiniteGradient(usize),

    #[error(transparent)]
    Lp(#[from] LpError),
}

pub type Result<T> = std::result::Result<T, CapacityError>;

/// A subset `φ` of active channels, stored as a bitmask (bit `n` = channel `n`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActivationVector {
    mask: u64,
    len: usize,
}

impl ActivationVector {
    pub fn from_mask(mask: u64, len: usize) -> Result<Self> {
        if len > MAX_CHANNELS {
            return Err(CapacityError::TooManyForMask { got: len });
        }
        let valid = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
        Ok(Self { mask: mask & valid, len })
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let mask = bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .fold(0u64, |m, (i, _)| m | (1 << i));
        Self::from_mask(mask, bits.len())
    }

    pub fn from_channels(channels: &[usize], len: usize) -> Result<Self> {
        let mask = channels.iter().fold(0u64, |m, &c| m | (1 << c));
        Self::from_mask(mask, len)
    }

    /// `φ = 1`, every channel active.
    pub fn all(len: usize) -> Result<Self> {
        Self::from_mask(u64::MAX, len)
    }

    pub fn zero(len: usize) -> Result<Self> {
        Self::from_mask(0, len)
    }

    pub fn mask(&self) -> u64 {
        self.mask
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_zero(&self) -> bool {
        self.mask == 0
    }

    /// `M(φ)`, the number of active channels.
    pub fn count(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_active(&self, channel: usize) -> bool {
        channel < self.len && self.mask & (1 << channel) != 0
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&n| self.is_active(n))
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.len).map(|n| self.is_active(n)).collect()
    }

    /// Binary string with channel 1 first, e.g. `"10"` for `φ = (1, 0)`.
    pub fn to_bit_string(&self) -> String {
        (0..self.len).map(|n| if self.is_active(n) { '1' } else { '0' }).collect()
    }

    pub fn from_bit_string(s: &str) -> Option<Self> {
        let bits: Option<Vec<bool>> = s
            .chars()
            .map(|c| match c {
                '1' => Some(true),
                '0' => Some(false),
                _ => None,
            })
            .collect();
        Self::from_bits(&bits?).ok()
    }

    /// Every nonzero `φ` over `len` channels, in increasing mask order.
    pub fn all_nonzero(len: usize) -> impl Iterator<Item = ActivationVector> {
        (1u64..(1u64 << len)).map(move |mask| ActivationVector { mask, len })
    }

    /// Every `φ` with exactly two active channels.
    pub fn all_pairs(len: usize) -> impl Iterator<Item = ActivationVector> {
        (0..len).flat_map(move |i| {
            (i + 1..len).map(move |j| ActivationVector { mask: (1 << i) | (1 << j), len })
        })
    }
}

fn check_phi(models: &[ChannelModel], phi: &ActivationVector) -> Result<()> {
    if phi.len() != models.len() {
        return Err(CapacityError::LengthMismatch { phi: phi.len(), models: models.len() });
    }
    if phi.is_zero() {
        return Err(CapacityError::ZeroActivation);
    }
    Ok(())
}

/// `P01(1 - (1-x)^M) / (x P10)`, the expected number of packets one visit
/// delivers when the channel is entered with belief `P^(M)_01`.
fn visit_yield(model: &ChannelModel, m: usize) -> f64 {
    let x = model.x();
    model.p01() * (1.0 - (1.0 - x).powi(m as i32)) / (x * model.p10())
}

/// Per-channel rates `η^(φ)` delivered by repeated round robin over `φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaVector(pub Vec<f64>);

impl std::ops::Deref for EtaVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub fn eta_vector(models: &[ChannelModel], phi: &ActivationVector) -> Result<EtaVector> {
    check_phi(models, phi)?;
    let m = phi.count();
    let yields: Vec<f64> = models
        .iter()
        .enumerate()
        .map(|(n, model)| if phi.is_active(n) { visit_yield(model, m) } else { 0.0 })
        .collect();
    let denom = m as f64 + yields.iter().sum::<f64>();
    Ok(EtaVector(yields.into_iter().map(|y| y / denom).collect()))
}

/// Sum throughput `c_M` of a round robin over `M` channels sharing `model`.
pub fn c_coefficient(model: &ChannelModel, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(CapacityError::ZeroRound);
    }
    let x = model.x();
    let gain = model.p01() * (1.0 - (1.0 - x).powi(m as i32));
    Ok(gain / (x * model.p10() + gain))
}

/// Law of the time `L` a round spends on one active channel.
///
/// `L = 1` with probability `1 - a` and `L = j >= 2` with probability
/// `a · P11^(j-2) · P10`, where `a = P^(M)_01` is the effective entry belief.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StayLaw {
    pub channel: usize,
    pub entry: f64,
    pub p11: f64,
    pub p10: f64,
}

impl StayLaw {
    pub fn pmf(&self, j: u64) -> f64 {
        match j {
            0 => 0.0,
            1 => 1.0 - self.entry,
            _ => self.entry * self.p11.powf((j - 2) as f64) * self.p10,
        }
    }

    /// `P(L > j)`.
    pub fn tail(&self, j: u64) -> f64 {
        match j {
            0 => 1.0,
            _ => self.entry * self.p11.powf((j - 1) as f64),
        }
    }

    pub fn mean(&self) -> f64 {
        1.0 + self.entry / self.p10
    }

    /// `E[L^2]`. With `L = 1 + B·G`, `B ~ Bernoulli(a)` and `G` geometric on
    /// `{1, 2, ..}` with success `P10`: `1 + 2a E[G] + a E[G^2]`.
    pub fn second_moment(&self) -> f64 {
        let q = self.p10;
        1.0 + 2.0 * self.entry / q + self.entry * (2.0 - q) / (q * q)
    }

    pub fn variance(&self) -> f64 {
        self.second_moment() - self.mean().powi(2)
    }

    /// Expected packets delivered during the stay, `E[L] - 1`.
    pub fn mean_service(&self) -> f64 {
        self.entry / self.p10
    }
}

/// Round length `T = Σ_{n ∈ φ} L_n` of one pass of round robin over `φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLengthLaw {
    pub phi: ActivationVector,
    pub stays: Vec<StayLaw>,
}

impl RoundLengthLaw {
    pub fn mean(&self) -> f64 {
        self.stays.iter().map(StayLaw::mean).sum()
    }

    /// `E[T^2]`, treating stays on different channels as independent.
    pub fn second_moment(&self) -> f64 {
        let var: f64 = self.stays.iter().map(StayLaw::variance).sum();
        var + self.mean().powi(2)
    }

    pub fn stay(&self, channel: usize) -> Option<&StayLaw> {
        self.stays.iter().find(|s| s.channel == channel)
    }
}

pub fn round_length_law(models: &[ChannelModel], phi: &ActivationVector) -> Result<RoundLengthLaw> {
    check_phi(models, phi)?;
    let m = phi.count() as u64;
    let stays = phi
        .active()
        .map(|n| {
            let model = &models[n];
            StayLaw {
                channel: n,
                entry: model.p01_k(m).expect("m >= 1"),
                p11: model.p11(),
                p10: model.p10(),
            }
        })
        .collect();
    Ok(RoundLengthLaw { phi: *phi, stays })
}

/// `B = N · E[T_max^2]`, where `T_max` is the round length of round robin
/// over all channels.
pub fn b_constant(models: &[ChannelModel]) -> Result<f64> {
    if models.is_empty() {
        return Err(CapacityError::NoChannels);
    }
    let law = round_length_law(models, &ActivationVector::all(models.len())?)?;
    Ok(models.len() as f64 * law.second_moment())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub phi: ActivationVector,
    pub eta: EtaVector,
}

/// Which subsets contribute vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    /// All `2^N - 1` nonempty subsets.
    Full,
    /// Subsets of exactly two channels.
    Pairs,
}

/// Down-closure of the convex hull of the `η^(φ)` vertices plus the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerRegion {
    channels: usize,
    kind: RegionKind,
    vertices: Vec<Vertex>,
}

impl InnerRegion {
    /// Enumerates every nonempty subset, refusing `N > cap`.
    pub fn exhaustive(models: &[ChannelModel], cap: usize) -> Result<Self> {
        let n = models.len();
        if n == 0 {
            return Err(CapacityError::NoChannels);
        }
        if n > cap || n >= MAX_CHANNELS {
            return Err(CapacityError::EnumerationCap { n, cap });
        }
        let masks: Vec<u64> = (1u64..(1u64 << n)).collect();
        let vertices = masks
            .par_iter()
            .map(|&mask| {
                let phi = ActivationVector::from_mask(mask, n)?;
                Ok(Vertex { eta: eta_vector(models, &phi)?, phi })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { channels: n, kind: RegionKind::Full, vertices })
    }

    /// The smaller region reachable when every round serves exactly two users.
    pub fn pairs_only(models: &[ChannelModel]) -> Result<Self> {
        let n = models.len();
        if n < 2 {
            return Err(CapacityError::TooFewForPairs);
        }
        if n > MAX_CHANNELS {
            return Err(CapacityError::TooManyForMask { got: n });
        }
        let vertices = ActivationVector::all_pairs(n)
            .map(|phi| Ok(Vertex { eta: eta_vector(models, &phi)?, phi }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { channels: n, kind: RegionKind::Pairs, vertices })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kind(&self) -> RegionKind {
        self.kind
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    fn check_rates(&self, rates: &[f64]) -> Result<()> {
        if rates.len() != self.channels {
            return Err(CapacityError::DimensionMismatch { got: rates.len(), expected: self.channels });
        }
        for (index, &value) in rates.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(CapacityError::NegativeRate { index, value });
            }
        }
        Ok(())
    }

    /// Classifies `lambda` with the default boundary tolerance.
    pub fn membership(&self, lambda: &[f64]) -> Result<Membership> {
        self.membership_with_tolerance(lambda, BOUNDARY_TOLERANCE)
    }

    /// Finds the largest uniform slack `s` such that `lambda + s·1` is
    /// dominated by a convex combination of vertices (and the origin).
    pub fn membership_with_tolerance(&self, lambda: &[f64], tolerance: f64) -> Result<Membership> {
        self.check_rates(lambda)?;
        let n = self.channels;
        let k = self.vertices.len();
        let lmax = lambda.iter().cloned().fold(0.0, f64::max);

        // Variables: w_1..w_k, then u = s + lmax (the optimum has u >= 0).
        let mut c = vec![0.0; k + 1];
        c[k] = 1.0;
        let mut rows = Vec::with_capacity(n + 1);
        let mut rhs = Vec::with_capacity(n + 1);
        for ch in 0..n {
            let mut row: Vec<f64> = self.vertices.iter().map(|v| -v.eta[ch]).collect();
            row.push(1.0);
            rows.push(row);
            rhs.push(lmax - lambda[ch]);
        }
        let mut total = vec![1.0; k];
        total.push(0.0);
        rows.push(total);
        rhs.push(1.0);

        let sol = lp::maximize(&c, &rows, &rhs)?;
        let slack = sol.objective - lmax;
        if slack < -tolerance {
            let direction: Vec<f64> = sol.duals[..n].to_vec();
            let norm: f64 = direction.iter().sum();
            let direction: Vec<f64> = direction.iter().map(|d| d / norm).collect();
            let offset = sol.duals[n] / norm;
            return Ok(Membership::Outside { slack, separation: Separation { direction, offset } });
        }
        let weights = self
            .vertices
            .iter()
            .zip(&sol.x)
            .filter(|(_, &w)| w > 0.0)
            .map(|(v, &w)| (v.phi, w))
            .collect();
        let certificate = Certificate { weights };
        if slack > tolerance {
            Ok(Membership::Inside { slack, certificate })
        } else {
            Ok(Membership::Boundary { slack, certificate })
        }
    }

    /// The farthest point `t·v` of the region along direction `v`.
    pub fn boundary_probe(&self, direction: &[f64]) -> Result<Vec<f64>> {
        self.check_rates(direction).map_err(|e| match e {
            CapacityError::NegativeRate { .. } => CapacityError::ZeroDirection,
            other => other,
        })?;
        if direction.iter().all(|&v| v == 0.0) {
            return Err(CapacityError::ZeroDirection);
        }
        let n = self.channels;
        let k = self.vertices.len();
        let mut c = vec![0.0; k + 1];
        c[k] = 1.0;
        let mut rows = Vec::with_capacity(n + 1);
        for ch in 0..n {
            let mut row: Vec<f64> = self.vertices.iter().map(|v| -v.eta[ch]).collect();
            row.push(direction[ch]);
            rows.push(row);
        }
        let mut total = vec![1.0; k];
        total.push(0.0);
        rows.push(total);
        let mut rhs = vec![0.0; n];
        rhs.push(1.0);
        let sol = lp::maximize(&c, &rows, &rhs)?;
        Ok(direction.iter().map(|v| sol.objective * v).collect())
    }

    /// Maximizes `⟨weights, y⟩` over the region. Negative weights are
    /// clipped, which is exact for a down-closed set: the optimum zeroes the
    /// coordinates it is penalized for.
    pub fn linear_oracle(&self, weights: &[f64]) -> Vec<f64> {
        let clipped: Vec<f64> = weights.iter().map(|w| w.max(0.0)).collect();
        let mut best: Option<(&Vertex, f64)> = None;
        for v in &self.vertices {
            let score: f64 = v.eta.iter().zip(&clipped).map(|(e, w)| e * w).sum();
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((v, score));
            }
        }
        match best {
            Some((v, score)) if score > 0.0 => v
                .eta
                .iter()
                .zip(weights)
                .map(|(&e, &w)| if w < 0.0 { 0.0 } else { e })
                .collect(),
            _ => vec![0.0; self.channels],
        }
    }
}

/// Convex weights over vertices whose combination dominates the query.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub weights: Vec<(ActivationVector, f64)>,
}

/// Hyperplane `direction · y <= offset` holding on every vertex but
/// violated by the query point.
#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    pub direction: Vec<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Membership {
    Inside { slack: f64, certificate: Certificate },
    Boundary { slack: f64, certificate: Certificate },
    Outside { slack: f64, separation: Separation },
}

impl Membership {
    pub fn slack(&self) -> f64 {
        match self {
            Membership::Inside { slack, .. }
            | Membership::Boundary { slack, .. }
            | Membership::Outside { slack, .. } => *slack,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Membership::Inside { .. } => "inside",
            Membership::Boundary { .. } => "boundary",
            Membership::Outside { .. } => "outside",
        }
    }

    pub fn is_feasible(&self) -> bool {
        !matches!(self, Membership::Outside { .. })
    }
}

pub fn region_membership(region: &InnerRegion, lambda: &[f64]) -> Result<Membership> {
    region.membership(lambda)
}

pub fn boundary_probe(region: &InnerRegion, direction: &[f64]) -> Result<Vec<f64>> {
    region.boundary_probe(direction)
}

/// Frank-Wolfe stopping rule and budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrankWolfeOptions {
    pub gap_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FrankWolfeOptions {
    fn default() -> Self {
        Self { gap_tolerance: 1e-8, max_iterations: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OfflineOptimum {
    pub point: Vec<f64>,
    pub value: f64,
    /// Frank-Wolfe duality gap at the returned point; bounds `g* - value`
    /// when it came from the iterate.
    pub gap: f64,
    pub iterations: usize,
}

const DAMPING_LIMIT: usize = 60;

pub fn solve_offline_optimum(region: &InnerRegion, utility: &UtilityFunction) -> Result<OfflineOptimum> {
    solve_offline_optimum_with(region, utility, FrankWolfeOptions::default())
}

pub fn solve_offline_optimum_with(
    region: &InnerRegion,
    utility: &UtilityFunction,
    options: FrankWolfeOptions,
) -> Result<OfflineOptimum> {
    let n = region.channels();
    if utility.len() != n {
        return Err(CapacityError::UtilityMismatch { utility: utility.len(), region: n });
    }
    // Interior point used to pull the iterate away from gradient poles.
    let centroid: Vec<f64> = (0..n)
        .map(|ch| {
            region.vertices().iter().map(|v| v.eta[ch]).sum::<f64>() / (region.vertices().len() + 1) as f64
        })
        .collect();

    let mut x = vec![0.0; n];
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    let mut damped = 0;
    while iterations < options.max_iterations {
        let grad = utility.gradient(&x);
        if grad.iter().any(|g| !g.is_finite()) {
            damped += 1;
            if damped > DAMPING_LIMIT {
                return Err(CapacityError::NonFiniteGradient(damped - 1));
            }
            for (xi, ci) in x.iter_mut().zip(&centroid) {
                *xi = 0.5 * *xi + 0.5 * ci;
            }
            continue;
        }
        damped = 0;
        iterations += 1;
        let s = region.linear_oracle(&grad);
        gap = grad.iter().zip(s.iter().zip(&x)).map(|(g, (si, xi))| g * (si - xi)).sum();
        if gap < options.gap_tolerance {
            break;
        }
        let step = line_search(|gamma| {
            let y: Vec<f64> = x.iter().zip(&s).map(|(xi, si)| xi + gamma * (si - xi)).collect();
            utility.value(&y)
        });
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += step * (si - *xi);
        }
    }
    let gap = gap.max(0.0);

    let mut best = OfflineOptimum { value: utility.value(&x), point: x, gap, iterations };
    for v in region.vertices() {
        let value = utility.value(&v.eta);
        if value > best.value {
            best.value = value;
            best.point = v.eta.0.clone();
        }
    }
    Ok(best)
}

/// Golden-section maximization of a concave function on `[0, 1]`.
fn line_search(f: impl Fn(f64) -> f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-12 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    // The ends are candidates too: concave maxima often sit at gamma = 1.
    [(0.0, f(0.0)), (1.0, f(1.0)), (mid, f(mid))]
        .into_iter()
        .fold((0.0, f64::NEG_INFINITY), |acc, (g, v)| if v > acc.1 { (g, v) } else { acc })
        .0
}

/// Serializable digest of a region and the drift constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub channels: usize,
    pub kind: RegionKind,
    pub vertex_count: usize,
    /// `E[T_max]` and `E[T_max^2]` for round robin over all channels.
    pub mean_round_length: f64,
    pub round_length_second_moment: f64,
    pub b_constant: f64,
}

pub fn region_summary(models: &[ChannelModel], region: &InnerRegion) -> Result<RegionSummary> {
    let law = round_length_law(models, &ActivationVector::all(models.len())?)?;
    Ok(RegionSummary {
        channels: region.channels(),
        kind: region.kind(),
        vertex_count: region.vertices().len(),
        mean_round_length: law.mean(),
        round_length_second_moment: law.second_moment(),
        b_constant: b_constant(models)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::{BuiltinUtility, GenericUtility, UserUtility, UtilityKind};

    fn sym(n: usize) -> Vec<ChannelModel> {
        vec![ChannelModel::new(0.2, 0.2).unwrap(); n]
    }

    fn phi(bits: &[u8]) -> ActivationVector {
        ActivationVector::from_bits(&bits.iter().map(|&b| b == 1).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn activation_vector_basics() {
        let p = phi(&[1, 0, 1]);
        assert_eq!(p.count(), 2);
        assert_eq!(p.active().collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(p.to_bit_string(), "101");
        assert_eq!(ActivationVector::from_bit_string("101"), Some(p));
        assert_eq!(ActivationVector::from_bit_string("1x1"), None);
        assert_eq!(ActivationVector::all_nonzero(4).count(), 15);
        assert_eq!(ActivationVector::all_pairs(5).count(), 10);
        assert!(ActivationVector::from_mask(1, 65).is_err());
        assert_eq!(ActivationVector::all(64).unwrap().count(), 64);
    }

    #[test]
    fn eta_two_user_example() {
        let m = sym(2);
        let both = eta_vector(&m, &phi(&[1, 1])).unwrap();
        assert!((both[0] - 4.0 / 13.0).abs() < 1e-15 && (both[1] - 4.0 / 13.0).abs() < 1e-15);
        let single = eta_vector(&m, &phi(&[1, 0])).unwrap();
        assert!((single[0] - 0.5).abs() < 1e-15);
        assert_eq!(single[1], 0.0);
    }

    #[test]
    fn eta_singleton_structure() {
        let models = vec![
            ChannelModel::new(0.1, 0.3).unwrap(),
            ChannelModel::new(0.25, 0.15).unwrap(),
            ChannelModel::new(0.3, 0.4).unwrap(),
        ];
        for n in 0..3 {
            let p = ActivationVector::from_channels(&[n], 3).unwrap();
            let eta = eta_vector(&models, &p).unwrap();
            // One channel alone: yield P01/P10 per visit of mean length 1 + P01/P10.
            let m = models[n];
            let expected = (m.p01() / m.p10()) / (1.0 + m.p01() / m.p10());
            assert!((eta[n] - expected).abs() < 1e-14);
            // That rate is the stationary ON probability.
            assert!((eta[n] - m.pi_on()).abs() < 1e-14);
            assert!(eta.iter().enumerate().all(|(i, &e)| i == n || e == 0.0));
        }
    }

    #[test]
    fn degenerate_probe_on_large_symmetric_region() {
        // Spreading time evenly over all size-M subsets gives every user
        // c_M / N, so the diagonal boundary sits at max_M c_M / N.
        let n = 12;
        let models = sym(n);
        let region = InnerRegion::exhaustive(&models, 16).unwrap();
        let expected = (1..=n).map(|m| c_coefficient(&models[0], m).unwrap()).fold(0.0, f64::max) / n as f64;
        let point = region.boundary_probe(&vec![1.0; n]).unwrap();
        for x in point {
            assert!((x - expected).abs() < 1e-9, "{x} vs {expected}");
        }
        let m = region.membership(&vec![expected; n]).unwrap();
        assert_eq!(m.label(), "boundary");
    }

    #[test]
    fn eta_zero_rejected() {
        assert_eq!(eta_vector(&sym(2), &phi(&[0, 0])), Err(CapacityError::ZeroActivation));
        assert!(matches!(
            eta_vector(&sym(3), &phi(&[1, 0])),
            Err(CapacityError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn c_coefficient_examples() {
        let m = ChannelModel::new(0.2, 0.2).unwrap();
        assert!((c_coefficient(&m, 1).unwrap() - 0.5).abs() < 1e-15);
        assert!((c_coefficient(&m, 2).unwrap() - 8.0 / 13.0).abs() < 1e-15);
        assert!((c_coefficient(&m, 2).unwrap() - 0.615385).abs() < 1e-6);
        assert_eq!(c_coefficient(&m, 0), Err(CapacityError::ZeroRound));
    }

    #[test]
    fn round_length_examples() {
        let m = sym(2);
        let single = round_length_law(&m, &phi(&[1, 0])).unwrap();
        assert!((single.mean() - 2.0).abs() < 1e-15);
        let both = round_length_law(&m, &phi(&[1, 1])).unwrap();
        assert!((both.mean() - 5.2).abs() < 1e-14);
    }

    /// Truncated summation of `E[L^2]` stopping once the tail mass is below 1e-12.
    fn second_moment_by_summation(law: &StayLaw) -> (f64, f64) {
        let (mut total, mut m2, mut j) = (0.0, 0.0, 1u64);
        while law.tail(j - 1) >= 1e-12 || j < 3 {
            let p = law.pmf(j);
            total += p;
            m2 += (j * j) as f64 * p;
            j += 1;
        }
        (total, m2)
    }

    #[test]
    fn b_constant_single_user() {
        let m = sym(1);
        let law = round_length_law(&m, &phi(&[1])).unwrap();
        let (mass, m2) = second_moment_by_summation(&law.stays[0]);
        assert!((mass - 1.0).abs() < 1e-10);
        // Tail mass < 1e-12 still leaves ~J^2·1e-12 of second moment behind.
        assert!((m2 - 12.0).abs() < 1e-6 * 12.0, "summed E[L^2] = {m2}");
        assert!((b_constant(&m).unwrap() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn b_constant_two_user_and_growth() {
        // Var(L) = 18.6 - 2.6^2 = 11.84 per channel; E[T^2] = 23.68 + 27.04.
        assert!((b_constant(&sym(2)).unwrap() - 101.44).abs() < 1e-10);
        for n in 1..6 {
            let b1 = b_constant(&sym(n)).unwrap();
            let b2 = b_constant(&sym(2 * n)).unwrap();
            assert!(b2 > 2.0 * b1);
            assert!(b1.is_finite());
        }
        assert_eq!(b_constant(&[]), Err(CapacityError::NoChannels));
    }

    #[test]
    fn membership_examples() {
        let region = InnerRegion::exhaustive(&sym(2), DEFAULT_ENUMERATION_CAP).unwrap();
        let inside = region.membership(&[0.25, 0.25]).unwrap();
        assert_eq!(inside.label(), "inside");
        if let Membership::Inside { certificate, .. } = &inside {
            let mut combo = [0.0; 2];
            for (p, w) in &certificate.weights {
                let eta = eta_vector(&sym(2), p).unwrap();
                combo[0] += w * eta[0];
                combo[1] += w * eta[1];
            }
            assert!(combo[0] >= 0.25 && combo[1] >= 0.25);
        }
        assert_eq!(region.membership(&[0.5, 0.0]).unwrap().label(), "boundary");
        match region.membership(&[0.45, 0.45]).unwrap() {
            Membership::Outside { separation, .. } => {
                let Separation { direction, offset } = separation;
                for v in region.vertices() {
                    let dot: f64 = direction.iter().zip(v.eta.iter()).map(|(d, e)| d * e).sum();
                    assert!(dot <= offset + 1e-12);
                }
                assert!(direction[0] * 0.45 + direction[1] * 0.45 > offset);
            }
            other => panic!("expected outside, got {other:?}"),
        }
    }

    #[test]
    fn membership_input_errors() {
        let region = InnerRegion::exhaustive(&sym(2), DEFAULT_ENUMERATION_CAP).unwrap();
        assert!(matches!(region.membership(&[0.1]), Err(CapacityError::DimensionMismatch { .. })));
        assert!(matches!(region.membership(&[0.1, -0.1]), Err(CapacityError::NegativeRate { .. })));
    }

    #[test]
    fn enumeration_cap_enforced() {
        let err = InnerRegion::exhaustive(&sym(5), 4).unwrap_err();
        assert_eq!(err, CapacityError::EnumerationCap { n: 5, cap: 4 });
        assert!(err.to_string().contains("pairs_only"));
        assert_eq!(InnerRegion::pairs_only(&sym(1)), Err(CapacityError::TooFewForPairs));
        assert_eq!(InnerRegion::pairs_only(&sym(20)).unwrap().vertices().len(), 190);
    }

    #[test]
    fn probe_examples() {
        let region = InnerRegion::exhaustive(&sym(2), DEFAULT_ENUMERATION_CAP).unwrap();
        let c = region.boundary_probe(&[1.0, 0.0]).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-12 && c[1] == 0.0);
        let a = region.boundary_probe(&[1.0, 1.0]).unwrap();
        assert!((a[0] - 4.0 / 13.0).abs() < 1e-12 && (a[1] - 4.0 / 13.0).abs() < 1e-12);
        let a2 = region.boundary_probe(&[2.0, 2.0]).unwrap();
        assert!((a2[0] - a[0]).abs() < 1e-12 && (a2[1] - a[1]).abs() < 1e-12);
        assert_eq!(region.boundary_probe(&[0.0, 0.0]), Err(CapacityError::ZeroDirection));
        assert_eq!(region.boundary_probe(&[1.0, -1.0]), Err(CapacityError::ZeroDirection));
    }

    /// Dense grid over the weights of the three vertices of the two-user region.
    fn grid_optimum(region: &InnerRegion, g: &UtilityFunction) -> (f64, Vec<f64>) {
        let v: Vec<&EtaVector> = region.vertices().iter().map(|v| &v.eta).collect();
        let steps = 1000;
        let mut best = (f64::NEG_INFINITY, vec![]);
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let (a, b) = (i as f64 / steps as f64, j as f64 / steps as f64);
                let c = 1.0 - a - b;
                let y: Vec<f64> = (0..2).map(|n| a * v[0][n] + b * v[1][n] + c * v[2][n]).collect();
                let val = g.value(&y);
                if val > best.0 {
                    best = (val, y);
                }
            }
        }
        best
    }

    #[test]
    fn offline_optimum_log_utility() {
        let region = InnerRegion::exhaustive(&sym(2), DEFAULT_ENUMERATION_CAP).unwrap();
        let g = UtilityFunction::sum_log1p(2);
        let opt = solve_offline_optimum(&region, &g).unwrap();
        let (grid_val, grid_pt) = grid_optimum(&region, &g);
        assert!((opt.value - grid_val).abs() < 1e-9);
        assert!((opt.point[0] - grid_pt[0]).abs() < 1e-6);
        assert!((opt.point[0] - 4.0 / 13.0).abs() < 1e-9 && (opt.point[1] - 4.0 / 13.0).abs() < 1e-9);
        assert!((opt.value - 2.0 * (17.0f64 / 13.0).ln()).abs() < 1e-9);
        assert!((opt.value - 0.536528).abs() < 1e-6);
    }

    #[test]
    fn offline_optimum_linear_single_user() {
        let region = InnerRegion::exhaustive(&sym(2), DEFAULT_ENUMERATION_CAP).unwrap();
        let g = UtilityFunction::builtin(BuiltinUtility::Linear, &[1.0, 0.0]).unwrap();
        let opt = solve_offline_optimum(&region, &g).unwrap();
        assert!((opt.point[0] - 0.5).abs() < 1e-12 && opt.point[1].abs() < 1e-12);
        assert!((opt.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn offline_optimum_constant_utility() {
        let region = InnerRegion::exhaustive(&sym(2), DEFAULT_ENUMERATION_CAP).unwrap();
        let g = UtilityFunction::builtin(BuiltinUtility::Linear, &[0.0, 0.0]).unwrap();
        let opt = solve_offline_optimum(&region, &g).unwrap();
        assert_eq!(opt.gap, 0.0);
        assert!(region.membership(&opt.point).unwrap().is_feasible());
    }

    #[test]
    fn offline_optimum_interior_face() {
        // Asymmetric channels move the optimum onto an edge of the hull.
        let models = vec![ChannelModel::new(0.3, 0.1).unwrap(), ChannelModel::new(0.1, 0.3).unwrap()];
        let region = InnerRegion::exhaustive(&models, DEFAULT_ENUMERATION_CAP).unwrap();
        let g = UtilityFunction::sum_log1p(2);
        let opt = solve_offline_optimum(&region, &g).unwrap();
        let (grid_val, _) = grid_optimum(&region, &g);
        assert!(opt.value >= grid_val - 1e-7, "{} vs grid {}", opt.value, grid_val);
        assert!(region.membership(&opt.point).unwrap().is_feasible());
    }

    #[test]
    fn offline_optimum_with_pole_damps() {
        let region = InnerRegion::exhaustive(&sym(2), DEFAULT_ENUMERATION_CAP).unwrap();
        let users = (0..2)
            .map(|_| UserUtility {
                kind: UtilityKind::Generic(GenericUtility::new("sqrt", |r: f64| if r <= 0.0 { f64::NAN } else { r.sqrt() })),
                weight: 1.0,
            })
            .collect();
        let g = UtilityFunction::new(users).unwrap();
        let opt = solve_offline_optimum(&region, &g).unwrap();
        assert!((opt.point[0] - 4.0 / 13.0).abs() < 1e-6 && (opt.point[1] - 4.0 / 13.0).abs() < 1e-6);
    }

    #[test]
    fn offline_optimum_reports_persistent_nan() {
        let region = InnerRegion::exhaustive(&sym(2), DEFAULT_ENUMERATION_CAP).unwrap();
        let users = (0..2)
            .map(|_| UserUtility {
                kind: UtilityKind::Generic(GenericUtility::new("nan", |_| f64::NAN)),
                weight: 1.0,
            })
            .collect();
        let g = UtilityFunction::new(users).unwrap();
        assert!(matches!(
            solve_offline_optimum(&region, &g),
            Err(CapacityError::NonFiniteGradient(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn model() -> impl Strategy<Value = ChannelModel> {
            (0.02f64..0.9, 0.02f64..0.9)
                .prop_filter("positively correlated", |(a, b)| a + b < 0.98)
                .prop_map(|(a, b)| ChannelModel::new(a, b).unwrap())
        }

        proptest! {
            #[test]
            fn theorem_and_corollary_agree(m in model(), n in 1usize..=8) {
                let models = vec![m; n];
                for p in ActivationVector::all_nonzero(n) {
                    let eta = eta_vector(&models, &p).unwrap();
                    let per_user = c_coefficient(&m, p.count()).unwrap() / p.count() as f64;
                    for ch in p.active() {
                        prop_assert!((eta[ch] - per_user).abs() < 1e-12);
                    }
                }
            }

            #[test]
            fn stay_law_normalized(m in model(), size in 1u64..8) {
                let law = StayLaw { channel: 0, entry: m.p01_k(size).unwrap(), p11: m.p11(), p10: m.p10() };
                let (mass, m2) = second_moment_by_summation(&law);
                prop_assert!((mass - 1.0).abs() < 1e-10);
                prop_assert!((m2 - law.second_moment()).abs() <= 1e-6 * law.second_moment());
            }

            #[test]
            fn down_closure(a in 0.0f64..0.6, b in 0.0f64..0.6, s in 0.0f64..=1.0, t in 0.0f64..=1.0) {
                let region = InnerRegion::exhaustive(&sym(2), DEFAULT_ENUMERATION_CAP).unwrap();
                if region.membership(&[a, b]).unwrap().is_feasible() {
                    prop_assert!(region.membership(&[a * s, b * t]).unwrap().is_feasible());
                }
            }

            #[test]
            fn probe_lands_on_boundary(
                ms in proptest::collection::vec(model(), 3),
                v in proptest::collection::vec(0.0f64..1.0, 3),
            ) {
                prop_assume!(v.iter().sum::<f64>() > 1e-3);
                let region = InnerRegion::exhaustive(&ms, DEFAULT_ENUMERATION_CAP).unwrap();
                let point = region.boundary_probe(&v).unwrap();
                prop_assert_eq!(region.membership(&point).unwrap().label(), "boundary");
            }
        }
    }
}
