//! Finite categorical distributions and the decoding transforms that act on
//! them: temperature, top-k, top-p (nucleus), min-p and greedy.
//!
//! Transforms compose in a fixed order: temperature on logits, softmax,
//! then top-k, top-p and min-p on probabilities, renormalizing after each
//! filter. Ties are always broken toward the lowest index.

use std::cmp::Ordering;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-9;

/// Unnormalized next-token scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("logits must be non-empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "logit {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Lowest index holding the maximum logit.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// A probability vector over a finite vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDist(Vec<f64>);

impl CategoricalDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("distribution must be non-empty".into()));
        }
        if let Some(i) = probs.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "probability {i} is invalid ({})",
                probs[i]
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self(probs))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("distribution must be non-empty".into()));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    pub fn point_mass(n: usize, index: usize) -> Result<Self> {
        if index >= n {
            return Err(Error::InvalidInput(format!(
                "point mass index {index} out of range for size {n}"
            )));
        }
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max_prob(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Indices ordered by descending probability, ties toward lower index.
fn rank_order(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    // stable sort keeps ascending index among equal probabilities
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap_or(Ordering::Equal));
    order
}

/// Zero every entry not in `keep`, renormalize. Returns the input untouched
/// when no positive mass is removed.
fn restrict(dist: &CategoricalDist, keep: &[bool]) -> CategoricalDist {
    let removes_mass = dist
        .0
        .iter()
        .zip(keep)
        .any(|(p, k)| !*k && *p > 0.0);
    if !removes_mass {
        return dist.clone();
    }
    let kept: f64 = dist
        .0
        .iter()
        .zip(keep)
        .filter(|(_, k)| **k)
        .map(|(p, _)| *p)
        .sum();
    let probs = dist
        .0
        .iter()
        .zip(keep)
        .map(|(p, k)| if *k { p / kept } else { 0.0 })
        .collect();
    CategoricalDist(probs)
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &Logits) -> CategoricalDist {
    let max = logits.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.0.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    CategoricalDist(exps.into_iter().map(|e| e / total).collect())
}

pub fn apply_temperature(logits: &Logits, temperature: f64) -> Result<Logits> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    Logits::new(logits.0.iter().map(|z| z / temperature).collect())
}

pub fn top_k_filter(dist: &CategoricalDist, k: usize) -> Result<CategoricalDist> {
    if k == 0 {
        return Err(Error::InvalidParameter("top-k requires k >= 1".into()));
    }
    if k >= dist.len() {
        return Ok(dist.clone());
    }
    let mut keep = vec![false; dist.len()];
    for &i in rank_order(&dist.0).iter().take(k) {
        keep[i] = true;
    }
    Ok(restrict(dist, &keep))
}

/// Keeps the shortest descending-probability prefix whose mass reaches `p`.
pub fn top_p_filter(dist: &CategoricalDist, p: f64) -> Result<CategoricalDist> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "top-p requires 0 < p <= 1, got {p}"
        )));
    }
    if p >= 1.0 {
        return Ok(dist.clone());
    }
    let mut keep = vec![false; dist.len()];
    let mut mass = 0.0;
    for i in rank_order(&dist.0) {
        keep[i] = true;
        mass += dist.0[i];
        if mass >= p {
            break;
        }
    }
    Ok(restrict(dist, &keep))
}

/// Keeps entries with probability at least `m` times the current maximum.
pub fn min_p_filter(dist: &CategoricalDist, m: f64) -> Result<CategoricalDist> {
    if !(0.0..1.0).contains(&m) {
        return Err(Error::InvalidParameter(format!(
            "min-p requires 0 <= m < 1, got {m}"
        )));
    }
    if m == 0.0 {
        return Ok(dist.clone());
    }
    let threshold = m * dist.max_prob();
    let keep: Vec<bool> = dist.0.iter().map(|p| *p >= threshold).collect();
    Ok(restrict(dist, &keep))
}

/// Shannon entropy in nats, with 0 log 0 = 0.
pub fn entropy(dist: &CategoricalDist) -> f64 {
    let s: f64 = dist.0.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum();
    // Avoid -0.0 for point masses.
    0.0 - s
}

/// Inverse-CDF draw from `dist`.
pub fn sample<R: Rng + ?Sized>(dist: &CategoricalDist, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, p) in dist.0.iter().enumerate() {
        if *p > 0.0 {
            cum += p;
            last_positive = i;
            if u < cum {
                return i;
            }
        }
    }
    // u landed in the rounding gap above the final cumulative sum
    last_positive
}

/// One sampling configuration, viewed as a transform of the base
/// next-token distribution.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(try_from = "RawAction", into = "RawAction")]
pub struct DecodingAction {
    greedy: bool,
    temperature: Option<f64>,
    top_k: Option<usize>,
    top_p: Option<f64>,
    min_p: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAction {
    greedy: bool,
    #[serde(default)]
    temperature: Option<f64>,
    #[serde(default)]
    top_k: Option<usize>,
    #[serde(default)]
    top_p: Option<f64>,
    #[serde(default)]
    min_p: Option<f64>,
}

impl TryFrom<RawAction> for DecodingAction {
    type Error = Error;

    fn try_from(raw: RawAction) -> Result<Self> {
        if raw.greedy {
            if raw.temperature.is_some()
                || raw.top_k.is_some()
                || raw.top_p.is_some()
                || raw.min_p.is_some()
            {
                return Err(Error::InvalidParameter(
                    "greedy action must not set sampling parameters".into(),
                ));
            }
            return Ok(Self::greedy());
        }
        let temperature = raw.temperature.ok_or_else(|| {
            Error::InvalidParameter("sampling action requires a temperature".into())
        })?;
        Self::sampling(temperature, raw.top_k, raw.top_p, raw.min_p)
    }
}

impl From<DecodingAction> for RawAction {
    fn from(a: DecodingAction) -> Self {
        RawAction {
            greedy: a.greedy,
            temperature: a.temperature,
            top_k: a.top_k,
            top_p: a.top_p,
            min_p: a.min_p,
        }
    }
}

impl DecodingAction {
    pub fn greedy() -> Self {
        Self {
            greedy: true,
            temperature: None,
            top_k: None,
            top_p: None,
            min_p: None,
        }
    }

    pub fn temperature(temperature: f64) -> Result<Self> {
        Self::sampling(temperature, None, None, None)
    }

    pub fn sampling(
        temperature: f64,
        top_k: Option<usize>,
        top_p: Option<f64>,
        min_p: Option<f64>,
    ) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "temperature must be > 0, got {temperature}"
            )));
        }
        if top_k == Some(0) {
            return Err(Error::InvalidParameter("top-k requires k >= 1".into()));
        }
        if let Some(p) = top_p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "top-p requires 0 < p <= 1, got {p}"
                )));
            }
        }
        if let Some(m) = min_p {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::InvalidParameter(format!(
                    "min-p requires 0 <= m < 1, got {m}"
                )));
            }
        }
        Ok(Self {
            greedy: false,
            temperature: Some(temperature),
            top_k,
            top_p,
            min_p,
        })
    }

    pub fn is_greedy(&self) -> bool {
        self.greedy
    }

    pub fn temperature_value(&self) -> Option<f64> {
        self.temperature
    }

    pub fn top_k(&self) -> Option<usize> {
        self.top_k
    }

    pub fn top_p(&self) -> Option<f64> {
        self.top_p
    }

    pub fn min_p(&self) -> Option<f64> {
        self.min_p
    }

    /// Bit-level identity key, used for duplicate detection and lookups.
    pub fn key(&self) -> (bool, u64, u64, u64, u64) {
        (
            self.greedy,
            self.temperature.map_or(u64::MAX, f64::to_bits),
            self.top_k.map_or(u64::MAX, |k| k as u64),
            self.top_p.map_or(u64::MAX, f64::to_bits),
            self.min_p.map_or(u64::MAX, f64::to_bits),
        )
    }
}

impl PartialEq for DecodingAction {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for DecodingAction {}

impl fmt::Display for DecodingAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.greedy {
            return write!(f, "greedy");
        }
        write!(f, "T={}", self.temperature.unwrap_or(1.0))?;
        if let Some(k) = self.top_k {
            write!(f, " top_k={k}")?;
        }
        if let Some(p) = self.top_p {
            write!(f, " top_p={p}")?;
        }
        if let Some(m) = self.min_p {
            write!(f, " min_p={m}")?;
        }
        Ok(())
    }
}

/// The distribution a decoding action induces on the given logits.
pub fn apply_action(logits: &Logits, action: &DecodingAction) -> Result<CategoricalDist> {
    if action.greedy {
        return CategoricalDist::point_mass(logits.len(), logits.argmax());
    }
    let temperature = action.temperature.unwrap_or(1.0);
    let mut dist = softmax(&apply_temperature(logits, temperature)?);
    if let Some(k) = action.top_k {
        dist = top_k_filter(&dist, k)?;
    }
    if let Some(p) = action.top_p {
        dist = top_p_filter(&dist, p)?;
    }
    if let Some(m) = action.min_p {
        dist = min_p_filter(&dist, m)?;
    }
    Ok(dist)
}
