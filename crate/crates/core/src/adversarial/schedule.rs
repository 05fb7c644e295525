//! Sequences driving the construction: masses `γᵢ`, risks `δᵢ`, the rule
//! `n -> kₙ`, branching numbers `mᵢ` and sample sizes `nᵢ`.
//!
//! For stage `i`, with `Pᵢ = Π_{j≤i} mⱼ`, a proof-bound schedule satisfies
//!
//! * k-ratio: `k(nᵢ)/nᵢ < γᵢ / (2 Pᵢ)`,
//! * sample size: `nᵢ > (2 Pᵢ² / γᵢ²) · (Σ_{j≤i} ln mⱼ − ln δᵢ)`,
//! * next branching: `mᵢ₊₁ > 2 nᵢ / (k(nᵢ) δᵢ Pᵢ)`.
//!
//! The k-ratio and branching conditions are checked in exact rational
//! arithmetic; the sample-size bound involves logarithms and is compared as `nᵢ > ⌊bound⌋` in integers.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use serde::{Deserialize, Serialize};

use super::AdversarialError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaRule {
    /// `γᵢ = 2^(−i−2)`.
    Dyadic,
    /// `γᵢ = (1 − q) qⁱ / 2`.
    Geometric { ratio: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaRule {
    /// `δᵢ = 2^(−i−3)`.
    Dyadic,
    /// `δᵢ = first · qⁱ`.
    Geometric { first: f64, ratio: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KRule {
    /// `⌈log₂ n⌉`.
    Log2Ceil,
    /// `⌈√n⌉`.
    SqrtCeil,
    /// Constant `k`; `Const(1)` is the 1-NN rule.
    Const(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ProofBound,
    Empirical,
}

fn dyadic(exp: u32) -> BigRational {
    BigRational::new(BigInt::one(), BigInt::one() << exp)
}

fn exact(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite rule parameter")
}

fn rational_pow(base: &BigRational, e: usize) -> BigRational {
    (0..e).fold(BigRational::one(), |acc, _| acc * base)
}

impl GammaRule {
    pub fn gamma(&self, i: usize) -> BigRational {
        match *self {
            GammaRule::Dyadic => dyadic(i as u32 + 2),
            GammaRule::Geometric { ratio } => {
                let q = exact(ratio);
                (BigRational::one() - &q) * rational_pow(&q, i) / BigRational::from_integer(2.into())
            }
        }
    }

    /// `Σ_{j≥i} γⱼ`.
    pub fn tail(&self, i: usize) -> BigRational {
        match *self {
            GammaRule::Dyadic => dyadic(i as u32 + 1),
            GammaRule::Geometric { ratio } => {
                rational_pow(&exact(ratio), i) / BigRational::from_integer(2.into())
            }
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            GammaRule::Dyadic => true,
            GammaRule::Geometric { ratio } => ratio > 0.0 && ratio < 1.0,
        }
    }
}

impl DeltaRule {
    pub fn delta(&self, i: usize) -> BigRational {
        match *self {
            DeltaRule::Dyadic => dyadic(i as u32 + 3),
            DeltaRule::Geometric { first, ratio } => exact(first) * rational_pow(&exact(ratio), i),
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            DeltaRule::Dyadic => true,
            DeltaRule::Geometric { first, ratio } => first > 0.0 && ratio > 0.0 && ratio < 1.0,
        }
    }
}

fn ceil_log2(n: u64) -> u64 {
    if n <= 1 {
        0
    } else {
        64 - u64::from((n - 1).leading_zeros())
    }
}

fn ceil_sqrt(n: u64) -> u64 {
    let mut s = (n as f64).sqrt() as u64;
    while s.saturating_mul(s) < n {
        s += 1;
    }
    while s > 0 && (s - 1).saturating_mul(s - 1) >= n {
        s -= 1;
    }
    s
}

impl KRule {
    /// `kₙ`, clamped to `1..=n`.
    pub fn k(&self, n: u64) -> u64 {
        let raw = match *self {
            KRule::Log2Ceil => ceil_log2(n),
            KRule::SqrtCeil => ceil_sqrt(n),
            KRule::Const(c) => c,
        };
        raw.clamp(1, n.max(1))
    }

    /// Whether `kₙ/n → 0`. Every supported rule qualifies, the constant one
    /// included.
    pub fn ratio_vanishes(&self) -> bool {
        match *self {
            KRule::Log2Ceil | KRule::SqrtCeil => true,
            KRule::Const(c) => c >= 1,
        }
    }
}

/// The full set of sequences for a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub gamma_rule: GammaRule,
    pub delta_rule: DeltaRule,
    pub k_rule: KRule,
    /// `m₀ = 1, m₁, …`
    pub m: Vec<u64>,
    /// `n₀, n₁, …`; at most one entry per branching level.
    pub n: Vec<u64>,
    pub mode: Mode,
    pub max_depth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    /// `m₀ ≠ 1` or `mᵢ < 2` for `i ≥ 1`.
    Branching { level: usize, m: u64 },
    /// More sample sizes than branching levels.
    Lengths { m: usize, n: usize },
    /// Invalid `γ`/`δ`/`k` rule parameters.
    Rule { which: String },
    /// k-ratio condition.
    KRatio { stage: usize, k: u64, n: u64, limit: f64 },
    /// Sample-size condition.
    SampleSize { stage: usize, n: u64, bound: f64 },
    /// Next-branching condition.
    NextBranching { stage: usize, m_next: u64, bound: f64 },
}

/// Stage `i` quantities, both the bounds and the chosen values.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageBounds {
    pub stage: usize,
    pub m: u64,
    pub prod_m: u64,
    pub gamma: f64,
    pub delta: f64,
    pub n: Option<u64>,
    pub k: Option<u64>,
    /// `γᵢ / (2 Pᵢ)`, the ceiling for `k/n`.
    pub k_ratio_limit: f64,
    /// Right-hand side of the sample-size condition.
    pub n_bound: f64,
    /// Right-hand side of the next-branching condition, when `nᵢ` is known.
    pub m_next_bound: Option<f64>,
    pub m_next: Option<u64>,
}

fn big(v: u64) -> BigInt {
    BigInt::from(v)
}

fn rat(v: u64) -> BigRational {
    BigRational::from_integer(big(v))
}

/// `n > bound` for a non-negative real bound, decided in integers.
fn exceeds(n: u64, bound: f64) -> bool {
    if bound < 0.0 {
        return true;
    }
    let floor = bound.floor();
    if floor >= 18_446_744_073_709_551_616.0 {
        return false;
    }
    u128::from(n) > floor as u128
}

fn floor_plus_one(v: &BigRational) -> Option<u64> {
    (v.floor().to_integer() + BigInt::one()).to_u64()
}

impl Schedule {
    /// Schedule with user-chosen sequences; only the k-ratio condition is enforced.
    pub fn empirical(gamma_rule: GammaRule, delta_rule: DeltaRule, k_rule: KRule, m: Vec<u64>, n: Vec<u64>) -> Self {
        let max_depth = m.len().saturating_sub(1);
        Schedule {
            gamma_rule,
            delta_rule,
            k_rule,
            m,
            n,
            mode: Mode::Empirical,
            max_depth,
        }
    }

    pub fn gamma(&self, i: usize) -> BigRational {
        self.gamma_rule.gamma(i)
    }

    pub fn delta(&self, i: usize) -> BigRational {
        self.delta_rule.delta(i)
    }

    pub fn k_at(&self, stage: usize) -> Option<u64> {
        self.n.get(stage).map(|&n| self.k_rule.k(n))
    }

    /// `Π_{j≤i} mⱼ`, or `None` on overflow or missing levels.
    pub fn prod_m(&self, i: usize) -> Option<u64> {
        self.m.get(..=i)?.iter().try_fold(1u64, |acc, &m| acc.checked_mul(m))
    }

    fn prod_m_big(&self, i: usize) -> BigInt {
        self.m[..=i].iter().fold(BigInt::one(), |acc, &m| acc * big(m))
    }

    /// `γᵢ / (2 Pᵢ)`.
    pub fn k_ratio_limit(&self, i: usize) -> f64 {
        let limit = self.gamma(i) / BigRational::from_integer(self.prod_m_big(i) * 2);
        limit.to_f64().unwrap_or(0.0)
    }

    /// Right-hand side of the sample-size condition, natural logarithm.
    pub fn n_bound(&self, i: usize) -> f64 {
        let prod: f64 = self.m[..=i].iter().map(|&m| m as f64).product();
        let gamma = self.gamma(i).to_f64().unwrap_or(0.0);
        let delta = self.delta(i).to_f64().unwrap_or(0.0);
        let log_sum: f64 = self.m[..=i].iter().map(|&m| (m as f64).ln()).sum();
        2.0 * prod * prod / (gamma * gamma) * (log_sum - delta.ln())
    }

    fn m_next_bound_exact(&self, i: usize, n: u64) -> BigRational {
        let k = self.k_rule.k(n);
        BigRational::from_integer(big(n) * 2) / (rat(k) * self.delta(i) * BigRational::from_integer(self.prod_m_big(i)))
    }

    /// Right-hand side of the next-branching condition for sample size `n` at stage `i`.
    pub fn m_next_bound(&self, i: usize, n: u64) -> f64 {
        self.m_next_bound_exact(i, n).to_f64().unwrap_or(f64::INFINITY)
    }

    fn k_ratio_holds(&self, i: usize, n: u64) -> bool {
        // k/n < γ/(2P)  <=>  2 P k < γ n
        let k = self.k_rule.k(n);
        let lhs = BigRational::from_integer(self.prod_m_big(i) * 2 * big(k));
        lhs < self.gamma(i) * rat(n)
    }

    pub fn stage_bounds(&self, i: usize) -> Option<StageBounds> {
        let m = *self.m.get(i)?;
        let n = self.n.get(i).copied();
        let m_next = self.m.get(i + 1).copied();
        Some(StageBounds {
            stage: i,
            m,
            prod_m: self.prod_m(i).unwrap_or(u64::MAX),
            gamma: self.gamma(i).to_f64().unwrap_or(0.0),
            delta: self.delta(i).to_f64().unwrap_or(0.0),
            n,
            k: n.map(|n| self.k_rule.k(n)),
            k_ratio_limit: self.k_ratio_limit(i),
            n_bound: self.n_bound(i),
            m_next_bound: n.map(|n| self.m_next_bound(i, n)),
            m_next,
        })
    }
}

/// Every violated constraint; empty when the schedule is valid for its mode.
pub fn validate_schedule(s: &Schedule) -> Vec<Violation> {
    let mut out = Vec::new();
    if !s.gamma_rule.is_valid() {
        out.push(Violation::Rule { which: "gamma".into() });
    }
    if !s.delta_rule.is_valid() {
        out.push(Violation::Rule { which: "delta".into() });
    }
    if !s.k_rule.ratio_vanishes() {
        out.push(Violation::Rule { which: "k".into() });
    }
    for (level, &m) in s.m.iter().enumerate() {
        let ok = if level == 0 { m == 1 } else { m >= 2 };
        if !ok {
            out.push(Violation::Branching { level, m });
        }
    }
    if s.n.len() > s.m.len() {
        out.push(Violation::Lengths {
            m: s.m.len(),
            n: s.n.len(),
        });
    }
    if !out.is_empty() {
        return out;
    }
    for (i, &n) in s.n.iter().enumerate() {
        if !s.k_ratio_holds(i, n) {
            out.push(Violation::KRatio {
                stage: i,
                k: s.k_rule.k(n),
                n,
                limit: s.k_ratio_limit(i),
            });
        }
        if s.mode != Mode::ProofBound {
            continue;
        }
        let bound = s.n_bound(i);
        if !exceeds(n, bound) {
            out.push(Violation::SampleSize { stage: i, n, bound });
        }
        if let Some(&m_next) = s.m.get(i + 1) {
            if rat(m_next) <= s.m_next_bound_exact(i, n) {
                out.push(Violation::NextBranching {
                    stage: i,
                    m_next,
                    bound: s.m_next_bound(i, n),
                });
            }
        }
    }
    out
}

/// Where a derived schedule stops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Until {
    /// Stop after `n_depth` (m₀…m_depth, n₀…n_depth).
    SampleSize(usize),
    /// Stop after `m_depth` (m₀…m_depth, n₀…n_{depth−1}).
    Branching(usize),
}

/// Minimal proof-bound sequences `m₀=1 → n₀ → m₁ → n₁ → …` up to `n_depth`.
pub fn derive_schedule(gamma: GammaRule, delta: DeltaRule, k_rule: KRule, depth: usize) -> Result<Schedule, AdversarialError> {
    derive_schedule_with(gamma, delta, k_rule, Until::SampleSize(depth), &[])
}

/// As [`derive_schedule`], with optional lower floors on each `nᵢ`.
pub fn derive_schedule_with(
    gamma: GammaRule,
    delta: DeltaRule,
    k_rule: KRule,
    until: Until,
    n_floor: &[u64],
) -> Result<Schedule, AdversarialError> {
    let depth = match until {
        Until::SampleSize(d) | Until::Branching(d) => d,
    };
    let mut s = Schedule {
        gamma_rule: gamma,
        delta_rule: delta,
        k_rule,
        m: vec![1],
        n: Vec::new(),
        mode: Mode::ProofBound,
        max_depth: depth,
    };
    let rules = validate_schedule(&s);
    if !rules.is_empty() {
        return Err(AdversarialError::Invalid(rules));
    }
    for i in 0..=depth {
        if until == Until::Branching(depth) && i == depth {
            break;
        }
        let n = minimal_sample_size(&s, i, n_floor.get(i).copied().unwrap_or(1))?;
        s.n.push(n);
        if i == depth {
            break;
        }
        let bound = s.m_next_bound_exact(i, n);
        let m_next = floor_plus_one(&bound)
            .ok_or(AdversarialError::Overflow {
                stage: i + 1,
                quantity: "m",
            })?
            .max(2);
        s.m.push(m_next);
        if s.prod_m(i + 1).is_none() {
            return Err(AdversarialError::Overflow {
                stage: i + 1,
                quantity: "product of m",
            });
        }
    }
    Ok(s)
}

fn minimal_sample_size(s: &Schedule, i: usize, floor: u64) -> Result<u64, AdversarialError> {
    let overflow = || AdversarialError::Overflow { stage: i, quantity: "n" };
    let bound = s.n_bound(i);
    if !(bound < 18_446_744_073_709_551_615.0) {
        return Err(overflow());
    }
    let mut n = if bound < 0.0 { 1 } else { (bound.floor() as u64).checked_add(1).ok_or_else(overflow)? };
    n = n.max(floor).max(1);
    // k-ratio: n > 2 P k / γ; k grows with n, so iterate to a fixed point
    let prod = BigRational::from_integer(s.prod_m_big(i) * 2);
    let gamma = s.gamma(i);
    while !s.k_ratio_holds(i, n) {
        let needed = prod.clone() * rat(s.k_rule.k(n)) / &gamma;
        let next = floor_plus_one(&needed).ok_or_else(overflow)?;
        n = next.max(n.checked_add(1).ok_or_else(overflow)?);
    }
    Ok(n)
}

/// Exact `γᵢ` as `f64`, convenient for reports.
pub fn gamma_f64(rule: GammaRule, i: usize) -> f64 {
    rule.gamma(i).to_f64().unwrap_or(0.0)
}

pub fn delta_f64(rule: DeltaRule, i: usize) -> f64 {
    rule.delta(i).to_f64().unwrap_or(0.0)
}
