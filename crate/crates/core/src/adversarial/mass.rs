//! Exact masses of atoms and hub balls.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};

use super::schedule::Schedule;
use super::tree::{AdversarialProblem, TreeWord};
use super::AdversarialError;

fn product(ms: &[u64]) -> BigRational {
    BigRational::from_integer(ms.iter().fold(BigInt::one(), |acc, &m| acc * BigInt::from(m)))
}

fn half() -> BigRational {
    BigRational::new(BigInt::one(), BigInt::from(2))
}

/// `μ₁{xᵗ} = γ_{|t|} / Π_{j≤|t|} mⱼ`.
pub fn atom_mass(s: &Schedule, t: &TreeWord) -> Result<BigRational, AdversarialError> {
    let i = t.depth();
    if i >= s.m.len() {
        return Err(AdversarialError::Depth {
            depth: i,
            max: s.m.len().saturating_sub(1),
        });
    }
    Ok(s.gamma(i) / product(&s.m[..=i]))
}

/// Mass of the closed ball of radius `ε` of the parent around `yᵗ`.
#[derive(Clone, Debug, PartialEq)]
pub struct BallMass {
    /// `1 / (2 Π_{1≤j≤|t|} mⱼ)`.
    pub diffuse: BigRational,
    /// Mass of all atoms `xˢ` with `t ⊑ s`.
    pub atomic: BigRational,
}

impl BallMass {
    pub fn total(&self) -> BigRational {
        &self.diffuse + &self.atomic
    }

    pub fn total_f64(&self) -> f64 {
        self.total().to_f64().unwrap_or(f64::NAN)
    }
}

/// Mass of the hub ball at `t` under the untruncated measure.
pub fn ball_mass(problem: &AdversarialProblem, t: &TreeWord) -> Result<BallMass, AdversarialError> {
    problem.check_word(t)?;
    let i = t.depth();
    if i == 0 {
        return Err(AdversarialError::Depth { depth: 0, max: 0 });
    }
    let m = problem.branching();
    let gamma = problem.schedule().gamma_rule;
    Ok(BallMass {
        diffuse: half() / product(&m[1..=i]),
        atomic: gamma.tail(i) / product(&m[..=i]),
    })
}
