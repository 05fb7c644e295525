//! Embedding of the tree into sparse l2.
//!
//! Every node `t` of depth `i` gets a level-order index. Even direction ids
//! `2·index(t)` carry the hub offsets, odd ids `2·index(t)+1` carry atom
//! offsets, so all directions are fresh and mutually orthogonal:
//!
//! ```text
//! y^{t j} = y^t + rᵢ · e_{2·index(tj)}
//! x^t     = y^t + aᵢ · e_{2·index(t)+1}
//! ```

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::schedule::Schedule;
use super::AdversarialError;
use crate::metric::SparsePoint;

/// A finite word over the branching alphabets; letters are 1-based.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TreeWord(pub Vec<u64>);

impl TreeWord {
    pub fn root() -> Self {
        TreeWord(Vec::new())
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn letters(&self) -> &[u64] {
        &self.0
    }

    pub fn child(&self, letter: u64) -> TreeWord {
        let mut v = self.0.clone();
        v.push(letter);
        TreeWord(v)
    }

    pub fn prefix(&self, len: usize) -> TreeWord {
        TreeWord(self.0[..len].to_vec())
    }

    pub fn is_prefix_of(&self, other: &TreeWord) -> bool {
        other.0.starts_with(&self.0)
    }

    pub fn common_prefix_len(&self, other: &TreeWord) -> usize {
        self.0.iter().zip(&other.0).take_while(|(a, b)| a == b).count()
    }
}

impl fmt::Display for TreeWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "*");
        }
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ".")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

/// Scale constants of the embedding.
///
/// With `r₀ = root_radius`, depth-`i` quantities are
/// `εᵢ = eps_ratio · rᵢ`, `rᵢ₊₁ = child_ratio · εᵢ`, `aᵢ = atom_ratio · rᵢ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryConstants {
    pub root_radius: f64,
    pub eps_ratio: f64,
    pub child_ratio: f64,
    pub atom_ratio: f64,
}

impl Default for GeometryConstants {
    fn default() -> Self {
        GeometryConstants {
            root_radius: 0.5,
            eps_ratio: 1.0 / 16.0,
            child_ratio: 0.5,
            atom_ratio: 0.6,
        }
    }
}

impl GeometryConstants {
    fn check(&self) -> Result<(), AdversarialError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.root_radius) || !positive(self.eps_ratio) || !positive(self.atom_ratio) {
            return Err(AdversarialError::Constants("radii and ratios must be positive and finite"));
        }
        if !positive(self.child_ratio) || self.child_ratio >= 1.0 {
            return Err(AdversarialError::Constants("child_ratio must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Evenly spaced direction ids `first, first+2, …`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionRange {
    pub first: u64,
    pub count: u64,
}

impl DirectionRange {
    pub fn iter(&self) -> impl Iterator<Item = u64> {
        let first = self.first;
        (0..self.count).map(move |j| first + 2 * j)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeGeometry {
    pub word: TreeWord,
    /// The hub `yᵗ`; the origin for the root.
    pub y: SparsePoint,
    pub x_atom: SparsePoint,
    pub eps: f64,
    /// Offset of each child hub from `yᵗ`.
    pub r: f64,
    pub atom_offset: f64,
    pub atom_direction: u64,
    /// Empty at the truncation depth.
    pub child_directions: DirectionRange,
}

/// Outcome of the per-node geometric checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PropertyReport {
    /// `εᵗ < 2^(−|t|)`.
    pub eps_decay: bool,
    /// Sibling balls are farther from each other than from `xᵗ`.
    pub separation: bool,
    /// Each child atom lies in `B_{εᵗ}(y^{tj})`.
    pub child_atoms: bool,
    /// `B_{ε^{tj}}(y^{tjℓ}) ⊆ B_{εᵗ}(y^{tj})`.
    pub nesting: bool,
}

impl PropertyReport {
    pub fn all(&self) -> bool {
        self.eps_decay && self.separation && self.child_atoms && self.nesting
    }
}

#[derive(Debug)]
struct Levels {
    branching: Vec<u64>,
    start: Vec<u64>,
    size: Vec<u64>,
}

impl Levels {
    fn new(branching: Vec<u64>) -> Result<Self, AdversarialError> {
        let mut start = Vec::with_capacity(branching.len());
        let mut size = Vec::with_capacity(branching.len());
        let (mut s, mut p) = (0u64, 1u64);
        for (i, &m) in branching.iter().enumerate() {
            if i > 0 {
                p = p.checked_mul(m).ok_or(AdversarialError::Overflow {
                    stage: i,
                    quantity: "nodes per level",
                })?;
            }
            start.push(s);
            size.push(p);
            s = s.checked_add(p).ok_or(AdversarialError::Overflow {
                stage: i,
                quantity: "node count",
            })?;
        }
        if s > (u64::MAX - 1) / 2 {
            return Err(AdversarialError::Overflow {
                stage: branching.len() - 1,
                quantity: "direction id",
            });
        }
        Ok(Levels { branching, start, size })
    }

    fn depth(&self) -> usize {
        self.branching.len() - 1
    }

    fn check(&self, t: &TreeWord) -> Result<(), AdversarialError> {
        if t.depth() > self.depth() {
            return Err(AdversarialError::Depth {
                depth: t.depth(),
                max: self.depth(),
            });
        }
        for (i, &letter) in t.0.iter().enumerate() {
            let bound = self.branching[i + 1];
            if letter == 0 || letter > bound {
                return Err(AdversarialError::Letter {
                    position: i + 1,
                    letter,
                    bound,
                });
            }
        }
        Ok(())
    }

    /// Level-order indices of `t[..0], t[..1], …, t`; `t` must be checked.
    fn prefix_indices(&self, t: &TreeWord) -> Vec<u64> {
        let mut rank = 0u64;
        let mut out = Vec::with_capacity(t.depth() + 1);
        out.push(0);
        for (i, &letter) in t.0.iter().enumerate() {
            rank = rank * self.branching[i + 1] + (letter - 1);
            out.push(self.start[i + 1] + rank);
        }
        out
    }

    fn index(&self, t: &TreeWord) -> u64 {
        *self.prefix_indices(t).last().expect("root index is always present")
    }

    fn decode(&self, index: u64) -> Option<TreeWord> {
        let depth = (0..=self.depth()).find(|&i| index >= self.start[i] && index - self.start[i] < self.size[i])?;
        let mut rank = index - self.start[depth];
        let mut letters = vec![0; depth];
        for i in (1..=depth).rev() {
            let m = self.branching[i];
            letters[i - 1] = rank % m + 1;
            rank /= m;
        }
        Some(TreeWord(letters))
    }
}

/// The truncated construction: schedule, embedding and memoized geometry.
#[derive(Debug)]
pub struct AdversarialProblem {
    schedule: Schedule,
    depth: usize,
    constants: GeometryConstants,
    levels: Levels,
    radius: Vec<f64>,
    eps: Vec<f64>,
    atom_offset: Vec<f64>,
    cache: RwLock<HashMap<TreeWord, Arc<NodeGeometry>>>,
}

impl AdversarialProblem {
    /// Tree of depth `truncation_depth` using the schedule's own branching.
    pub fn new(schedule: Schedule, truncation_depth: usize) -> Result<Self, AdversarialError> {
        if schedule.m.len() <= truncation_depth {
            return Err(AdversarialError::Branching {
                have: schedule.m.len(),
                needed: truncation_depth + 1,
                depth: truncation_depth,
            });
        }
        let branching = schedule.m[..=truncation_depth].to_vec();
        Self::build(schedule, branching, truncation_depth, GeometryConstants::default())
    }

    /// As [`AdversarialProblem::new`], extending a short branching sequence
    /// with `fill` below the last scheduled level.
    pub fn padded(schedule: Schedule, truncation_depth: usize, fill: u64) -> Result<Self, AdversarialError> {
        let mut branching: Vec<u64> = schedule.m.iter().take(truncation_depth + 1).copied().collect();
        if branching.is_empty() {
            branching.push(1);
        }
        branching.resize(truncation_depth + 1, fill);
        Self::build(schedule, branching, truncation_depth, GeometryConstants::default())
    }

    pub fn with_constants(self, constants: GeometryConstants) -> Result<Self, AdversarialError> {
        let depth = self.depth;
        Self::build(self.schedule, self.levels.branching, depth, constants)
    }

    fn build(
        schedule: Schedule,
        branching: Vec<u64>,
        depth: usize,
        constants: GeometryConstants,
    ) -> Result<Self, AdversarialError> {
        constants.check()?;
        if depth == 0 {
            return Err(AdversarialError::Depth { depth: 0, max: 0 });
        }
        if branching[0] != 1 || branching[1..].iter().any(|&m| m == 0) {
            return Err(AdversarialError::Invalid(super::validate_schedule(&Schedule {
                m: branching,
                n: Vec::new(),
                ..schedule
            })));
        }
        let levels = Levels::new(branching)?;
        let mut radius = Vec::with_capacity(depth + 1);
        let mut eps = Vec::with_capacity(depth + 1);
        let mut r = constants.root_radius;
        for _ in 0..=depth {
            radius.push(r);
            eps.push(r * constants.eps_ratio);
            r *= constants.eps_ratio * constants.child_ratio;
        }
        let atom_offset = radius.iter().map(|r| r * constants.atom_ratio).collect();
        Ok(AdversarialProblem {
            schedule,
            depth,
            constants,
            levels,
            radius,
            eps,
            atom_offset,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn truncation_depth(&self) -> usize {
        self.depth
    }

    pub fn constants(&self) -> GeometryConstants {
        self.constants
    }

    /// `m₀ … m_D` as used by the tree (including any padding).
    pub fn branching(&self) -> &[u64] {
        &self.levels.branching
    }

    /// `εᵢ` for a node of depth `i`.
    pub fn eps_at(&self, depth: usize) -> f64 {
        self.eps[depth]
    }

    pub fn radius_at(&self, depth: usize) -> f64 {
        self.radius[depth]
    }

    pub fn check_word(&self, t: &TreeWord) -> Result<(), AdversarialError> {
        self.levels.check(t)
    }

    /// The hub `yᵗ`, computed without touching the cache.
    pub fn center(&self, t: &TreeWord) -> Result<SparsePoint, AdversarialError> {
        self.levels.check(t)?;
        Ok(self.center_unchecked(t))
    }

    fn center_unchecked(&self, t: &TreeWord) -> SparsePoint {
        let entries = self
            .levels
            .prefix_indices(t)
            .into_iter()
            .skip(1)
            .enumerate()
            .map(|(l, idx)| (2 * idx, self.radius[l]));
        SparsePoint::from_entries(entries)
    }

    /// The atom `xᵗ`, computed without touching the cache.
    pub fn atom(&self, t: &TreeWord) -> Result<SparsePoint, AdversarialError> {
        self.levels.check(t)?;
        Ok(self.atom_unchecked(t))
    }

    fn atom_unchecked(&self, t: &TreeWord) -> SparsePoint {
        let idx = self.levels.index(t);
        self.center_unchecked(t)
            .offset(2 * idx + 1, self.atom_offset[t.depth()])
    }

    /// Memoized geometry of node `t`.
    pub fn node_geometry(&self, t: &TreeWord) -> Result<Arc<NodeGeometry>, AdversarialError> {
        if let Some(g) = self.cache.read().expect("geometry cache poisoned").get(t) {
            return Ok(Arc::clone(g));
        }
        self.levels.check(t)?;
        let geometry = Arc::new(self.compute_geometry(t));
        let mut cache = self.cache.write().expect("geometry cache poisoned");
        Ok(Arc::clone(cache.entry(t.clone()).or_insert(geometry)))
    }

    fn compute_geometry(&self, t: &TreeWord) -> NodeGeometry {
        let i = t.depth();
        let idx = self.levels.index(t);
        let child_directions = if i < self.depth {
            let m = self.levels.branching[i + 1];
            let rank = idx - self.levels.start[i];
            DirectionRange {
                first: 2 * (self.levels.start[i + 1] + rank * m),
                count: m,
            }
        } else {
            DirectionRange { first: 0, count: 0 }
        };
        NodeGeometry {
            word: t.clone(),
            y: self.center_unchecked(t),
            x_atom: self.atom_unchecked(t),
            eps: self.eps[i],
            r: self.radius[i],
            atom_offset: self.atom_offset[i],
            atom_direction: 2 * idx + 1,
            child_directions,
        }
    }

    pub fn cached_nodes(&self) -> usize {
        self.cache.read().expect("geometry cache poisoned").len()
    }

    /// Nodes currently memoized, sorted by word; for debugging dumps.
    pub fn geometry_dump(&self) -> Vec<NodeGeometry> {
        let mut nodes: Vec<NodeGeometry> = self
            .cache
            .read()
            .expect("geometry cache poisoned")
            .values()
            .map(|g| (**g).clone())
            .collect();
        nodes.sort_by(|a, b| a.word.cmp(&b.word));
        nodes
    }

    /// Word whose atom direction is `direction`, if any.
    pub fn word_of_atom_direction(&self, direction: u64) -> Option<TreeWord> {
        if direction % 2 == 0 {
            return None;
        }
        self.levels.decode((direction - 1) / 2)
    }

    /// `1` on the atoms, `0` elsewhere.
    pub fn eta_sparse(&self, p: &SparsePoint) -> f64 {
        let mut odd = p.entries().iter().filter(|(id, _)| id % 2 == 1);
        let (Some(&(dir, _)), None) = (odd.next(), odd.next()) else {
            return 0.0;
        };
        match self.word_of_atom_direction(dir) {
            Some(t) if self.atom_unchecked(&t) == *p => 1.0,
            _ => 0.0,
        }
    }

    /// Checks all node properties at `t`.
    pub fn verify_node(&self, t: &TreeWord) -> Result<bool, AdversarialError> {
        let node = self.node_geometry(t)?;
        Ok(self.check_properties(&node)?.all())
    }

    /// Property checks against the given node data; the node's own `eps` is
    /// the one tested, children come from the embedding.
    pub fn check_properties(&self, node: &NodeGeometry) -> Result<PropertyReport, AdversarialError> {
        let t = &node.word;
        self.levels.check(t)?;
        let i = t.depth();
        let eps = node.eps;
        let mut report = PropertyReport {
            eps_decay: eps < 0.5f64.powi(i as i32),
            separation: true,
            child_atoms: true,
            nesting: true,
        };
        if i == self.depth {
            return Ok(report);
        }
        let m = self.levels.branching[i + 1];
        let children: Vec<TreeWord> = (1..=m).map(|j| t.child(j)).collect();
        let hubs: Vec<SparsePoint> = children.iter().map(|c| self.center_unchecked(c)).collect();
        for (c, hub) in children.iter().zip(&hubs) {
            if !(self.atom_unchecked(c).distance(hub) < eps) {
                report.child_atoms = false;
            }
        }
        for (j, hub) in hubs.iter().enumerate() {
            let to_atom = hub.distance(&node.x_atom);
            for (s, other) in hubs.iter().enumerate() {
                if j != s && !(eps + to_atom < hub.distance(other) - 2.0 * eps) {
                    report.separation = false;
                }
            }
        }
        if i + 1 < self.depth {
            let child_eps = self.eps[i + 1];
            let grand = self.levels.branching[i + 2];
            for (c, hub) in children.iter().zip(&hubs) {
                for l in 1..=grand {
                    let g = self.center_unchecked(&c.child(l));
                    if !(hub.distance(&g) + child_eps < eps) {
                        report.nesting = false;
                    }
                }
            }
        }
        Ok(report)
    }

    /// All words of depth exactly `depth`, in lexicographic order.
    pub fn words_at_depth(&self, depth: usize) -> Result<Vec<TreeWord>, AdversarialError> {
        if depth > self.depth {
            return Err(AdversarialError::Depth { depth, max: self.depth });
        }
        let mut words = vec![TreeWord::root()];
        for level in 1..=depth {
            let m = self.levels.branching[level];
            words = words.iter().flat_map(|w| (1..=m).map(move |j| w.child(j))).collect();
        }
        Ok(words)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversarial::{DeltaRule, GammaRule, KRule};

    fn problem(m: Vec<u64>, depth: usize) -> AdversarialProblem {
        let s = Schedule::empirical(GammaRule::Dyadic, DeltaRule::Dyadic, KRule::Log2Ceil, m, vec![]);
        AdversarialProblem::new(s, depth).unwrap()
    }

    #[test]
    fn indices_round_trip() {
        let p = problem(vec![1, 3, 4, 2], 3);
        let mut seen = std::collections::HashSet::new();
        for d in 0..=3 {
            for w in p.words_at_depth(d).unwrap() {
                let idx = p.levels.index(&w);
                assert!(seen.insert(idx));
                assert_eq!(p.levels.decode(idx), Some(w));
            }
        }
        assert_eq!(seen.len(), 1 + 3 + 12 + 24);
        assert_eq!(p.levels.decode(40), None);
    }

    #[test]
    fn child_directions_match_child_hubs() {
        let p = problem(vec![1, 3, 4, 2], 3);
        for w in p.words_at_depth(2).unwrap() {
            let g = p.node_geometry(&w).unwrap();
            for (j, dir) in g.child_directions.iter().enumerate() {
                let c = p.center(&w.child(j as u64 + 1)).unwrap();
                assert_eq!(c, g.y.offset(dir, g.r));
            }
        }
        let leaf = p.node_geometry(&TreeWord(vec![1, 1, 1])).unwrap();
        assert_eq!(leaf.child_directions.count, 0);
    }

    #[test]
    fn root_geometry() {
        let p = problem(vec![1, 3], 1);
        let g = p.node_geometry(&TreeWord::root()).unwrap();
        assert!(g.eps < 1.0);
        assert_eq!(g.y, SparsePoint::origin());
        assert_eq!(g.x_atom, SparsePoint::from_entries([(1, 0.3)]));
    }

    #[test]
    fn hub_distances() {
        let p = problem(vec![1, 4, 4, 4], 3);
        for d in 0..3 {
            for w in p.words_at_depth(d).unwrap() {
                let y = p.center(&w).unwrap();
                let r = p.radius_at(d);
                let kids: Vec<_> = (1..=4).map(|j| p.center(&w.child(j)).unwrap()).collect();
                for (a, ka) in kids.iter().enumerate() {
                    assert!(y.distance(ka) < 2f64.powi(1 - d as i32));
                    for kb in &kids[a + 1..] {
                        assert_eq!(ka.distance(kb), r * std::f64::consts::SQRT_2);
                    }
                }
            }
        }
    }

    #[test]
    fn memoized_geometry_is_shared() {
        let p = problem(vec![1, 2, 2], 2);
        let w = TreeWord(vec![2, 1]);
        let a = p.node_geometry(&w).unwrap();
        let b = p.node_geometry(&w).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(p.cached_nodes(), 1);
    }

    #[test]
    fn domain_errors() {
        let p = problem(vec![1, 2, 2], 2);
        assert!(matches!(
            p.node_geometry(&TreeWord(vec![1, 1, 1])),
            Err(AdversarialError::Depth { .. })
        ));
        assert!(matches!(
            p.node_geometry(&TreeWord(vec![3])),
            Err(AdversarialError::Letter { .. })
        ));
        assert!(matches!(
            p.node_geometry(&TreeWord(vec![0])),
            Err(AdversarialError::Letter { .. })
        ));
    }

    #[test]
    fn eta_marks_atoms_only() {
        let p = problem(vec![1, 3, 3], 2);
        for d in 0..=2 {
            for w in p.words_at_depth(d).unwrap() {
                assert_eq!(p.eta_sparse(&p.atom(&w).unwrap()), 1.0);
                assert_eq!(p.eta_sparse(&p.center(&w).unwrap()), 0.0);
            }
        }
        let fake = p.center(&TreeWord(vec![1])).unwrap().offset(1, 0.3);
        assert_eq!(p.eta_sparse(&fake), 0.0);
    }

    #[test]
    fn properties_hold_and_corruption_is_caught() {
        let p = problem(vec![1, 5, 5, 5], 3);
        for d in 0..=3 {
            for w in p.words_at_depth(d).unwrap() {
                assert!(p.verify_node(&w).unwrap(), "{w}");
            }
        }
        let mut g = (*p.node_geometry(&TreeWord(vec![2])).unwrap()).clone();
        g.eps *= 2.0;
        let report = p.check_properties(&g).unwrap();
        assert!(!report.separation);
        assert!(!report.all());
    }

    #[test]
    fn single_child_chain() {
        let p = problem(vec![1, 1, 1, 1], 3);
        for d in 0..=3 {
            assert!(p.verify_node(&TreeWord(vec![1; d])).unwrap());
        }
    }

    #[test]
    fn padding_extends_branching() {
        let s = Schedule::empirical(GammaRule::Dyadic, DeltaRule::Dyadic, KRule::Log2Ceil, vec![1, 7], vec![]);
        assert!(AdversarialProblem::new(s.clone(), 2).is_err());
        let p = AdversarialProblem::padded(s, 2, 2).unwrap();
        assert_eq!(p.branching(), &[1, 7, 2]);
    }
}
