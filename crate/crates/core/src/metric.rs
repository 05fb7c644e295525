//! Metric spaces and their points.
//!
//! Every space kind used by the lab is a variant of [`MetricSpace`]; points
//! are the matching variants of [`Point`]. Distances are plain `f64`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("point kind `{point}` does not belong to space `{space}`")]
    KindMismatch { space: &'static str, point: &'static str },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("letter {letter} outside alphabet of size {alphabet}")]
    Letter { letter: u32, alphabet: u32 },
    #[error("dilation factor must be positive, got {0}")]
    Dilation(f64),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricSpace {
    EuclideanLine,
    Euclidean { dim: usize },
    Heisenberg,
    /// Finite words with the longest-common-prefix ultrametric.
    UltrametricWords { alphabet_size: u32 },
    /// Finitely supported vectors over orthonormal directions indexed by `u64`.
    SparseL2,
}

impl MetricSpace {
    pub fn name(&self) -> &'static str {
        match self {
            MetricSpace::EuclideanLine => "euclidean_line",
            MetricSpace::Euclidean { .. } => "euclidean",
            MetricSpace::Heisenberg => "heisenberg",
            MetricSpace::UltrametricWords { .. } => "ultrametric_words",
            MetricSpace::SparseL2 => "sparse_l2",
        }
    }

    /// Checks that `p` is a point of this space.
    pub fn check(&self, p: &Point) -> Result<(), MetricError> {
        let mismatch = || MetricError::KindMismatch {
            space: self.name(),
            point: p.kind_name(),
        };
        match (self, p) {
            (MetricSpace::EuclideanLine, Point::Real(_)) => Ok(()),
            (MetricSpace::Euclidean { dim }, Point::Vector(v)) => {
                if v.len() == *dim {
                    Ok(())
                } else {
                    Err(MetricError::Dimension {
                        expected: *dim,
                        got: v.len(),
                    })
                }
            }
            (MetricSpace::Heisenberg, Point::Heisenberg(_)) => Ok(()),
            (MetricSpace::UltrametricWords { alphabet_size }, Point::Word(w)) => {
                match w.iter().find(|&&l| l >= *alphabet_size) {
                    Some(&letter) => Err(MetricError::Letter {
                        letter,
                        alphabet: *alphabet_size,
                    }),
                    None => Ok(()),
                }
            }
            (MetricSpace::SparseL2, Point::Sparse(_)) => Ok(()),
            _ => Err(mismatch()),
        }
    }

    pub fn distance(&self, p: &Point, q: &Point) -> Result<f64, MetricError> {
        distance(self, p, q)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Point {
    Real(f64),
    Vector(Vec<f64>),
    Heisenberg(HPoint),
    Word(Vec<u32>),
    Sparse(SparsePoint),
}

impl Point {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Point::Real(_) => "real",
            Point::Vector(_) => "vector",
            Point::Heisenberg(_) => "heisenberg",
            Point::Word(_) => "word",
            Point::Sparse(_) => "sparse",
        }
    }
}

impl From<f64> for Point {
    fn from(v: f64) -> Self {
        Point::Real(v)
    }
}

impl From<HPoint> for Point {
    fn from(p: HPoint) -> Self {
        Point::Heisenberg(p)
    }
}

impl From<SparsePoint> for Point {
    fn from(p: SparsePoint) -> Self {
        Point::Sparse(p)
    }
}

/// Distance between two points of `space`.
pub fn distance(space: &MetricSpace, p: &Point, q: &Point) -> Result<f64, MetricError> {
    space.check(p)?;
    space.check(q)?;
    Ok(match (p, q) {
        (Point::Real(a), Point::Real(b)) => (a - b).abs(),
        (Point::Vector(a), Point::Vector(b)) => euclidean(a, b),
        (Point::Heisenberg(a), Point::Heisenberg(b)) => heisenberg_distance(a, b),
        (Point::Word(a), Point::Word(b)) => word_distance(a, b),
        (Point::Sparse(a), Point::Sparse(b)) => a.distance(b),
        _ => unreachable!("space.check accepted both points"),
    })
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `2^-lcp(a, b)`, or 0 when the words are identical.
///
/// Words are compared as if padded with a blank letter outside the alphabet,
/// so a proper prefix differs from its extension at the prefix length.
pub fn word_distance(a: &[u32], b: &[u32]) -> f64 {
    if a == b {
        return 0.0;
    }
    let lcp = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    // exact for lcp < 1074
    2f64.powi(-(lcp as i32))
}

// --- Heisenberg group -------------------------------------------------------

/// A point `(x, y, z)` of the Heisenberg group. The third coordinate scales
/// quadratically under dilation.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct HPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl HPoint {
    pub const IDENTITY: HPoint = HPoint {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        HPoint { x, y, z }
    }
}

/// Group product `(x+x', y+y', z+z' - 2xy' + 2yx')`.
pub fn h_mul(p: &HPoint, q: &HPoint) -> HPoint {
    HPoint {
        x: p.x + q.x,
        y: p.y + q.y,
        z: p.z + q.z - 2.0 * p.x * q.y + 2.0 * p.y * q.x,
    }
}

pub fn h_inv(p: &HPoint) -> HPoint {
    HPoint {
        x: -p.x,
        y: -p.y,
        z: -p.z,
    }
}

/// Korányi gauge `((x²+y²)² + z²)^(1/4)`.
///
/// Evaluated as two square roots so that dyadic dilations scale the result
/// exactly.
pub fn h_norm(p: &HPoint) -> f64 {
    let horizontal = p.x * p.x + p.y * p.y;
    (horizontal * horizontal + p.z * p.z).sqrt().sqrt()
}

/// Dilation `(x, y, z) -> (tx, ty, t²z)`.
pub fn h_dilate(t: f64, p: &HPoint) -> Result<HPoint, MetricError> {
    if !(t > 0.0) {
        return Err(MetricError::Dilation(t));
    }
    Ok(HPoint {
        x: t * p.x,
        y: t * p.y,
        z: t * t * p.z,
    })
}

/// Left-invariant Korányi distance `|p⁻¹·q|`.
pub fn heisenberg_distance(p: &HPoint, q: &HPoint) -> f64 {
    h_norm(&h_mul(&h_inv(p), q))
}

// --- sparse l2 --------------------------------------------------------------

/// A finitely supported vector over orthonormal directions.
///
/// Entries are kept sorted by direction id with no explicit zeros, so
/// structural equality coincides with zero distance.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct SparsePoint {
    entries: Vec<(u64, f64)>,
}

impl SparsePoint {
    pub fn origin() -> Self {
        SparsePoint::default()
    }

    /// Builds a point from `(direction, coordinate)` pairs; repeated
    /// directions are summed.
    pub fn from_entries(entries: impl IntoIterator<Item = (u64, f64)>) -> Self {
        let mut entries: Vec<(u64, f64)> = entries.into_iter().collect();
        entries.sort_by_key(|&(id, _)| id);
        let mut merged: Vec<(u64, f64)> = Vec::with_capacity(entries.len());
        for (id, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == id => last.1 += v,
                _ => merged.push((id, v)),
            }
        }
        merged.retain(|&(_, v)| v != 0.0);
        SparsePoint { entries: merged }
    }

    pub fn entries(&self) -> &[(u64, f64)] {
        &self.entries
    }

    pub fn get(&self, direction: u64) -> f64 {
        match self.entries.binary_search_by_key(&direction, |&(id, _)| id) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn support_len(&self) -> usize {
        self.entries.len()
    }

    /// `self + scale * e_direction`.
    pub fn offset(&self, direction: u64, scale: f64) -> SparsePoint {
        let mut entries = self.entries.clone();
        match entries.binary_search_by_key(&direction, |&(id, _)| id) {
            Ok(i) => {
                entries[i].1 += scale;
                if entries[i].1 == 0.0 {
                    entries.remove(i);
                }
            }
            Err(i) => {
                if scale != 0.0 {
                    entries.insert(i, (direction, scale));
                }
            }
        }
        SparsePoint { entries }
    }

    /// l2 distance over the union of supports.
    pub fn distance(&self, other: &SparsePoint) -> f64 {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j) = (0, 0);
        let mut acc = 0.0;
        while i < a.len() && j < b.len() {
            let (ia, va) = a[i];
            let (ib, vb) = b[j];
            if ia == ib {
                let d = va - vb;
                acc += d * d;
                i += 1;
                j += 1;
            } else if ia < ib {
                acc += va * va;
                i += 1;
            } else {
                acc += vb * vb;
                j += 1;
            }
        }
        acc += a[i..].iter().map(|&(_, v)| v * v).sum::<f64>();
        acc += b[j..].iter().map(|&(_, v)| v * v).sum::<f64>();
        acc.sqrt()
    }
}
