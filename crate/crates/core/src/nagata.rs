//! Finite-scale combinatorics of Nagata and de Groot dimension.
//!
//! Multiplicity of a ball family in a general metric space cannot be read off
//! centres and radii, so every multiplicity reported here is a count over an
//! explicit probe set: a certified lower bound, exact once a true common
//! point is among the probes. On the line the endpoint sweep gives the exact
//! value.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::{MetricError, MetricSpace, Point, SparsePoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NagataError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("ball radius must be positive and finite, got {0}")]
    Radius(f64),
    #[error("ball radius {radius} is not below the family scale {scale}")]
    Scale { radius: f64, scale: f64 },
    #[error("probe set is empty")]
    NoProbes,
    #[error("operation requires the euclidean line, family lives in `{0}`")]
    NotLine(&'static str),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
    pub closed: bool,
}

impl Ball {
    pub fn closed(center: impl Into<Point>, radius: f64) -> Self {
        Ball {
            center: center.into(),
            radius,
            closed: true,
        }
    }

    pub fn open(center: impl Into<Point>, radius: f64) -> Self {
        Ball {
            center: center.into(),
            radius,
            closed: false,
        }
    }

    fn holds_distance(&self, d: f64) -> bool {
        if self.closed {
            d <= self.radius
        } else {
            d < self.radius
        }
    }
}

/// Membership: `d(center, p) ≤ r` for closed balls, `< r` for open ones.
pub fn contains(b: &Ball, p: &Point, space: &MetricSpace) -> Result<bool, NagataError> {
    Ok(b.holds_distance(space.distance(&b.center, p)?))
}

/// A finite family of balls in one space, all with radius below `scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct BallFamily {
    balls: Vec<Ball>,
    space: MetricSpace,
    scale: f64,
}

impl BallFamily {
    pub fn new(space: MetricSpace, scale: f64, balls: Vec<Ball>) -> Result<Self, NagataError> {
        for b in &balls {
            if !(b.radius > 0.0) || !b.radius.is_finite() {
                return Err(NagataError::Radius(b.radius));
            }
            if !(b.radius < scale) {
                return Err(NagataError::Scale {
                    radius: b.radius,
                    scale,
                });
            }
            space.check(&b.center)?;
        }
        Ok(BallFamily { balls, space, scale })
    }

    /// Family on the scale `+∞`.
    pub fn unbounded(space: MetricSpace, balls: Vec<Ball>) -> Result<Self, NagataError> {
        Self::new(space, f64::INFINITY, balls)
    }

    pub fn balls(&self) -> &[Ball] {
        &self.balls
    }

    pub fn space(&self) -> &MetricSpace {
        &self.space
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.balls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }

    pub fn centers(&self) -> Vec<Point> {
        self.balls.iter().map(|b| b.center.clone()).collect()
    }

    /// Centres followed by any extra witness points.
    pub fn default_probes(&self, witnesses: &[Point]) -> Vec<Point> {
        let mut probes = self.centers();
        probes.extend_from_slice(witnesses);
        probes
    }

    /// Subfamily of the balls at `indices`, same space and scale.
    pub fn subfamily(&self, indices: &[usize]) -> BallFamily {
        BallFamily {
            balls: indices.iter().map(|&i| self.balls[i].clone()).collect(),
            space: self.space.clone(),
            scale: self.scale,
        }
    }

    // centres and probes are validated before they reach here
    fn inside(&self, ball: usize, p: &Point) -> bool {
        let b = &self.balls[ball];
        let d = self
            .space
            .distance(&b.center, p)
            .expect("points validated against the family space");
        b.holds_distance(d)
    }

    fn center_in(&self, ball: usize, center_of: usize) -> bool {
        self.inside(ball, &self.balls[center_of].center)
    }
}

/// No ball contains the centre of another ball of the family.
pub fn is_disconnected(f: &BallFamily) -> bool {
    let n = f.len();
    (0..n).all(|i| (0..n).all(|j| i == j || !f.center_in(j, i)))
}

/// Largest number of balls sharing a probe, with the index of the first
/// probe attaining it.
pub fn multiplicity_over_probes(f: &BallFamily, probes: &[Point]) -> Result<(usize, usize), NagataError> {
    if probes.is_empty() {
        return Err(NagataError::NoProbes);
    }
    for p in probes {
        f.space.check(p)?;
    }
    let mut best = (0, 0);
    for (pi, p) in probes.iter().enumerate() {
        let count = (0..f.len()).filter(|&b| f.inside(b, p)).count();
        if count > best.0 {
            best = (count, pi);
        }
    }
    Ok(best)
}

/// Exact maximum overlap of a family of intervals on the line.
///
/// Sweep over sorted endpoints. At a shared coordinate `c` the events run:
/// open right ends leave, closed left ends enter (count is the overlap at
/// `c`), then closed right ends leave and open left ends enter (count is the
/// overlap just right of `c`).
pub fn interval_multiplicity_exact(f: &BallFamily) -> Result<usize, NagataError> {
    if f.space != MetricSpace::EuclideanLine {
        return Err(NagataError::NotLine(f.space.name()));
    }
    // (coordinate, phase, delta)
    let mut events: Vec<(f64, u8, i32)> = Vec::with_capacity(2 * f.len());
    for b in &f.balls {
        let c = match b.center {
            Point::Real(c) => c,
            _ => unreachable!("family validated on the line"),
        };
        let (lo, hi) = (c - b.radius, c + b.radius);
        if b.closed {
            events.push((lo, 1, 1));
            events.push((hi, 2, -1));
        } else {
            events.push((lo, 3, 1));
            events.push((hi, 0, -1));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (mut active, mut best) = (0i32, 0i32);
    for (_, _, delta) in events {
        active += delta;
        best = best.max(active);
    }
    Ok(best as usize)
}

/// Indices of a disconnected subfamily covering every centre of `f`.
///
/// Runs the exchange step of the covering argument: pick a ball `B` whose
/// centre is uncovered, drop from the current subfamily every ball centred
/// inside `B`, add `B`. Candidates are taken largest first (radius, then
/// closed before open, then index). With that order no previously chosen
/// ball is ever centred inside the newcomer, so coverage only grows.
pub fn greedy_covering_indices(f: &BallFamily) -> Vec<usize> {
    let mut order: Vec<usize> = (0..f.len()).collect();
    order.sort_by(|&a, &b| {
        let (ba, bb) = (&f.balls[a], &f.balls[b]);
        bb.radius
            .total_cmp(&ba.radius)
            .then(bb.closed.cmp(&ba.closed))
            .then(a.cmp(&b))
    });
    let mut chosen: Vec<usize> = Vec::new();
    let covered = |chosen: &[usize], i: usize| chosen.iter().any(|&j| f.center_in(j, i));
    let mut cursor = 0;
    while cursor < order.len() {
        let candidate = order[cursor];
        if covered(&chosen, candidate) {
            cursor += 1;
            continue;
        }
        let before = chosen.len();
        chosen.retain(|&j| !f.center_in(candidate, j));
        let removed = chosen.len() < before;
        chosen.push(candidate);
        // a removal may uncover centres already passed over
        cursor = if removed { 0 } else { cursor + 1 };
    }
    chosen.sort_unstable();
    chosen
}

pub fn greedy_covering_subfamily(f: &BallFamily) -> BallFamily {
    f.subfamily(&greedy_covering_indices(f))
}

/// Every centre of `f` lies in some ball of `sub`.
pub fn covers_centers(sub: &BallFamily, f: &BallFamily) -> bool {
    f.balls
        .iter()
        .all(|b| (0..sub.len()).any(|j| sub.inside(j, &b.center)))
}

/// All balls share one radius (the families de Groot dimension speaks about).
pub fn degroot_family_check(f: &BallFamily) -> bool {
    f.balls.windows(2).all(|w| w[0].radius == w[1].radius)
}

/// Union of two families on the smaller of their scales.
pub fn union_family(a: &BallFamily, b: &BallFamily) -> Result<BallFamily, NagataError> {
    let mut balls = a.balls.clone();
    balls.extend_from_slice(&b.balls);
    BallFamily::new(a.space.clone(), a.scale.min(b.scale), balls)
}

/// Size of a greedy `r/2`-separated subset of `points ∩ B̄_r(center)`.
///
/// A lower bound on how many balls of radius `r/4` are needed to cover the
/// ball, hence on the doubling constant.
pub fn doubling_cover_greedy(
    points: &[Point],
    center: &Point,
    r: f64,
    space: &MetricSpace,
) -> Result<usize, NagataError> {
    let mut kept: Vec<&Point> = Vec::new();
    for p in points {
        if space.distance(center, p)? > r {
            continue;
        }
        let mut separated = true;
        for q in &kept {
            if space.distance(p, q)? <= r / 2.0 {
                separated = false;
                break;
            }
        }
        if separated {
            kept.push(p);
        }
    }
    Ok(kept.len())
}

/// Issues fresh direction ids for the sparse space.
#[derive(Clone, Debug)]
pub struct IdSource {
    next: u64,
}

impl IdSource {
    pub fn starting_at(first: u64) -> Self {
        IdSource { next: first }
    }

    pub fn fresh(&mut self) -> u64 {
        let id = self.next;
        self.next += 1;
        id
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    NagataWitness,
    DeGrootWitness,
}

/// A disconnected family together with a point lying in `multiplicity` of its
/// balls: proves dimension at least `multiplicity − 1` at the family's scale.
#[derive(Clone, Debug, PartialEq)]
pub struct DimensionCertificate {
    pub kind: CertificateKind,
    pub family: BallFamily,
    pub witness_point: Point,
    pub multiplicity: usize,
}

/// JSON form of a certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub kind: CertificateKind,
    pub space: MetricSpace,
    pub centers: Vec<Point>,
    pub radii: Vec<f64>,
    pub witness: Point,
    pub multiplicity: usize,
}

impl DimensionCertificate {
    pub fn new(kind: CertificateKind, family: BallFamily, witness_point: Point) -> Result<Self, NagataError> {
        let (multiplicity, _) = multiplicity_over_probes(&family, std::slice::from_ref(&witness_point))?;
        Ok(DimensionCertificate {
            kind,
            family,
            witness_point,
            multiplicity,
        })
    }

    /// Re-checks disconnectedness, the witness count and, for de Groot
    /// certificates, equal radii.
    pub fn verify(&self) -> bool {
        let count = multiplicity_over_probes(&self.family, std::slice::from_ref(&self.witness_point))
            .map(|(m, _)| m)
            .unwrap_or(0);
        let radii_ok = match self.kind {
            CertificateKind::NagataWitness => true,
            CertificateKind::DeGrootWitness => degroot_family_check(&self.family),
        };
        radii_ok && is_disconnected(&self.family) && count == self.multiplicity && count == self.family.len()
    }

    pub fn record(&self) -> CertificateRecord {
        CertificateRecord {
            kind: self.kind,
            space: self.family.space.clone(),
            centers: self.family.centers(),
            radii: self.family.balls.iter().map(|b| b.radius).collect(),
            witness: self.witness_point.clone(),
            multiplicity: self.multiplicity,
        }
    }
}

/// `m` closed balls of radius `0.9·scale` centred at `center + r·e_d` for
/// fresh directions `d`; `center` lies on all their boundaries while centres
/// are `r√2` apart.
pub fn nagata_witness_sparse(
    m: usize,
    center: &SparsePoint,
    scale: f64,
    ids: &mut IdSource,
) -> Result<DimensionCertificate, NagataError> {
    let r = 0.9 * scale;
    let balls = (0..m)
        .map(|_| Ball::closed(center.offset(ids.fresh(), r), r))
        .collect();
    let family = BallFamily::new(MetricSpace::SparseL2, scale, balls)?;
    DimensionCertificate::new(CertificateKind::NagataWitness, family, Point::Sparse(center.clone()))
}

/// Five closed unit balls centred at the fifth roots of unity in the plane.
pub fn pentagon_family() -> BallFamily {
    let balls = (1..=5)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / 5.0;
            Ball::closed(Point::Vector(vec![angle.cos(), angle.sin()]), 1.0)
        })
        .collect();
    BallFamily::unbounded(MetricSpace::Euclidean { dim: 2 }, balls).expect("valid pentagon family")
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: MetricSpace = MetricSpace::EuclideanLine;

    fn line_family(balls: &[(f64, f64, bool)]) -> BallFamily {
        let balls = balls
            .iter()
            .map(|&(c, r, closed)| Ball {
                center: Point::Real(c),
                radius: r,
                closed,
            })
            .collect();
        BallFamily::unbounded(LINE, balls).unwrap()
    }

    #[test]
    fn membership_respects_boundary() {
        let closed = Ball::closed(0.0, 1.0);
        let open = Ball::open(0.0, 1.0);
        assert!(contains(&closed, &0.0.into(), &LINE).unwrap());
        assert!(contains(&closed, &1.0.into(), &LINE).unwrap());
        assert!(!contains(&open, &1.0.into(), &LINE).unwrap());
        assert!(contains(&open, &0.0.into(), &LINE).unwrap());
        assert!(contains(&open, &Point::Word(vec![]), &LINE).is_err());
    }

    #[test]
    fn family_validation() {
        assert!(matches!(
            BallFamily::new(LINE, 1.0, vec![Ball::closed(0.0, 1.0)]),
            Err(NagataError::Scale { .. })
        ));
        assert!(matches!(
            BallFamily::new(LINE, 1.0, vec![Ball::closed(0.0, 0.0)]),
            Err(NagataError::Radius(_))
        ));
        assert!(BallFamily::new(LINE, 1.0, vec![Ball::closed(Point::Word(vec![]), 0.5)]).is_err());
    }

    #[test]
    fn pentagon_is_disconnected_with_multiplicity_five() {
        let f = pentagon_family();
        assert!(is_disconnected(&f));
        let (m, at) = multiplicity_over_probes(&f, &[Point::Vector(vec![0.0, 0.0])]).unwrap();
        assert_eq!((m, at), (5, 0));
    }

    #[test]
    fn disconnected_examples() {
        assert!(!is_disconnected(&line_family(&[(0.0, 1.0, true), (0.0, 2.0, true)])));
        assert!(is_disconnected(&line_family(&[(0.0, 1.0, true)])));
        assert!(is_disconnected(&line_family(&[])));
        // touching boundaries: closed contains, open does not
        assert!(!is_disconnected(&line_family(&[(0.0, 1.0, true), (1.0, 1.0, true)])));
        assert!(is_disconnected(&line_family(&[(0.0, 1.0, false), (1.0, 1.0, false)])));
    }

    #[test]
    fn probe_multiplicity_examples() {
        let f = line_family(&[(0.0, 1.0, true), (2.0, 1.0, true)]);
        let probes: Vec<Point> = [-1.0, 0.0, 1.0, 2.0, 3.0].iter().map(|&x| Point::Real(x)).collect();
        assert_eq!(multiplicity_over_probes(&f, &probes).unwrap(), (2, 2));
        let single = line_family(&[(4.0, 1.0, true)]);
        assert_eq!(multiplicity_over_probes(&single, &single.centers()).unwrap(), (1, 0));
        assert_eq!(multiplicity_over_probes(&f, &[]), Err(NagataError::NoProbes));
    }

    #[test]
    fn sweep_examples() {
        let f = line_family(&[(0.0, 1.0, true), (2.0, 1.0, true)]);
        assert_eq!(interval_multiplicity_exact(&f).unwrap(), 2);
        let f = line_family(&[(0.0, 1.0, false), (2.0, 1.0, true)]);
        assert_eq!(interval_multiplicity_exact(&f).unwrap(), 1);
        let f = line_family(&[(0.0, 1.0, false), (2.0, 1.0, false)]);
        assert_eq!(interval_multiplicity_exact(&f).unwrap(), 1);
        let f = line_family(&[(0.0, 0.5, true), (5.0, 0.5, true), (9.0, 1.0, false)]);
        assert_eq!(interval_multiplicity_exact(&f).unwrap(), 1);
        assert!(interval_multiplicity_exact(&pentagon_family()).is_err());
    }

    #[test]
    fn greedy_examples() {
        // one ball holding every centre
        let f = line_family(&[(0.0, 5.0, true), (1.0, 0.5, true), (-2.0, 0.1, true)]);
        let sub = greedy_covering_subfamily(&f);
        assert_eq!(sub.len(), 1);
        assert!(covers_centers(&sub, &f) && is_disconnected(&sub));
        // disconnected input comes back whole
        let f = line_family(&[(0.0, 1.0, true), (3.0, 1.0, true), (6.0, 2.5, false)]);
        assert!(is_disconnected(&f));
        assert_eq!(greedy_covering_subfamily(&f), f);
        let f = line_family(&[(0.0, 1.0, true), (0.5, 1.0, true), (2.0, 1.0, true)]);
        let sub = greedy_covering_subfamily(&f);
        assert!(sub.len() <= 2 && covers_centers(&sub, &f) && is_disconnected(&sub));
    }

    #[test]
    fn greedy_handles_family_where_naive_exchange_loses_coverage() {
        // Processing centres by index would pick [0.4, 1.4] first, then the
        // exchange for centre 0 removes it and uncovers 1.3.
        let f = line_family(&[(0.9, 0.5, true), (1.3, 0.1, true), (0.0, 1.0, true)]);
        let sub = greedy_covering_subfamily(&f);
        assert!(covers_centers(&sub, &f));
        assert!(is_disconnected(&sub));
    }

    #[test]
    fn equal_radius_open_and_closed() {
        let f = line_family(&[(0.0, 1.0, false), (1.0, 1.0, true), (1.5, 1.0, false)]);
        let sub = greedy_covering_subfamily(&f);
        assert!(covers_centers(&sub, &f) && is_disconnected(&sub));
    }

    #[test]
    fn degroot_examples() {
        assert!(degroot_family_check(&line_family(&[(0.0, 1.0, true), (3.0, 1.0, false)])));
        assert!(!degroot_family_check(&line_family(&[(0.0, 1.0, true), (3.0, 2.0, true)])));
        assert!(degroot_family_check(&line_family(&[])));
    }

    #[test]
    fn doubling_examples() {
        let plane = MetricSpace::Euclidean { dim: 2 };
        let origin = Point::Vector(vec![0.0, 0.0]);
        assert_eq!(doubling_cover_greedy(&[origin.clone()], &origin, 1.0, &plane).unwrap(), 1);
        let far = Point::Vector(vec![5.0, 5.0]);
        assert_eq!(doubling_cover_greedy(&[far], &origin, 1.0, &plane).unwrap(), 0);
        assert_eq!(doubling_cover_greedy(&[], &origin, 1.0, &plane).unwrap(), 0);
    }

    #[test]
    fn sparse_witnesses() {
        let mut ids = IdSource::starting_at(1000);
        let one = nagata_witness_sparse(1, &SparsePoint::origin(), 1.0, &mut ids).unwrap();
        assert_eq!(one.multiplicity, 1);
        assert!(one.verify());
        let five = nagata_witness_sparse(5, &SparsePoint::origin(), 1.0, &mut ids).unwrap();
        assert_eq!(five.multiplicity, 5);
        assert!(is_disconnected(&five.family));
        assert!(five.verify());
        let center = SparsePoint::from_entries([(3, 0.25), (7, -1.0)]);
        let big = nagata_witness_sparse(64, &center, 0.01, &mut ids).unwrap();
        assert_eq!(big.multiplicity, 64);
        assert!(big.verify());
    }

    #[test]
    fn certificate_record_round_trips() {
        let mut ids = IdSource::starting_at(0);
        let cert = nagata_witness_sparse(3, &SparsePoint::origin(), 2.0, &mut ids).unwrap();
        let json = serde_json::to_string(&cert.record()).unwrap();
        let back: CertificateRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cert.record());
        assert_eq!(back.radii, vec![1.8; 3]);
    }

    #[test]
    fn corrupted_certificate_fails_verification() {
        let mut ids = IdSource::starting_at(0);
        let mut cert = nagata_witness_sparse(4, &SparsePoint::origin(), 1.0, &mut ids).unwrap();
        cert.multiplicity = 5;
        assert!(!cert.verify());
        let concentric = line_family(&[(0.0, 1.0, true), (0.0, 2.0, true)]);
        let cert = DimensionCertificate::new(CertificateKind::NagataWitness, concentric, Point::Real(0.0)).unwrap();
        assert!(!cert.verify());
    }
}
