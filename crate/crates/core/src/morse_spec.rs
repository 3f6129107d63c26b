//! Combinatorial input: Morse functions on closed oriented surfaces given by
//! their critical points and Reeb graph, and signed dividing-set
//! configurations that generate a canonical Morse function.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticalKind {
    Minimum,
    Maximum,
    Saddle,
}

impl fmt::Display for CriticalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CriticalKind::Minimum => "minimum",
            CriticalKind::Maximum => "maximum",
            CriticalKind::Saddle => "saddle",
        };
        f.write_str(s)
    }
}

/// Sign of a region, atom or chart relative to the zero level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn of(value: f64) -> Sign {
        if value > 0.0 {
            Sign::Positive
        } else {
            Sign::Negative
        }
    }

    pub fn factor(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Positive => Sign::Negative,
            Sign::Negative => Sign::Positive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub id: String,
    pub kind: CriticalKind,
    pub value: f64,
}

/// An annulus of regular level circles joining two critical points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReebEdge {
    pub id: String,
    pub endpoints: [String; 2],
    /// Open interval of regular values swept by the annulus. Derived from the
    /// endpoints when absent; checked against them when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_interval: Option<[f64; 2]>,
}

impl ReebEdge {
    pub fn crosses_zero(&self) -> bool {
        match self.value_interval {
            Some([lo, hi]) => lo < 0.0 && 0.0 < hi,
            None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorseSpec {
    pub critical_points: Vec<CriticalPoint>,
    pub edges: Vec<ReebEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub genus: u32,
    pub boundary_circles: Vec<String>,
}

impl Component {
    pub fn euler_characteristic(&self) -> i64 {
        2 - 2 * self.genus as i64 - self.boundary_circles.len() as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DividingSetSpec {
    pub positive_components: Vec<Component>,
    pub negative_components: Vec<Component>,
    /// The dividing circles. Derived from the components when empty.
    #[serde(default)]
    pub pairing: Vec<String>,
}

/// One violated hypothesis or structural rule.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecViolation {
    #[error("unknown critical point id `{0}`")]
    UnknownPoint(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("ForbiddenExtremum: {kind} `{id}` has value {value}")]
    ForbiddenExtremum {
        id: String,
        kind: CriticalKind,
        value: f64,
    },
    #[error("ZeroCritical: critical point `{0}` sits on the zero level")]
    ZeroCritical(String),
    #[error("non-finite critical value at `{0}`")]
    NonFinite(String),
    #[error("critical values of `{0}` and `{1}` coincide")]
    RepeatedValue(String, String),
    #[error("GraphDegree: `{id}` {detail}")]
    GraphDegree { id: String, detail: String },
    #[error("edge `{edge}` value_interval {given:?} disagrees with endpoint values {expected:?}")]
    IntervalMismatch {
        edge: String,
        given: [f64; 2],
        expected: [f64; 2],
    },
    #[error("EulerMismatch: #min + #max - #saddle = {chi}, not of the form 2 - 2g")]
    EulerMismatch { chi: i64 },
    #[error("Disconnected: Reeb graph has {0} components")]
    Disconnected(usize),
    #[error("empty spec")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct Violations(pub Vec<SpecViolation>);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PairingError {
    #[error("PairingError: circle `{0}` appears {1} times on the positive side")]
    PositiveCount(String, usize),
    #[error("PairingError: circle `{0}` appears {1} times on the negative side")]
    NegativeCount(String, usize),
    #[error("PairingError: circle `{0}` is listed in the pairing but not used")]
    Unused(String),
    #[error("PairingError: a component has no boundary circle")]
    NoBoundary,
    #[error("PairingError: no components on one side")]
    MissingSide,
    #[error("PairingError: pairing graph is disconnected")]
    Disconnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SpecSummary {
    pub genus: u32,
    pub minima: usize,
    pub maxima: usize,
    pub saddles: usize,
}

/// Checks every structural invariant and hypothesis of a Morse spec.
pub fn validate_spec(spec: &MorseSpec) -> Result<SpecSummary, Violations> {
    let mut out = Vec::new();
    if spec.critical_points.is_empty() {
        return Err(Violations(vec![SpecViolation::Empty]));
    }

    let mut index = BTreeMap::new();
    for (i, p) in spec.critical_points.iter().enumerate() {
        if index.insert(p.id.as_str(), i).is_some() {
            out.push(SpecViolation::DuplicateId(p.id.clone()));
        }
        if !p.value.is_finite() {
            out.push(SpecViolation::NonFinite(p.id.clone()));
        } else if p.value == 0.0 {
            out.push(SpecViolation::ZeroCritical(p.id.clone()));
        }
        let forbidden = match p.kind {
            CriticalKind::Minimum => p.value > 0.0,
            CriticalKind::Maximum => p.value < 0.0,
            CriticalKind::Saddle => false,
        };
        if forbidden {
            out.push(SpecViolation::ForbiddenExtremum {
                id: p.id.clone(),
                kind: p.kind,
                value: p.value,
            });
        }
    }
    let mut sorted: Vec<&CriticalPoint> = spec.critical_points.iter().collect();
    sorted.sort_by(|a, b| a.value.total_cmp(&b.value));
    for w in sorted.windows(2) {
        if w[0].value == w[1].value {
            out.push(SpecViolation::RepeatedValue(
                w[0].id.clone(),
                w[1].id.clone(),
            ));
        }
    }

    let n = spec.critical_points.len();
    let mut up = vec![0usize; n];
    let mut down = vec![0usize; n];
    let mut adjacency = vec![Vec::new(); n];
    let mut edge_ids = BTreeSet::new();
    for e in &spec.edges {
        if !edge_ids.insert(e.id.as_str()) {
            out.push(SpecViolation::DuplicateId(e.id.clone()));
        }
        let (Some(&a), Some(&b)) = (
            index.get(e.endpoints[0].as_str()),
            index.get(e.endpoints[1].as_str()),
        ) else {
            for ep in &e.endpoints {
                if !index.contains_key(ep.as_str()) {
                    out.push(SpecViolation::UnknownPoint(ep.clone()));
                }
            }
            continue;
        };
        let (va, vb) = (spec.critical_points[a].value, spec.critical_points[b].value);
        if a == b || va == vb {
            out.push(SpecViolation::GraphDegree {
                id: e.id.clone(),
                detail: "edge joins points at the same level".into(),
            });
            continue;
        }
        let (lo, hi) = if va < vb { (a, b) } else { (b, a) };
        up[lo] += 1;
        down[hi] += 1;
        adjacency[a].push(b);
        adjacency[b].push(a);
        let expected = [va.min(vb), va.max(vb)];
        if let Some(given) = e.value_interval {
            if given != expected {
                out.push(SpecViolation::IntervalMismatch {
                    edge: e.id.clone(),
                    given,
                    expected,
                });
            }
        }
    }

    for (i, p) in spec.critical_points.iter().enumerate() {
        let ok = match p.kind {
            CriticalKind::Minimum => up[i] == 1 && down[i] == 0,
            CriticalKind::Maximum => up[i] == 0 && down[i] == 1,
            CriticalKind::Saddle => up[i] + down[i] == 3 && up[i] >= 1 && down[i] >= 1,
        };
        if !ok {
            out.push(SpecViolation::GraphDegree {
                id: p.id.clone(),
                detail: format!(
                    "{} has {} upward and {} downward edges",
                    p.kind, up[i], down[i]
                ),
            });
        }
    }

    let components = count_components(&adjacency);
    if components != 1 {
        out.push(SpecViolation::Disconnected(components));
    }

    let minima = count_kind(spec, CriticalKind::Minimum);
    let maxima = count_kind(spec, CriticalKind::Maximum);
    let saddles = count_kind(spec, CriticalKind::Saddle);
    let chi = minima as i64 + maxima as i64 - saddles as i64;
    if chi > 2 || chi % 2 != 0 {
        out.push(SpecViolation::EulerMismatch { chi });
    }

    if out.is_empty() {
        Ok(SpecSummary {
            genus: ((2 - chi) / 2) as u32,
            minima,
            maxima,
            saddles,
        })
    } else {
        Err(Violations(out))
    }
}

fn count_kind(spec: &MorseSpec, kind: CriticalKind) -> usize {
    spec.critical_points
        .iter()
        .filter(|p| p.kind == kind)
        .count()
}

fn count_components(adjacency: &[Vec<usize>]) -> usize {
    let mut seen = vec![false; adjacency.len()];
    let mut count = 0;
    for start in 0..adjacency.len() {
        if seen[start] {
            continue;
        }
        count += 1;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    count
}

impl DividingSetSpec {
    /// The dividing circles, either as listed or collected from the components.
    pub fn circles(&self) -> Vec<String> {
        if !self.pairing.is_empty() {
            return self.pairing.clone();
        }
        let mut set = BTreeSet::new();
        for c in self
            .positive_components
            .iter()
            .chain(&self.negative_components)
        {
            set.extend(c.boundary_circles.iter().cloned());
        }
        set.into_iter().collect()
    }

    pub fn validate(&self) -> Result<(), PairingError> {
        if self.positive_components.is_empty() || self.negative_components.is_empty() {
            return Err(PairingError::MissingSide);
        }
        let all = self
            .positive_components
            .iter()
            .chain(&self.negative_components);
        if all.clone().any(|c| c.boundary_circles.is_empty()) {
            return Err(PairingError::NoBoundary);
        }
        let mut pos: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        let mut neg: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, c) in self.positive_components.iter().enumerate() {
            for id in &c.boundary_circles {
                pos.entry(id.as_str()).or_default().push(i);
            }
        }
        for (i, c) in self.negative_components.iter().enumerate() {
            for id in &c.boundary_circles {
                neg.entry(id.as_str()).or_default().push(i);
            }
        }
        let circles = self.circles();
        let listed: BTreeSet<&str> = circles.iter().map(String::as_str).collect();
        for id in pos.keys().chain(neg.keys()) {
            if !listed.contains(id) {
                return Err(PairingError::Unused((*id).to_string()));
            }
        }
        for id in &listed {
            let p = pos.get(id).map_or(0, Vec::len);
            if p != 1 {
                return Err(PairingError::PositiveCount((*id).to_string(), p));
            }
            let q = neg.get(id).map_or(0, Vec::len);
            if q != 1 {
                return Err(PairingError::NegativeCount((*id).to_string(), q));
            }
        }
        let np = self.positive_components.len();
        let mut adjacency = vec![Vec::new(); np + self.negative_components.len()];
        for id in &listed {
            let a = pos[id][0];
            let b = np + neg[id][0];
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        if count_components(&adjacency) != 1 {
            return Err(PairingError::Disconnected);
        }
        Ok(())
    }

    pub fn chi_plus(&self) -> i64 {
        self.positive_components
            .iter()
            .map(Component::euler_characteristic)
            .sum()
    }

    pub fn chi_minus(&self) -> i64 {
        self.negative_components
            .iter()
            .map(Component::euler_characteristic)
            .sum()
    }

    /// Genus of the closed surface obtained by gluing both sides.
    pub fn surface_genus(&self) -> u32 {
        ((2 - self.chi_plus() - self.chi_minus()) / 2) as u32
    }

    /// Exchange the roles of the two sides.
    pub fn swapped(&self) -> DividingSetSpec {
        DividingSetSpec {
            positive_components: self.negative_components.clone(),
            negative_components: self.positive_components.clone(),
            pairing: self.pairing.clone(),
        }
    }
}

/// Canonical Morse spec of the standard height embedding: each component
/// gets one elliptic point and `k - 1 + 2g` saddles on its own side of zero,
/// and every dividing circle becomes a zero-crossing edge.
///
/// Values are consecutive integers. Component `j` of a side occupies a
/// contiguous block, with its elliptic point furthest from zero.
pub fn spec_from_dividing_set(dspec: &DividingSetSpec) -> Result<MorseSpec, PairingError> {
    dspec.validate()?;
    let mut points = Vec::new();
    let mut edges = Vec::new();
    // circle id -> vertex id on each side
    let mut circle_pos: BTreeMap<String, String> = BTreeMap::new();
    let mut circle_neg: BTreeMap<String, String> = BTreeMap::new();

    for (sign, comps, attach) in [
        (Sign::Positive, &dspec.positive_components, &mut circle_pos),
        (Sign::Negative, &dspec.negative_components, &mut circle_neg),
    ] {
        let tag = if sign == Sign::Positive { "p" } else { "n" };
        let mut offset = 0i64;
        for (j, comp) in comps.iter().enumerate() {
            let k = comp.boundary_circles.len();
            let count = 1 + (k - 1) + 2 * comp.genus as usize;
            // distance from zero, elliptic point furthest
            let mut level = offset + count as i64;
            let mut next_value = || {
                let v = sign.factor() * level as f64;
                level -= 1;
                v
            };
            let elliptic = format!("{tag}{j}.e");
            points.push(CriticalPoint {
                id: elliptic.clone(),
                kind: if sign == Sign::Positive {
                    CriticalKind::Maximum
                } else {
                    CriticalKind::Minimum
                },
                value: next_value(),
            });
            let mut edge_no = 0usize;
            let mut link = |edges: &mut Vec<ReebEdge>, a: &str, b: &str| {
                edges.push(ReebEdge {
                    id: format!("{tag}{j}.a{edge_no}"),
                    endpoints: [a.to_string(), b.to_string()],
                    value_interval: None,
                });
                edge_no += 1;
            };
            let mut current = elliptic;
            for handle in 0..comp.genus {
                let split = format!("{tag}{j}.h{handle}s");
                let merge = format!("{tag}{j}.h{handle}m");
                for id in [&split, &merge] {
                    points.push(CriticalPoint {
                        id: id.clone(),
                        kind: CriticalKind::Saddle,
                        value: next_value(),
                    });
                }
                link(&mut edges, &current, &split);
                link(&mut edges, &split, &merge);
                link(&mut edges, &split, &merge);
                current = merge;
            }
            let circles = &comp.boundary_circles;
            for (b, circle) in circles.iter().enumerate() {
                if b + 1 < k {
                    let split = format!("{tag}{j}.b{b}");
                    points.push(CriticalPoint {
                        id: split.clone(),
                        kind: CriticalKind::Saddle,
                        value: next_value(),
                    });
                    link(&mut edges, &current, &split);
                    current = split;
                }
                attach.insert(circle.clone(), current.clone());
            }
            offset += count as i64;
        }
    }

    for circle in dspec.circles() {
        edges.push(ReebEdge {
            id: format!("gamma.{circle}"),
            endpoints: [circle_neg[&circle].clone(), circle_pos[&circle].clone()],
            value_interval: None,
        });
    }

    let mut spec = MorseSpec {
        critical_points: points,
        edges,
    };
    fill_intervals(&mut spec);
    Ok(spec)
}

/// Populates `value_interval` on every edge whose endpoints resolve.
pub fn fill_intervals(spec: &mut MorseSpec) {
    let values: BTreeMap<String, f64> = spec
        .critical_points
        .iter()
        .map(|p| (p.id.clone(), p.value))
        .collect();
    for e in &mut spec.edges {
        if let (Some(&a), Some(&b)) = (values.get(&e.endpoints[0]), values.get(&e.endpoints[1])) {
            e.value_interval = Some([a.min(b), a.max(b)]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// The edge leaves the atom upward (toward larger values).
    Upper,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Atom {
    pub critical_point: String,
    pub point_index: usize,
    pub kind: CriticalKind,
    pub value: f64,
    pub epsilon: f64,
    pub sign: Sign,
    /// Edge indices with the side of the atom they leave from, in spec order.
    pub boundary_circles: Vec<(usize, Side)>,
}

impl Atom {
    pub fn interval(&self) -> [f64; 2] {
        [self.value - self.epsilon, self.value + self.epsilon]
    }
}

/// One atom per critical point with
/// `epsilon = min(gap / 4, |value| / 2)`, where `gap` is the distance to the
/// nearest other critical value. The quarter keeps neighbouring atoms disjoint.
///
/// Assumes `validate_spec` succeeded.
pub fn atom_decomposition(spec: &MorseSpec) -> Vec<Atom> {
    let index: BTreeMap<&str, usize> = spec
        .critical_points
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.as_str(), i))
        .collect();
    let mut atoms: Vec<Atom> = spec
        .critical_points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let gap = spec
                .critical_points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| (q.value - p.value).abs())
                .fold(f64::INFINITY, f64::min);
            Atom {
                critical_point: p.id.clone(),
                point_index: i,
                kind: p.kind,
                value: p.value,
                epsilon: (0.25 * gap).min(0.5 * p.value.abs()),
                sign: Sign::of(p.value),
                boundary_circles: Vec::new(),
            }
        })
        .collect();
    for (k, e) in spec.edges.iter().enumerate() {
        let a = index[e.endpoints[0].as_str()];
        let b = index[e.endpoints[1].as_str()];
        let (lo, hi) = if atoms[a].value < atoms[b].value {
            (a, b)
        } else {
            (b, a)
        };
        atoms[lo].boundary_circles.push((k, Side::Upper));
        atoms[hi].boundary_circles.push((k, Side::Lower));
    }
    atoms
}
