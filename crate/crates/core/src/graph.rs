//! Blood types, patient profiles, vertices and the directed compatibility graph.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ABO blood type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BloodType {
    O,
    A,
    B,
    AB,
}

impl BloodType {
    pub const ALL: [BloodType; 4] = [BloodType::O, BloodType::A, BloodType::B, BloodType::AB];

    pub fn as_str(self) -> &'static str {
        match self {
            BloodType::O => "O",
            BloodType::A => "A",
            BloodType::B => "B",
            BloodType::AB => "AB",
        }
    }
}

impl fmt::Display for BloodType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BloodType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "O" => Ok(BloodType::O),
            "A" => Ok(BloodType::A),
            "B" => Ok(BloodType::B),
            "AB" => Ok(BloodType::AB),
            other => Err(Error::param(format!("unknown blood type {other:?}"))),
        }
    }
}

/// Whether a donor of one blood type can give to a patient of another.
///
/// O donors give to everyone, AB patients receive from everyone, and
/// identical types are always compatible.
pub fn blood_compatible(donor: BloodType, patient: BloodType) -> bool {
    donor == BloodType::O || patient == BloodType::AB || donor == patient
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Age {
    Young,
    Old,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Drinking {
    Rare,
    Frequent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Health {
    Healthy,
    Cancer,
}

/// One of the eight patient profiles.
///
/// Ids run 1..=8 over (age, drinking, health) with health varying slowest
/// among the last two: 1=YRH, 2=YFH, 3=YRC, 4=YFC, 5=ORH, 6=OFH, 7=ORC, 8=OFC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Profile(u8);

impl Profile {
    pub const COUNT: usize = 8;

    pub const ALL: [Profile; 8] = [
        Profile(1),
        Profile(2),
        Profile(3),
        Profile(4),
        Profile(5),
        Profile(6),
        Profile(7),
        Profile(8),
    ];

    pub fn new(id: u8) -> Result<Self> {
        if (1..=8).contains(&id) {
            Ok(Profile(id))
        } else {
            Err(Error::param(format!("profile id {id} outside 1..=8")))
        }
    }

    pub fn from_attributes(age: Age, drinking: Drinking, health: Health) -> Self {
        let bits = (age == Age::Old) as u8 * 4
            + (health == Health::Cancer) as u8 * 2
            + (drinking == Drinking::Frequent) as u8;
        Profile(bits + 1)
    }

    pub fn id(self) -> u8 {
        self.0
    }

    /// Zero-based index, handy for fixed-size arrays.
    pub fn index(self) -> usize {
        (self.0 - 1) as usize
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < 8, "profile index {index} out of range");
        Profile(index as u8 + 1)
    }

    fn bits(self) -> u8 {
        self.0 - 1
    }

    pub fn age(self) -> Age {
        if self.bits() & 4 == 0 {
            Age::Young
        } else {
            Age::Old
        }
    }

    pub fn drinking(self) -> Drinking {
        if self.bits() & 1 == 0 {
            Drinking::Rare
        } else {
            Drinking::Frequent
        }
    }

    pub fn health(self) -> Health {
        if self.bits() & 2 == 0 {
            Health::Healthy
        } else {
            Health::Cancer
        }
    }

    /// 0/1 indicators for (age, drinking, health); 1 marks the less
    /// preferred alternative (Old, Frequent, Cancer).
    pub fn indicators(self) -> [f64; 3] {
        [
            (self.age() == Age::Old) as u8 as f64,
            (self.drinking() == Drinking::Frequent) as u8 as f64,
            (self.health() == Health::Cancer) as u8 as f64,
        ]
    }

    /// Three-letter code such as `YRH`.
    pub fn code(self) -> String {
        let a = match self.age() {
            Age::Young => 'Y',
            Age::Old => 'O',
        };
        let d = match self.drinking() {
            Drinking::Rare => 'R',
            Drinking::Frequent => 'F',
        };
        let h = match self.health() {
            Health::Healthy => 'H',
            Health::Cancer => 'C',
        };
        [a, d, h].iter().collect()
    }
}

impl TryFrom<u8> for Profile {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self> {
        Profile::new(id)
    }
}

impl From<Profile> for u8 {
    fn from(p: Profile) -> u8 {
        p.0
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.0, self.code())
    }
}

/// Blood-type class of a patient-donor pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BloodClass {
    Underdemanded,
    Overdemanded,
    SelfDemanded,
    Reciprocal,
}

impl BloodClass {
    pub const ALL: [BloodClass; 4] = [
        BloodClass::Underdemanded,
        BloodClass::Overdemanded,
        BloodClass::SelfDemanded,
        BloodClass::Reciprocal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BloodClass::Underdemanded => "underdemanded",
            BloodClass::Overdemanded => "overdemanded",
            BloodClass::SelfDemanded => "self_demanded",
            BloodClass::Reciprocal => "reciprocal",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for BloodClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BloodClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BloodClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::param(format!("unknown blood class {s:?}")))
    }
}

/// Classifies a pair. The four textbook definitions overlap, so the first
/// matching rule wins: self-demanded, reciprocal, underdemanded, overdemanded.
pub fn classify_pair(patient: BloodType, donor: BloodType) -> BloodClass {
    use BloodType::*;
    if patient == donor {
        BloodClass::SelfDemanded
    } else if matches!((patient, donor), (A, B) | (B, A)) {
        BloodClass::Reciprocal
    } else if patient == O || donor == AB {
        BloodClass::Underdemanded
    } else {
        debug_assert!(patient == AB || donor == O);
        BloodClass::Overdemanded
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexKind {
    Pair {
        patient_blood: BloodType,
        profile: Profile,
    },
    /// Non-directed donor; its dummy patient accepts any pair's donor.
    Altruist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vertex {
    pub id: u32,
    pub donor_blood: BloodType,
    pub kind: VertexKind,
}

impl Vertex {
    pub fn pair(id: u32, donor_blood: BloodType, patient_blood: BloodType, profile: Profile) -> Self {
        Vertex {
            id,
            donor_blood,
            kind: VertexKind::Pair {
                patient_blood,
                profile,
            },
        }
    }

    pub fn altruist(id: u32, donor_blood: BloodType) -> Self {
        Vertex {
            id,
            donor_blood,
            kind: VertexKind::Altruist,
        }
    }

    pub fn is_pair(&self) -> bool {
        matches!(self.kind, VertexKind::Pair { .. })
    }

    pub fn is_altruist(&self) -> bool {
        matches!(self.kind, VertexKind::Altruist)
    }

    pub fn patient_blood(&self) -> Option<BloodType> {
        match self.kind {
            VertexKind::Pair { patient_blood, .. } => Some(patient_blood),
            VertexKind::Altruist => None,
        }
    }

    pub fn profile(&self) -> Option<Profile> {
        match self.kind {
            VertexKind::Pair { profile, .. } => Some(profile),
            VertexKind::Altruist => None,
        }
    }

    pub fn blood_class(&self) -> Option<BloodClass> {
        self.patient_blood()
            .map(|patient| classify_pair(patient, self.donor_blood))
    }

    /// Whether this vertex's donor may give to `target`, ignoring crossmatch.
    pub fn can_give_to(&self, target: &Vertex) -> bool {
        if self.id == target.id {
            return false;
        }
        match target.kind {
            VertexKind::Pair { patient_blood, .. } => blood_compatible(self.donor_blood, patient_blood),
            VertexKind::Altruist => self.is_pair(),
        }
    }
}

/// Directed compatibility graph; an edge `u -> v` means u's donor can give to v's patient.
///
/// Vertices are kept sorted by id and adjacency lists sorted by target id.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityGraph {
    vertices: Vec<Vertex>,
    index: HashMap<u32, usize>,
    out: Vec<Vec<usize>>,
}

impl CompatibilityGraph {
    /// Builds a graph from explicit edges, validating every invariant.
    pub fn new(vertices: Vec<Vertex>, edges: impl IntoIterator<Item = (u32, u32)>) -> Result<Self> {
        let mut graph = Self::with_vertices(vertices)?;
        for (from, to) in edges {
            let u = *graph
                .index
                .get(&from)
                .ok_or_else(|| Error::graph(format!("edge {from}->{to} references unknown vertex {from}")))?;
            let v = *graph
                .index
                .get(&to)
                .ok_or_else(|| Error::graph(format!("edge {from}->{to} references unknown vertex {to}")))?;
            if u == v {
                return Err(Error::graph(format!("self-edge on vertex {from}")));
            }
            let (src, dst) = (&graph.vertices[u], &graph.vertices[v]);
            match dst.kind {
                VertexKind::Pair { patient_blood, .. } => {
                    if !blood_compatible(src.donor_blood, patient_blood) {
                        return Err(Error::graph(format!(
                            "edge {from}->{to}: donor blood {} incompatible with patient blood {}",
                            src.donor_blood, patient_blood
                        )));
                    }
                }
                VertexKind::Altruist => {
                    if src.is_altruist() {
                        return Err(Error::graph(format!("edge {from}->{to} joins two altruists")));
                    }
                }
            }
            if graph.out[u].contains(&v) {
                return Err(Error::graph(format!("duplicate edge {from}->{to}")));
            }
            graph.out[u].push(v);
        }
        for (u, src) in graph.vertices.iter().enumerate() {
            if !src.is_pair() {
                continue;
            }
            for (v, dst) in graph.vertices.iter().enumerate() {
                if dst.is_altruist() && !graph.out[u].contains(&v) {
                    return Err(Error::graph(format!(
                        "pair {} lacks the dummy-patient edge into altruist {}",
                        src.id, dst.id
                    )));
                }
            }
        }
        graph.sort_adjacency();
        Ok(graph)
    }

    fn with_vertices(mut vertices: Vec<Vertex>) -> Result<Self> {
        vertices.sort_by_key(|v| v.id);
        if let Some(w) = vertices.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::graph(format!("duplicate vertex id {}", w[0].id)));
        }
        let index = vertices.iter().enumerate().map(|(i, v)| (v.id, i)).collect();
        let out = vec![Vec::new(); vertices.len()];
        Ok(CompatibilityGraph { vertices, index, out })
    }

    /// Builds a graph where `accept(u, v)` decides each blood-compatible edge.
    /// Pair-to-altruist edges are always present.
    pub(crate) fn build_with(
        vertices: Vec<Vertex>,
        mut accept: impl FnMut(&Vertex, &Vertex) -> bool,
    ) -> Result<Self> {
        let mut graph = Self::with_vertices(vertices)?;
        let n = graph.vertices.len();
        for u in 0..n {
            for v in 0..n {
                let (src, dst) = (&graph.vertices[u], &graph.vertices[v]);
                if !src.can_give_to(dst) {
                    continue;
                }
                if dst.is_altruist() || accept(src, dst) {
                    graph.out[u].push(v);
                }
            }
        }
        Ok(graph)
    }

    fn sort_adjacency(&mut self) {
        for list in &mut self.out {
            list.sort_unstable();
        }
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex(&self, id: u32) -> Option<&Vertex> {
        self.index.get(&id).map(|&i| &self.vertices[i])
    }

    /// Out-neighbours of the vertex at dense position `pos`, as positions.
    pub(crate) fn out_positions(&self, pos: usize) -> &[usize] {
        &self.out[pos]
    }

    pub fn has_edge(&self, from: u32, to: u32) -> bool {
        match (self.index.get(&from), self.index.get(&to)) {
            (Some(&u), Some(&v)) => self.out[u].binary_search(&v).is_ok(),
            _ => false,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    /// All edges as `(from_id, to_id)`, sorted.
    pub fn edges(&self) -> BTreeSet<(u32, u32)> {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(u, list)| {
                list.iter()
                    .map(move |&v| (self.vertices[u].id, self.vertices[v].id))
            })
            .collect()
    }
}

/// Derives edges over `vertices` from blood compatibility plus an independent
/// crossmatch draw per ordered pair. An edge into a pair exists iff the types
/// are compatible and the uniform draw is not below `crossmatch_positive_prob`.
///
/// Draws are consumed in (from_id, to_id) order, one per blood-compatible
/// pair-targeted ordered pair, so the result is reproducible from the rng state.
pub fn derive_edges<R: Rng + ?Sized>(
    vertices: Vec<Vertex>,
    crossmatch_positive_prob: f64,
    rng: &mut R,
) -> Result<CompatibilityGraph> {
    check_probability("crossmatch_positive_prob", crossmatch_positive_prob)?;
    CompatibilityGraph::build_with(vertices, |_, _| {
        rng.random::<f64>() >= crossmatch_positive_prob
    })
}

pub(crate) fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::param(format!("{name} = {p} is not a probability")))
    }
}
