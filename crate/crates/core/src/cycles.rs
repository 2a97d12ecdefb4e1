//! Bounded-length exchange cycles and altruist-initiated chains.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{CompatibilityGraph, Profile};
use crate::weights::ProfileWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CycleKind {
    Cycle,
    /// Closed through an altruist's dummy patient.
    Chain,
}

/// A legal cycle or chain in canonical rotation (minimum vertex id first).
///
/// `recipients[i]` is the profile of the patient at `vertex_ids[i]`, or
/// `None` for an altruist's dummy patient. Each vertex receives exactly one
/// kidney from its predecessor in the cyclic order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExchangeCycle {
    vertex_ids: Vec<u32>,
    recipients: Vec<Option<Profile>>,
    kind: CycleKind,
    pair_count: usize,
}

impl ExchangeCycle {
    /// Builds a cycle from an arbitrary rotation, canonicalising it.
    pub fn new(vertex_ids: Vec<u32>, recipients: Vec<Option<Profile>>) -> Result<Self> {
        if vertex_ids.len() != recipients.len() {
            return Err(Error::param("vertex and recipient lists differ in length"));
        }
        if vertex_ids.is_empty() {
            return Err(Error::param("empty cycle"));
        }
        let mut sorted = vertex_ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::param(format!("repeated vertex in cycle {vertex_ids:?}")));
        }
        let altruists = recipients.iter().filter(|r| r.is_none()).count();
        let kind = match altruists {
            0 => CycleKind::Cycle,
            1 => CycleKind::Chain,
            _ => return Err(Error::param("a chain may start at only one altruist")),
        };
        let pair_count = vertex_ids.len() - altruists;
        let start = (0..vertex_ids.len())
            .min_by_key(|&i| vertex_ids[i])
            .unwrap_or(0);
        let mut ids = vertex_ids;
        let mut recs = recipients;
        ids.rotate_left(start);
        recs.rotate_left(start);
        Ok(ExchangeCycle {
            vertex_ids: ids,
            recipients: recs,
            kind,
            pair_count,
        })
    }

    pub fn vertex_ids(&self) -> &[u32] {
        &self.vertex_ids
    }

    pub fn recipients(&self) -> &[Option<Profile>] {
        &self.recipients
    }

    pub fn kind(&self) -> CycleKind {
        self.kind
    }

    /// Number of patient-donor pairs (transplants to real patients).
    pub fn pair_count(&self) -> usize {
        self.pair_count
    }

    pub fn len(&self) -> usize {
        self.vertex_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertex_ids.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.vertex_ids.contains(&id)
    }

    /// Ids of the real patients served, in cyclic order.
    pub fn pair_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.vertex_ids
            .iter()
            .zip(&self.recipients)
            .filter(|(_, r)| r.is_some())
            .map(|(&id, _)| id)
    }

    /// Checks the structural invariants against `graph`.
    pub fn validate(&self, graph: &CompatibilityGraph, cycle_cap: usize, chain_cap: usize) -> Result<()> {
        let n = self.vertex_ids.len();
        for i in 0..n {
            let (u, v) = (self.vertex_ids[i], self.vertex_ids[(i + 1) % n]);
            if !graph.has_edge(u, v) {
                return Err(Error::graph(format!("cycle {self} uses missing edge {u}->{v}")));
            }
            let vertex = graph
                .vertex(self.vertex_ids[i])
                .ok_or_else(|| Error::graph(format!("cycle {self} references unknown vertex")))?;
            if vertex.profile() != self.recipients[i] {
                return Err(Error::graph(format!("cycle {self} carries a stale recipient profile")));
            }
        }
        let ok = match self.kind {
            CycleKind::Cycle => (2..=cycle_cap).contains(&self.pair_count),
            CycleKind::Chain => (1..=chain_cap).contains(&self.pair_count),
        };
        if !ok {
            return Err(Error::graph(format!("cycle {self} violates its length cap")));
        }
        Ok(())
    }
}

impl PartialOrd for ExchangeCycle {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExchangeCycle {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.vertex_ids.cmp(&other.vertex_ids)
    }
}

impl fmt::Display for ExchangeCycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, id) in self.vertex_ids.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{id}")?;
        }
        write!(f, ")")
    }
}

/// Value of a cycle under per-profile weights: each real patient in the
/// cycle contributes the weight of their profile, dummy patients contribute 0.
pub fn cycle_value(cycle: &ExchangeCycle, weights: &ProfileWeights) -> f64 {
    cycle
        .recipients
        .iter()
        .flatten()
        .map(|&p| weights.get(p))
        .sum()
}

/// Enumerates every cycle of at most `cycle_cap` pairs and every chain of at
/// most `chain_cap` transplants, once each, sorted by canonical vertex list.
pub fn enumerate(graph: &CompatibilityGraph, cycle_cap: usize, chain_cap: usize) -> Result<Vec<ExchangeCycle>> {
    if cycle_cap < 2 {
        return Err(Error::param(format!("cycle cap must be at least 2, got {cycle_cap}")));
    }
    let mut search = Search {
        graph,
        cycle_cap,
        chain_cap,
        path: Vec::with_capacity(cycle_cap.max(chain_cap + 1)),
        on_path: vec![false; graph.len()],
        found: Vec::new(),
    };
    for start in 0..graph.len() {
        search.path.push(start);
        search.on_path[start] = true;
        let altruist = graph.vertices()[start].is_altruist();
        search.extend(start, altruist);
        search.on_path[start] = false;
        search.path.pop();
    }
    let mut found = search.found;
    found.sort();
    Ok(found)
}

struct Search<'g> {
    graph: &'g CompatibilityGraph,
    cycle_cap: usize,
    chain_cap: usize,
    path: Vec<usize>,
    on_path: Vec<bool>,
    found: Vec<ExchangeCycle>,
}

impl Search<'_> {
    // Vertices are stored sorted by id, so "start has the minimum id" is
    // "every later vertex has a larger position".
    fn extend(&mut self, start: usize, has_altruist: bool) {
        let last = *self.path.last().expect("path never empty");
        let len = self.path.len();
        let vertices = self.graph.vertices();
        for &next in self.graph.out_positions(last) {
            if next == start {
                if len >= 2 && self.closes_legally(len, has_altruist) {
                    self.record();
                }
                continue;
            }
            if next < start || self.on_path[next] {
                continue;
            }
            let next_altruist = vertices[next].is_altruist();
            if has_altruist && next_altruist {
                continue;
            }
            let with_altruist = has_altruist || next_altruist;
            let cap = if with_altruist {
                self.chain_cap + 1
            } else {
                self.cycle_cap.max(self.chain_cap + 1)
            };
            if len + 1 > cap {
                continue;
            }
            self.path.push(next);
            self.on_path[next] = true;
            self.extend(start, with_altruist);
            self.on_path[next] = false;
            self.path.pop();
        }
    }

    fn closes_legally(&self, len: usize, has_altruist: bool) -> bool {
        if has_altruist {
            (1..=self.chain_cap).contains(&(len - 1))
        } else {
            len <= self.cycle_cap
        }
    }

    fn record(&mut self) {
        let vertices = self.graph.vertices();
        let ids = self.path.iter().map(|&p| vertices[p].id).collect();
        let recipients = self.path.iter().map(|&p| vertices[p].profile()).collect();
        let cycle = ExchangeCycle::new(ids, recipients).expect("search yields simple cycles");
        self.found.push(cycle);
    }
}
