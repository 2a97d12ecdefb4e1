//! Brute-force references for cycle enumeration and clearing, written
//! without reference to the library's search code.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use kexchange::graph::{blood_compatible, BloodType, CompatibilityGraph, Profile, Vertex};
use kexchange::weights::ProfileWeights;

/// A cycle or chain as the oracle sees it: vertex ids in exchange order,
/// rotated so the smallest id comes first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct OracleCycle {
    pub ids: Vec<u32>,
}

fn rotate_to_min(mut ids: Vec<u32>) -> Vec<u32> {
    let pos = ids
        .iter()
        .enumerate()
        .min_by_key(|(_, &id)| id)
        .map(|(i, _)| i)
        .unwrap();
    ids.rotate_left(pos);
    ids
}

/// Every closed walk without repeated vertices, found by trying all
/// ordered tuples. Pair-only walks of length 2..=cycle_cap are cycles; an
/// altruist followed by 1..=chain_cap pairs is a chain.
pub fn oracle_cycles(graph: &CompatibilityGraph, cycle_cap: usize, chain_cap: usize) -> BTreeSet<OracleCycle> {
    let vertices = graph.vertices();
    let mut found = BTreeSet::new();
    let longest = cycle_cap.max(chain_cap + 1);
    let mut tuple = Vec::new();
    fn extend(
        graph: &CompatibilityGraph,
        vertices: &[Vertex],
        tuple: &mut Vec<u32>,
        longest: usize,
        cycle_cap: usize,
        chain_cap: usize,
        found: &mut BTreeSet<OracleCycle>,
    ) {
        let len = tuple.len();
        if len >= 2 {
            let closes = (0..len).all(|i| graph.has_edge(tuple[i], tuple[(i + 1) % len]));
            let altruists = tuple.iter().filter(|&&id| graph.vertex(id).unwrap().is_altruist()).count();
            let valid = match altruists {
                0 => len <= cycle_cap,
                1 => graph.vertex(tuple[0]).unwrap().is_altruist() && len - 1 <= chain_cap,
                _ => false,
            };
            if closes && valid {
                found.insert(OracleCycle {
                    ids: rotate_to_min(tuple.clone()),
                });
            }
        }
        if len == longest {
            return;
        }
        for v in vertices {
            if !tuple.contains(&v.id) {
                tuple.push(v.id);
                extend(graph, vertices, tuple, longest, cycle_cap, chain_cap, found);
                tuple.pop();
            }
        }
    }
    extend(graph, vertices, &mut tuple, longest, cycle_cap, chain_cap, &mut found);
    found
}

/// Patients receiving a kidney in `cycle` and their total weight.
pub fn oracle_gain(graph: &CompatibilityGraph, cycle: &OracleCycle, weights: &ProfileWeights) -> (usize, f64) {
    let mut pairs = 0;
    let mut value = 0.0;
    for &id in &cycle.ids {
        if let Some(p) = graph.vertex(id).unwrap().profile() {
            pairs += 1;
            value += weights.get(p);
        }
    }
    (pairs, value)
}

/// Maximum patients matched, and the best weight among packings reaching
/// it, by walking every vertex-disjoint subset of `cycles`.
pub fn oracle_clear(graph: &CompatibilityGraph, cycles: &[OracleCycle], weights: &ProfileWeights) -> (usize, f64) {
    let gains: Vec<(usize, f64)> = cycles.iter().map(|c| oracle_gain(graph, c, weights)).collect();
    let mut best = (0usize, 0.0f64);
    fn walk(
        i: usize,
        cycles: &[OracleCycle],
        gains: &[(usize, f64)],
        used: &mut BTreeSet<u32>,
        size: usize,
        value: f64,
        best: &mut (usize, f64),
    ) {
        if i == cycles.len() {
            if size > best.0 || (size == best.0 && value > best.1) {
                *best = (size, value);
            }
            return;
        }
        walk(i + 1, cycles, gains, used, size, value, best);
        if cycles[i].ids.iter().all(|id| !used.contains(id)) {
            used.extend(cycles[i].ids.iter().copied());
            walk(i + 1, cycles, gains, used, size + gains[i].0, value + gains[i].1, best);
            for id in &cycles[i].ids {
                used.remove(id);
            }
        }
    }
    walk(0, cycles, &gains, &mut BTreeSet::new(), 0, 0.0, &mut best);
    best
}

/// A random valid pool of up to `max_vertices` vertices. Altruists appear
/// only when `altruists` is set; every blood-compatible arc is kept with
/// probability `density`.
pub fn random_graph<R: Rng>(rng: &mut R, max_vertices: usize, altruists: bool, density: f64) -> CompatibilityGraph {
    let n = rng.random_range(1..=max_vertices);
    let mut ids: Vec<u32> = (1..=(3 * n as u32)).collect();
    ids.shuffle(rng);
    ids.truncate(n);
    let mut vertices = Vec::with_capacity(n);
    for &id in &ids {
        let donor = BloodType::ALL[rng.random_range(0..4)];
        if altruists && rng.random_bool(0.15) {
            vertices.push(Vertex::altruist(id, donor));
        } else {
            let patient = BloodType::ALL[rng.random_range(0..4)];
            let profile = Profile::ALL[rng.random_range(0..8)];
            vertices.push(Vertex::pair(id, donor, patient, profile));
        }
    }
    let mut edges = Vec::new();
    for u in &vertices {
        for v in &vertices {
            if u.id == v.id || (u.is_altruist() && v.is_altruist()) {
                continue;
            }
            if v.is_altruist() {
                // The altruist's dummy patient accepts any pair's donor.
                edges.push((u.id, v.id));
            } else if blood_compatible(u.donor_blood, v.patient_blood().unwrap()) && rng.random_bool(density) {
                edges.push((u.id, v.id));
            }
        }
    }
    CompatibilityGraph::new(vertices, edges).expect("generated graph is valid")
}
