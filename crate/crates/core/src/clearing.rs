//! Exact clearing: maximum-cardinality packing of cycles, then a weighted
//! re-solve constrained to keep at least that many patients matched.
//!
//! Both stages share one branch-and-bound over vertex-disjoint cycle
//! packings. The search picks the undecided vertex lying on the most residual
//! cycles (lowest id on ties) and branches on each residual cycle through it,
//! in canonical cycle order, and finally on leaving the vertex unmatched. The
//! branching order depends only on the cycle structure, never on weights. An
//! incumbent is replaced only by a strictly better packing, so among optima
//! the first one in this order is returned. Bounds come from feasible
//! solutions of the dual covering problem.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cycles::{cycle_value, enumerate, ExchangeCycle};
use crate::error::{Error, Result};
use crate::graph::CompatibilityGraph;
use crate::weights::ProfileWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Standard,
    Prioritized,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Mode::Standard),
            "prioritized" => Ok(Mode::Prioritized),
            other => Err(Error::param(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Standard => "standard",
            Mode::Prioritized => "prioritized",
        })
    }
}

/// A set of vertex-disjoint cycles and chains, kept in canonical order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Matching {
    cycles: Vec<ExchangeCycle>,
}

impl Matching {
    pub fn new(mut cycles: Vec<ExchangeCycle>) -> Result<Self> {
        cycles.sort();
        let mut seen = BTreeSet::new();
        for c in &cycles {
            for &id in c.vertex_ids() {
                if !seen.insert(id) {
                    return Err(Error::param(format!("vertex {id} appears in two selected cycles")));
                }
            }
        }
        Ok(Matching { cycles })
    }

    pub fn empty() -> Self {
        Matching::default()
    }

    pub fn cycles(&self) -> &[ExchangeCycle] {
        &self.cycles
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    /// Number of real patients receiving a kidney.
    pub fn pair_count(&self) -> usize {
        self.cycles.iter().map(ExchangeCycle::pair_count).sum()
    }

    pub fn matched_pair_ids(&self) -> BTreeSet<u32> {
        self.cycles.iter().flat_map(|c| c.pair_ids()).collect()
    }

    /// Every vertex id touched, altruists included.
    pub fn vertex_ids(&self) -> BTreeSet<u32> {
        self.cycles
            .iter()
            .flat_map(|c| c.vertex_ids().iter().copied())
            .collect()
    }

    pub fn value(&self, weights: &ProfileWeights) -> f64 {
        self.cycles.iter().map(|c| cycle_value(c, weights)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClearingResult {
    pub mode: Mode,
    /// Maximum-cardinality matching from the first stage.
    pub standard: Matching,
    /// Weighted re-solve; equal to `standard` in standard mode.
    pub prioritized: Matching,
    /// Patients matched by the first stage.
    pub q: usize,
    /// Weighted value of `prioritized`.
    pub weighted_value: f64,
}

impl ClearingResult {
    /// The matching the chosen mode actually executes.
    pub fn selected(&self) -> &Matching {
        &self.prioritized
    }
}

/// Stage 1: a vertex-disjoint subset of `cycles` maximising the number of
/// patients matched, and that maximum.
pub fn solve_max_cardinality(cycles: &[ExchangeCycle]) -> (Matching, usize) {
    let mut chosen = Vec::new();
    let mut q = 0;
    for component in components(cycles) {
        let local: Vec<&ExchangeCycle> = component.iter().map(|&i| &cycles[i]).collect();
        let sizes: Vec<f64> = local.iter().map(|c| c.pair_count() as f64).collect();
        let best = Packer::new(&local, &sizes, &sizes, 0.0, 0.5)
            .solve()
            .expect("the empty packing is always feasible");
        q += best.iter().map(|&i| local[i].pair_count()).sum::<usize>();
        chosen.extend(best.into_iter().map(|i| local[i].clone()));
    }
    let matching = Matching::new(chosen).expect("packer output is disjoint");
    (matching, q)
}

/// Stage 2: among disjoint subsets matching at least `q` patients, one of
/// maximum total weight.
pub fn solve_prioritized(cycles: &[ExchangeCycle], weights: &ProfileWeights, q: usize) -> Result<Matching> {
    let values: Vec<f64> = cycles.iter().map(|c| cycle_value(c, weights)).collect();
    let parts = components(cycles);
    let mut maxima = Vec::with_capacity(parts.len());
    // Weighted value of each component's maximum-cardinality packing.
    let mut reachable = Vec::with_capacity(parts.len());
    for component in &parts {
        let local: Vec<&ExchangeCycle> = component.iter().map(|&i| &cycles[i]).collect();
        let sizes: Vec<f64> = local.iter().map(|c| c.pair_count() as f64).collect();
        let best = Packer::new(&local, &sizes, &sizes, 0.0, 0.5)
            .solve()
            .expect("the empty packing is always feasible");
        maxima.push(best.iter().map(|&i| local[i].pair_count()).sum::<usize>());
        reachable.push(best.iter().map(|&i| values[component[i]]).sum::<f64>());
    }
    let total: usize = maxima.iter().sum();
    if q > total {
        return Err(Error::Internal(format!(
            "cardinality floor {q} exceeds the attainable maximum {total}"
        )));
    }

    // When the floor is the overall maximum every component must reach its
    // own maximum, so components can be solved independently.
    let groups: Vec<(Vec<usize>, usize, f64)> = if q == total {
        parts
            .into_iter()
            .zip(maxima)
            .zip(reachable)
            .map(|((members, floor), known)| (members, floor, known))
            .collect()
    } else {
        vec![((0..cycles.len()).collect(), q, reachable.iter().sum())]
    };

    let mut chosen = Vec::new();
    for (members, floor, known) in groups {
        let local: Vec<&ExchangeCycle> = members.iter().map(|&i| &cycles[i]).collect();
        let sizes: Vec<f64> = local.iter().map(|c| c.pair_count() as f64).collect();
        let local_values: Vec<f64> = members.iter().map(|&i| values[i]).collect();
        let scale: f64 = local_values.iter().map(|v| v.abs()).sum();
        let best = Packer::new(&local, &local_values, &sizes, floor as f64, 1e-12 * scale)
            .with_known(known)
            .solve()
            .ok_or_else(|| Error::Internal(format!("no packing reaches the floor {floor}")))?;
        chosen.extend(best.into_iter().map(|i| local[i].clone()));
    }
    Matching::new(chosen).map_err(|e| Error::Internal(e.to_string()))
}

/// Enumerates cycles on `graph` and clears it.
pub fn clear(
    graph: &CompatibilityGraph,
    cycle_cap: usize,
    chain_cap: usize,
    weights: &ProfileWeights,
    mode: Mode,
) -> Result<ClearingResult> {
    let cycles = enumerate(graph, cycle_cap, chain_cap)?;
    clear_cycles(&cycles, weights, mode)
}

/// Clears a pre-enumerated cycle list.
pub fn clear_cycles(cycles: &[ExchangeCycle], weights: &ProfileWeights, mode: Mode) -> Result<ClearingResult> {
    let (standard, q) = solve_max_cardinality(cycles);
    let prioritized = match mode {
        Mode::Standard => standard.clone(),
        Mode::Prioritized => solve_prioritized(cycles, weights, q)?,
    };
    let weighted_value = prioritized.value(weights);
    debug_assert!(prioritized.pair_count() >= q);
    Ok(ClearingResult {
        mode,
        standard,
        prioritized,
        q,
        weighted_value,
    })
}

/// Groups cycle indices into connected components (cycles sharing a vertex).
/// Components are ordered by their first cycle; members keep input order.
fn components(cycles: &[ExchangeCycle]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..cycles.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut owner: HashMap<u32, usize> = HashMap::new();
    for (i, c) in cycles.iter().enumerate() {
        for &id in c.vertex_ids() {
            match owner.get(&id) {
                Some(&j) => {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
                None => {
                    owner.insert(id, i);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..cycles.len() {
        let root = find(&mut parent, i);
        let g = *slot.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
}

/// Branch-and-bound maximising `Σ objective` over disjoint packings with
/// `Σ size >= floor`. Sizes are whole numbers of patients.
struct Packer {
    verts: Vec<Vec<usize>>,
    objective: Vec<f64>,
    size: Vec<f64>,
    by_vertex: Vec<Vec<usize>>,
    blocked: Vec<bool>,
    floor: f64,
    /// Gain required to replace the incumbent.
    eps: f64,
    /// The objective only takes integer values.
    integral: bool,
    chosen: Vec<usize>,
    cur_obj: f64,
    cur_size: f64,
    best: Option<(f64, Vec<usize>)>,
    /// Objective value some feasible packing is known to reach. Subtrees that
    /// cannot reach it are pruned; the incumbent logic is unaffected.
    known: f64,
    /// Multipliers of the relaxed disjointness rows, one set for the
    /// objective bound and one for the size bound. They carry over from node
    /// to node as warm starts; any non-negative values give a valid bound.
    obj_multipliers: Multipliers,
    size_multipliers: Multipliers,
}

#[derive(Clone, Default)]
struct Multipliers {
    vertex: Vec<f64>,
    floor: f64,
}

/// Subgradient iterations spent at the root and at every other node.
const ROOT_ITERATIONS: usize = 300;
const NODE_ITERATIONS: usize = 25;

impl Packer {
    fn new(cycles: &[&ExchangeCycle], objective: &[f64], size: &[f64], floor: f64, eps: f64) -> Self {
        let mut ids: Vec<u32> = cycles
            .iter()
            .flat_map(|c| c.vertex_ids().iter().copied())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        let local: HashMap<u32, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();

        // Canonical cycle order drives the branching order.
        let mut order: Vec<usize> = (0..cycles.len()).collect();
        order.sort_by(|&a, &b| cycles[a].cmp(cycles[b]));

        let mut by_vertex = vec![Vec::new(); ids.len()];
        let verts: Vec<Vec<usize>> = cycles
            .iter()
            .map(|c| c.vertex_ids().iter().map(|id| local[id]).collect())
            .collect();
        for &c in &order {
            for &v in &verts[c] {
                by_vertex[v].push(c);
            }
        }
        let integral = objective.iter().all(|x| x.fract() == 0.0);
        let multipliers = Multipliers {
            vertex: vec![0.0; ids.len()],
            floor: 0.0,
        };
        Packer {
            verts,
            objective: objective.to_vec(),
            size: size.to_vec(),
            by_vertex,
            blocked: vec![false; ids.len()],
            floor,
            eps,
            integral,
            chosen: Vec::new(),
            cur_obj: 0.0,
            cur_size: 0.0,
            best: None,
            known: f64::NEG_INFINITY,
            obj_multipliers: multipliers.clone(),
            size_multipliers: multipliers,
        }
    }

    /// Returns indices (into the input slice) of the best packing, or `None`
    /// when no packing reaches the floor.
    fn solve(mut self) -> Option<Vec<usize>> {
        if self.floor <= 0.0 {
            self.seed_known();
        }
        self.search(true);
        self.best.map(|(_, mut chosen)| {
            chosen.sort_unstable();
            chosen
        })
    }

    /// Lets the search prune against `value`, which must be the objective of
    /// some packing meeting the floor.
    fn with_known(mut self, value: f64) -> Self {
        self.known = value;
        self
    }

    /// Sets `known` from greedy packings, first by objective and then by
    /// reduced cost under root multipliers.
    fn seed_known(&mut self) {
        let all: Vec<usize> = (0..self.verts.len()).collect();
        let mut known = self.greedy_packing(&self.objective);
        let mut multipliers = self.obj_multipliers.clone();
        for _ in 0..ROOT_ITERATIONS / 10 {
            let bound = self.lagrangian(&all, &self.objective, 0.0, known, &mut multipliers, 10);
            let reduced: Vec<f64> = all
                .iter()
                .map(|&c| self.objective[c] - self.verts[c].iter().map(|&v| multipliers.vertex[v]).sum::<f64>())
                .collect();
            known = known.max(self.greedy_packing(&reduced));
            if bound < known + 1.0 {
                break;
            }
        }
        self.obj_multipliers = multipliers;
        self.known = known;
    }

    /// Objective of the packing built by taking cycles in descending `key`
    /// order whenever they are disjoint from those already taken.
    fn greedy_packing(&self, key: &[f64]) -> f64 {
        let mut order: Vec<usize> = (0..self.verts.len()).collect();
        order.sort_by(|&a, &b| key[b].total_cmp(&key[a]).then(a.cmp(&b)));
        let mut used = vec![false; self.blocked.len()];
        let mut total = 0.0;
        for c in order {
            if self.verts[c].iter().all(|&v| !used[v]) {
                for &v in &self.verts[c] {
                    used[v] = true;
                }
                total += self.objective[c];
            }
        }
        total
    }

    fn residual(&self, c: usize) -> bool {
        self.verts[c].iter().all(|&v| !self.blocked[v])
    }

    /// Greedy feasible solution `y` of the dual covering problem
    /// (`Σ_{v in c} y_v >= key_c` for every residual cycle): each cycle's
    /// slack goes onto its most contended vertex, then every `y_v` is lowered
    /// to what its cycles still require. Returns `Σ y`.
    fn greedy_dual(&self, residual: &[usize], degree: &[usize], key: &[f64], y: &mut [f64]) -> f64 {
        y.iter_mut().for_each(|x| *x = 0.0);
        for &c in residual {
            let covered: f64 = self.verts[c].iter().map(|&v| y[v]).sum();
            let slack = key[c] - covered;
            if slack > 0.0 {
                let &target = self.verts[c]
                    .iter()
                    .max_by(|&&a, &&b| degree[a].cmp(&degree[b]).then(b.cmp(&a)))
                    .expect("cycles are non-empty");
                y[target] += slack;
            }
        }
        for v in 0..y.len() {
            if y[v] == 0.0 {
                continue;
            }
            let mut required = 0.0f64;
            for &c in &self.by_vertex[v] {
                if !self.residual(c) {
                    continue;
                }
                let others: f64 = self.verts[c].iter().filter(|&&u| u != v).map(|&u| y[u]).sum();
                required = required.max(key[c] - others);
            }
            y[v] = required.max(0.0);
        }
        y.iter().sum()
    }

    /// Lagrangian bound on `max Σ key_c x_c` over the residual cycles, with
    /// the disjointness rows and (when `need > 0`) the row
    /// `Σ size_c x_c >= need` moved into the objective. Runs subgradient
    /// steps aimed at `target` and returns the smallest bound seen, stopping
    /// early once it is at or below `target`.
    fn lagrangian(
        &self,
        residual: &[usize],
        key: &[f64],
        need: f64,
        target: f64,
        multipliers: &mut Multipliers,
        iterations: usize,
    ) -> f64 {
        let n = self.blocked.len();
        let mut grad = vec![0.0; n];
        let mut best = f64::INFINITY;
        let mut theta = 1.0;
        let mut stall = 0;
        let relax_floor = need > 0.0;
        if !relax_floor {
            multipliers.floor = 0.0;
        }
        for _ in 0..iterations {
            let lambda = &multipliers.vertex;
            let mu = multipliers.floor;
            let mut value = -mu * need;
            for v in 0..n {
                if self.blocked[v] {
                    grad[v] = 0.0;
                } else {
                    value += lambda[v];
                    grad[v] = 1.0;
                }
            }
            let mut grad_mu = -need;
            for &c in residual {
                let reduced = key[c] + mu * self.size[c] - self.verts[c].iter().map(|&v| lambda[v]).sum::<f64>();
                if reduced > 0.0 {
                    value += reduced;
                    grad_mu += self.size[c];
                    for &v in &self.verts[c] {
                        grad[v] -= 1.0;
                    }
                }
            }
            if value < best {
                best = value;
                stall = 0;
            } else {
                stall += 1;
                if stall >= 3 {
                    theta *= 0.5;
                    stall = 0;
                }
            }
            if best <= target {
                break;
            }
            let mut norm: f64 = grad.iter().map(|g| g * g).sum();
            if relax_floor {
                norm += grad_mu * grad_mu;
            }
            if norm == 0.0 {
                break;
            }
            let step = theta * (value - target) / norm;
            for v in 0..n {
                multipliers.vertex[v] = (multipliers.vertex[v] - step * grad[v]).max(0.0);
            }
            if relax_floor {
                multipliers.floor = (multipliers.floor - step * grad_mu).max(0.0);
            }
        }
        best
    }

    fn search(&mut self, root: bool) {
        let residual: Vec<usize> = (0..self.verts.len()).filter(|&c| self.residual(c)).collect();
        if residual.is_empty() {
            self.offer();
            return;
        }
        let mut degree = vec![0usize; self.blocked.len()];
        for &c in &residual {
            for &v in &self.verts[c] {
                degree[v] += 1;
            }
        }
        let iterations = if root { ROOT_ITERATIONS } else { NODE_ITERATIONS };
        let need = self.floor - self.cur_size;
        let mut y = vec![0.0; self.blocked.len()];

        // Prune once no completion can beat the incumbent or reach `known`.
        let tolerance = if self.integral { 1e-6 } else { self.eps };
        let mut cutoff = self.known - self.cur_obj - tolerance;
        if let Some((best, _)) = &self.best {
            let beat = if self.integral { best + 1.0 } else { best + self.eps };
            cutoff = cutoff.max(beat - self.cur_obj - tolerance);
        }
        if cutoff.is_finite() {
            let greedy = self.greedy_dual(&residual, &degree, &self.objective, &mut y);
            if need <= 0.0 && greedy <= cutoff {
                return;
            }
            if root && self.obj_multipliers.vertex.iter().all(|&x| x == 0.0) {
                self.obj_multipliers.vertex.copy_from_slice(&y);
            }
            let mut multipliers = std::mem::take(&mut self.obj_multipliers);
            let bound = self.lagrangian(&residual, &self.objective, need, cutoff, &mut multipliers, iterations);
            self.obj_multipliers = multipliers;
            if bound <= cutoff {
                return;
            }
        }
        if need > 0.0 {
            // Prune once the floor is out of reach.
            let cutoff = need - 1.0 + 1e-6;
            let greedy = self.greedy_dual(&residual, &degree, &self.size, &mut y);
            if greedy <= cutoff {
                return;
            }
            if root {
                self.size_multipliers.vertex.copy_from_slice(&y);
            }
            let mut multipliers = std::mem::take(&mut self.size_multipliers);
            let bound = self.lagrangian(&residual, &self.size, 0.0, cutoff, &mut multipliers, iterations);
            self.size_multipliers = multipliers;
            if bound <= cutoff {
                return;
            }
        }

        // Branch on the vertex in the most residual cycles, lowest id on ties.
        let v = (0..degree.len())
            .max_by(|&a, &b| degree[a].cmp(&degree[b]).then(b.cmp(&a)))
            .expect("residual cycles have vertices");
        let through_v: Vec<usize> = self.by_vertex[v]
            .iter()
            .copied()
            .filter(|&c| self.residual(c))
            .collect();
        for c in through_v {
            for i in 0..self.verts[c].len() {
                let u = self.verts[c][i];
                self.blocked[u] = true;
            }
            self.chosen.push(c);
            self.cur_obj += self.objective[c];
            self.cur_size += self.size[c];
            self.search(false);
            self.cur_size -= self.size[c];
            self.cur_obj -= self.objective[c];
            self.chosen.pop();
            for i in 0..self.verts[c].len() {
                let u = self.verts[c][i];
                self.blocked[u] = false;
            }
        }
        self.blocked[v] = true;
        self.search(false);
        self.blocked[v] = false;
    }

    fn offer(&mut self) {
        if self.cur_size < self.floor - 1e-9 {
            return;
        }
        let better = match &self.best {
            None => true,
            Some((best, _)) => self.cur_obj > best + self.eps,
        };
        if better {
            self.best = Some((self.cur_obj, self.chosen.clone()));
        }
    }
}
