//! Daily kidney-exchange pool simulation.
//!
//! Each day: pairs arrive and edges to the existing pool are drawn; waiting
//! pairs may depart; yesterday's matches execute or fail; the matcher clears
//! the waiting pool and its selection becomes pending until tomorrow.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::clearing::{clear, Mode};
use crate::cycles::ExchangeCycle;
use crate::error::{Error, Result};
use crate::graph::{blood_compatible, check_probability, BloodClass, BloodType, CompatibilityGraph, Profile, Vertex};
use crate::weights::WeightVector;

fn default_days() -> usize {
    1825
}
fn default_arrival_rate() -> f64 {
    1.0
}
fn default_departure_prob() -> f64 {
    0.005
}
fn default_execution_prob() -> f64 {
    0.5
}
fn default_crossmatch() -> f64 {
    0.10
}
fn default_cycle_cap() -> usize {
    3
}

/// US population ABO frequencies.
pub fn default_blood_distribution() -> BTreeMap<BloodType, f64> {
    BTreeMap::from([
        (BloodType::O, 0.44),
        (BloodType::A, 0.42),
        (BloodType::B, 0.10),
        (BloodType::AB, 0.04),
    ])
}

pub fn uniform_profile_distribution() -> BTreeMap<Profile, f64> {
    Profile::ALL.into_iter().map(|p| (p, 0.125)).collect()
}

fn default_weights() -> WeightVector {
    WeightVector::standard()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_days")]
    pub days: usize,
    /// Expected pair arrivals per day (Poisson).
    #[serde(default = "default_arrival_rate")]
    pub arrival_rate: f64,
    /// Per-day departure probability of each waiting pair.
    #[serde(default = "default_departure_prob")]
    pub departure_prob: f64,
    /// Probability that a formed match goes to transplant.
    #[serde(default = "default_execution_prob")]
    pub execution_prob: f64,
    #[serde(default = "default_crossmatch")]
    pub crossmatch_positive_prob: f64,
    #[serde(default = "default_cycle_cap")]
    pub cycle_cap: usize,
    #[serde(default)]
    pub chain_cap: usize,
    /// Expected altruist arrivals per day (Poisson).
    #[serde(default)]
    pub altruist_rate: f64,
    #[serde(default = "default_blood_distribution")]
    pub blood_type_distribution: BTreeMap<BloodType, f64>,
    /// Donor blood types, when they differ from `blood_type_distribution`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub donor_blood_type_distribution: Option<BTreeMap<BloodType, f64>>,
    #[serde(default = "uniform_profile_distribution")]
    pub profile_distribution: BTreeMap<Profile, f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_weights")]
    pub weights: WeightVector,
    #[serde(default = "default_mode")]
    pub mode: Mode,
}

fn default_mode() -> Mode {
    Mode::Standard
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            days: default_days(),
            arrival_rate: default_arrival_rate(),
            departure_prob: default_departure_prob(),
            execution_prob: default_execution_prob(),
            crossmatch_positive_prob: default_crossmatch(),
            cycle_cap: default_cycle_cap(),
            chain_cap: 0,
            altruist_rate: 0.0,
            blood_type_distribution: default_blood_distribution(),
            donor_blood_type_distribution: None,
            profile_distribution: uniform_profile_distribution(),
            seed: 0,
            weights: default_weights(),
            mode: Mode::Standard,
        }
    }
}

impl SimulationConfig {
    pub fn donor_distribution(&self) -> &BTreeMap<BloodType, f64> {
        self.donor_blood_type_distribution
            .as_ref()
            .unwrap_or(&self.blood_type_distribution)
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("departure_prob", self.departure_prob)?;
        check_probability("execution_prob", self.execution_prob)?;
        check_probability("crossmatch_positive_prob", self.crossmatch_positive_prob)?;
        for (name, rate) in [("arrival_rate", self.arrival_rate), ("altruist_rate", self.altruist_rate)] {
            if !(rate >= 0.0 && rate.is_finite()) {
                return Err(Error::param(format!("{name} must be a finite non-negative rate")));
            }
        }
        if self.cycle_cap < 2 {
            return Err(Error::param("cycle_cap must be at least 2"));
        }
        check_distribution("blood_type_distribution", self.blood_type_distribution.values())?;
        if let Some(donors) = &self.donor_blood_type_distribution {
            check_distribution("donor_blood_type_distribution", donors.values())?;
        }
        check_distribution("profile_distribution", self.profile_distribution.values())?;

        // Pairs are redrawn while they could transplant directly; some
        // combination must be able to enter the pool.
        let enter: f64 = self
            .blood_type_distribution
            .iter()
            .flat_map(|(&patient, &pp)| {
                self.donor_distribution().iter().map(move |(&donor, &pd)| {
                    let stay = if blood_compatible(donor, patient) {
                        self.crossmatch_positive_prob
                    } else {
                        1.0
                    };
                    pp * pd * stay
                })
            })
            .sum();
        if self.arrival_rate > 0.0 && enter <= 0.0 {
            return Err(Error::param("every generated pair would be directly compatible"));
        }
        Ok(())
    }
}

fn check_distribution<'a>(name: &str, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    let mut total = 0.0;
    for &v in values {
        check_probability(name, v)?;
        total += v;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::param(format!("{name} sums to {total}, not 1")));
    }
    Ok(())
}

/// Stream ids, one per source of randomness.
mod stream {
    pub const ARRIVALS: u64 = 1;
    pub const ATTRIBUTES: u64 = 2;
    pub const CROSSMATCH: u64 = 3;
    pub const DEPARTURE: u64 = 4;
    pub const EXECUTION: u64 = 5;
}

/// Uniform draws addressed by a `(a, b)` key rather than by consumption
/// order, so two runs that diverge still share every keyed draw.
#[derive(Debug, Clone)]
pub struct KeyedStream {
    rng: ChaCha8Rng,
}

impl KeyedStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        KeyedStream { rng }
    }

    pub fn uniform(&mut self, a: u32, b: u32) -> f64 {
        let key = (u128::from(a) << 32) | u128::from(b);
        // Two 32-bit words per f64 draw.
        self.rng.set_word_pos(key * 2);
        self.rng.random::<f64>()
    }
}

/// The independent random sources of one run.
#[derive(Debug, Clone)]
pub struct Streams {
    pub arrivals: ChaCha8Rng,
    pub attributes: ChaCha8Rng,
    pub crossmatch: KeyedStream,
    pub departure: KeyedStream,
    pub execution: KeyedStream,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let sequential = |id| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        Streams {
            arrivals: sequential(stream::ARRIVALS),
            attributes: sequential(stream::ATTRIBUTES),
            crossmatch: KeyedStream::new(seed, stream::CROSSMATCH),
            departure: KeyedStream::new(seed, stream::DEPARTURE),
            execution: KeyedStream::new(seed, stream::EXECUTION),
        }
    }
}

/// Draws an incompatible pair: blood types and profile from the configured
/// distributions, redrawn while the pair's own donor could give directly.
pub fn generate_pair<R: Rng + ?Sized>(rng: &mut R, config: &SimulationConfig, id: u32) -> Result<Vertex> {
    let (patient_types, patient_dist) = weighted(&config.blood_type_distribution)?;
    let (donor_types, donor_dist) = weighted(config.donor_distribution())?;
    let (profiles, profile_dist) = weighted(&config.profile_distribution)?;
    loop {
        let patient = patient_types[patient_dist.sample(rng)];
        let donor = donor_types[donor_dist.sample(rng)];
        let profile = profiles[profile_dist.sample(rng)];
        let crossmatch: f64 = rng.random();
        let direct = blood_compatible(donor, patient) && crossmatch >= config.crossmatch_positive_prob;
        if !direct {
            return Ok(Vertex::pair(id, donor, patient, profile));
        }
    }
}

fn generate_altruist<R: Rng + ?Sized>(rng: &mut R, config: &SimulationConfig, id: u32) -> Result<Vertex> {
    let (types, blood) = weighted(config.donor_distribution())?;
    Ok(Vertex::altruist(id, types[blood.sample(rng)]))
}

fn weighted<K: Copy>(dist: &BTreeMap<K, f64>) -> Result<(Vec<K>, WeightedIndex<f64>)> {
    let keys: Vec<K> = dist.keys().copied().collect();
    let index = WeightedIndex::new(dist.values().copied())
        .map_err(|e| Error::param(format!("bad distribution: {e}")))?;
    Ok((keys, index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Waiting,
    Pending,
    Matched,
    Departed,
}

/// Per (profile, blood class) counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CellCounts {
    pub entered: u64,
    pub matched: u64,
    pub departed: u64,
    pub waiting: u64,
    pub pending: u64,
}

/// One simulated day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DayRecord {
    pub day: usize,
    /// Waiting vertices offered to the matcher.
    pub pool_size: usize,
    /// Maximum number of patients matchable in that pool.
    pub q: usize,
    /// Patients in the matching the configured mode selected.
    pub matched_today: usize,
    /// Patients transplanted from yesterday's matches.
    pub executed_today: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub mode: Mode,
    pub cells: [[CellCounts; 4]; 8],
    pub days: Vec<DayRecord>,
    pub altruists_entered: u64,
}

impl RunMetrics {
    fn new(mode: Mode) -> Self {
        RunMetrics {
            mode,
            cells: [[CellCounts::default(); 4]; 8],
            days: Vec::new(),
            altruists_entered: 0,
        }
    }

    pub fn cell(&self, profile: Profile, class: BloodClass) -> &CellCounts {
        &self.cells[profile.index()][class.index()]
    }

    fn cell_mut(&mut self, profile: Profile, class: BloodClass) -> &mut CellCounts {
        &mut self.cells[profile.index()][class.index()]
    }

    fn totals(&self, filter: impl Fn(Profile, BloodClass) -> bool) -> CellCounts {
        let mut sum = CellCounts::default();
        for p in Profile::ALL {
            for c in BloodClass::ALL {
                if filter(p, c) {
                    let x = self.cell(p, c);
                    sum.entered += x.entered;
                    sum.matched += x.matched;
                    sum.departed += x.departed;
                    sum.waiting += x.waiting;
                    sum.pending += x.pending;
                }
            }
        }
        sum
    }

    pub fn overall(&self) -> CellCounts {
        self.totals(|_, _| true)
    }

    pub fn profile_totals(&self, profile: Profile) -> CellCounts {
        self.totals(|p, _| p == profile)
    }

    /// Matched / entered, or `None` when nothing entered.
    pub fn proportion(&self, filter: impl Fn(Profile, BloodClass) -> bool) -> Option<f64> {
        let t = self.totals(filter);
        (t.entered > 0).then(|| t.matched as f64 / t.entered as f64)
    }

    /// Checks `entered = matched + departed + waiting + pending` in every cell.
    pub fn check_conservation(&self) -> Result<()> {
        for p in Profile::ALL {
            for c in BloodClass::ALL {
                let x = self.cell(p, c);
                if x.entered != x.matched + x.departed + x.waiting + x.pending {
                    return Err(Error::Internal(format!(
                        "conservation violated for profile {} class {c}: {x:?}",
                        p.id()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks that every day's selection matched the day's maximum.
    pub fn check_cardinality_floor(&self) -> Result<()> {
        match self.days.iter().find(|d| d.matched_today != d.q) {
            Some(d) => Err(Error::Internal(format!(
                "day {}: matched {} patients but {} were matchable",
                d.day, d.matched_today, d.q
            ))),
            None => Ok(()),
        }
    }
}

/// Mutable state of one run.
#[derive(Debug, Clone)]
pub struct PoolState {
    day: usize,
    next_id: u32,
    vertices: HashMap<u32, Vertex>,
    status: HashMap<u32, Status>,
    out: HashMap<u32, HashSet<u32>>,
    pending: Vec<ExchangeCycle>,
    metrics: RunMetrics,
}

impl PoolState {
    pub fn new(mode: Mode) -> Self {
        PoolState {
            day: 0,
            next_id: 0,
            vertices: HashMap::new(),
            status: HashMap::new(),
            out: HashMap::new(),
            pending: Vec::new(),
            metrics: RunMetrics::new(mode),
        }
    }

    /// Seeds the pool with an existing graph; its vertices count as entered.
    pub fn from_graph(graph: &CompatibilityGraph, mode: Mode) -> Self {
        let mut state = PoolState::new(mode);
        for v in graph.vertices() {
            state.admit(*v);
        }
        for (from, to) in graph.edges() {
            state.out.entry(from).or_default().insert(to);
        }
        state.next_id = graph.vertices().iter().map(|v| v.id + 1).max().unwrap_or(0);
        state
    }

    pub fn day(&self) -> usize {
        self.day
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    pub fn waiting_ids(&self) -> Vec<u32> {
        self.ids_with(Status::Waiting)
    }

    pub fn pending_cycles(&self) -> &[ExchangeCycle] {
        &self.pending
    }

    fn ids_with(&self, status: Status) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .status
            .iter()
            .filter(|(_, &s)| s == status)
            .map(|(&id, _)| id)
            .collect();
        ids.sort_unstable();
        ids
    }

    fn admit(&mut self, v: Vertex) {
        self.vertices.insert(v.id, v);
        self.status.insert(v.id, Status::Waiting);
        match (v.profile(), v.blood_class()) {
            (Some(p), Some(c)) => self.metrics.cell_mut(p, c).entered += 1,
            _ => self.metrics.altruists_entered += 1,
        }
    }

    fn set_status(&mut self, id: u32, status: Status) {
        self.status.insert(id, status);
        if matches!(status, Status::Matched | Status::Departed) {
            self.out.remove(&id);
            let v = self.vertices[&id];
            if let (Some(p), Some(c)) = (v.profile(), v.blood_class()) {
                let cell = self.metrics.cell_mut(p, c);
                match status {
                    Status::Matched => cell.matched += 1,
                    _ => cell.departed += 1,
                }
            }
        }
    }

    fn alive(&self, id: u32) -> bool {
        matches!(self.status.get(&id), Some(Status::Waiting | Status::Pending))
    }

    /// Adds a vertex and draws its edges to and from every live vertex.
    fn arrive(&mut self, v: Vertex, crossmatch: &mut KeyedStream, config: &SimulationConfig) {
        let mut live: Vec<u32> = self.vertices.keys().copied().filter(|&id| self.alive(id)).collect();
        live.sort_unstable();
        self.admit(v);
        let mut accept = |src: &Vertex, dst: &Vertex| {
            src.can_give_to(dst)
                && (dst.is_altruist() || crossmatch.uniform(src.id, dst.id) >= config.crossmatch_positive_prob)
        };
        let mut outgoing = HashSet::new();
        for id in live {
            let other = self.vertices[&id];
            if accept(&v, &other) {
                outgoing.insert(id);
            }
            if accept(&other, &v) {
                self.out.entry(id).or_default().insert(v.id);
            }
        }
        self.out.insert(v.id, outgoing);
    }

    /// The waiting pool as a compatibility graph.
    pub fn waiting_graph(&self) -> CompatibilityGraph {
        let vertices = self.waiting_ids().into_iter().map(|id| self.vertices[&id]).collect();
        CompatibilityGraph::build_with(vertices, |u, v| {
            self.out.get(&u.id).is_some_and(|s| s.contains(&v.id))
        })
        .expect("pool ids are unique")
    }

    fn finish(mut self) -> RunMetrics {
        for p in Profile::ALL {
            for c in BloodClass::ALL {
                let cell = self.metrics.cell_mut(p, c);
                cell.waiting = 0;
                cell.pending = 0;
            }
        }
        let snapshot: Vec<(Vertex, Status)> = self
            .status
            .iter()
            .map(|(id, &s)| (self.vertices[id], s))
            .collect();
        for (v, s) in snapshot {
            if let (Some(p), Some(c)) = (v.profile(), v.blood_class()) {
                let cell = self.metrics.cell_mut(p, c);
                match s {
                    Status::Waiting => cell.waiting += 1,
                    Status::Pending => cell.pending += 1,
                    _ => {}
                }
            }
        }
        self.metrics
    }

    /// Current metrics with waiting/pending counts filled in.
    pub fn snapshot(&self) -> RunMetrics {
        self.clone().finish()
    }
}

/// Advances the pool by one day.
pub fn step_day(state: &mut PoolState, streams: &mut Streams, config: &SimulationConfig) -> Result<()> {
    let day = state.day;
    let day_key = u32::try_from(day).map_err(|_| Error::param("horizon too long"))?;

    // 1. Arrivals.
    let pairs = poisson(&mut streams.arrivals, config.arrival_rate)?;
    let altruists = poisson(&mut streams.arrivals, config.altruist_rate)?;
    for _ in 0..pairs {
        let v = generate_pair(&mut streams.attributes, config, state.next_id)?;
        state.next_id += 1;
        state.arrive(v, &mut streams.crossmatch, config);
    }
    for _ in 0..altruists {
        let v = generate_altruist(&mut streams.attributes, config, state.next_id)?;
        state.next_id += 1;
        state.arrive(v, &mut streams.crossmatch, config);
    }

    // 2. Departures of waiting vertices; pending ones are committed.
    for id in state.waiting_ids() {
        if streams.departure.uniform(id, day_key) < config.departure_prob {
            state.set_status(id, Status::Departed);
        }
    }

    // 3. Yesterday's matches execute or fall back into the pool.
    let mut executed = 0;
    for cycle in std::mem::take(&mut state.pending) {
        let outcome = if streams.execution.uniform(day_key, cycle.vertex_ids()[0]) < config.execution_prob {
            executed += cycle.pair_count();
            Status::Matched
        } else {
            Status::Waiting
        };
        for &id in cycle.vertex_ids() {
            state.set_status(id, outcome);
        }
    }

    // 4. Clear the waiting pool.
    let graph = state.waiting_graph();
    let result = clear(
        &graph,
        config.cycle_cap,
        config.chain_cap,
        config.weights.weights(),
        config.mode,
    )?;
    let selected = result.selected().clone();
    for &id in selected.vertex_ids().iter() {
        state.set_status(id, Status::Pending);
    }
    state.metrics.days.push(DayRecord {
        day,
        pool_size: graph.len(),
        q: result.q,
        matched_today: selected.pair_count(),
        executed_today: executed,
    });
    state.pending = selected.cycles().to_vec();
    state.day += 1;
    Ok(())
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> Result<u64> {
    if rate == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(rate).map_err(|e| Error::param(format!("bad Poisson rate {rate}: {e}")))?;
    Ok(dist.sample(rng) as u64)
}

/// Runs `config.days` days from an empty pool.
pub fn run_simulation(config: &SimulationConfig) -> Result<RunMetrics> {
    config.validate()?;
    let mut state = PoolState::new(config.mode);
    let mut streams = Streams::new(config.seed);
    for _ in 0..config.days {
        step_day(&mut state, &mut streams, config)?;
    }
    Ok(state.finish())
}
