//! Multi-objective search over scenario configurations: seeded random
//! initialization, single-gene mutation, single-point crossover,
//! three-objective fitness from simulation records, non-dominated sorting
//! with crowding distance, elitist selection, and a stagnation-triggered
//! restart that remembers every configuration ever generated.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{box_distance, boxes_collide, OrientedBox};
use crate::record::{Outcome, SimulationRecord};
use crate::rng::SimRng;
use crate::road::{Point, RoadModel};
use crate::{VEHICLE_LENGTH, VEHICLE_WIDTH};

/// Minimum box-to-box separation between spawned vehicles.
pub const SPAWN_MARGIN: f64 = 5.0;

/// Default scenario frame budget (50 simulated seconds).
pub const DEFAULT_MAX_FRAMES: u32 = 500;

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("could not place vehicles after {0} attempts (overcrowded bubble)")]
    Placement(usize),
    #[error("mutation failed to produce a valid config")]
    Mutation,
    #[error("crossover failed to produce valid children")]
    Crossover,
    #[error("record has no frames")]
    EmptyRecord,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weather {
    pub rain: f64,
    pub fog: f64,
    pub wetness: f64,
    pub cloudness: f64,
    pub time: u8,
}

/// The search individual: EGO start/destination, NPC start positions,
/// weather genes (carried and searched but physically inert in this
/// simulator), and the frame budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub ego_start: Point,
    pub ego_destination: Point,
    pub npc_starts: Vec<Point>,
    pub weather: Weather,
    pub max_frames: u32,
}

fn spawn_box(p: Point) -> OrientedBox {
    OrientedBox::new(p, 0.0, VEHICLE_LENGTH, VEHICLE_WIDTH)
}

impl ScenarioConfig {
    /// All spawn points in a stable order: EGO first, then NPCs.
    fn spawn_points(&self) -> Vec<Point> {
        let mut pts = vec![self.ego_start];
        pts.extend(self.npc_starts.iter().copied());
        pts
    }

    pub fn validate(&self, road: &RoadModel) -> Result<(), SearchError> {
        let half_len = VEHICLE_LENGTH / 2.0;
        let invalid = |msg: String| Err(SearchError::InvalidConfig(msg));
        if self.ego_start.s + half_len > road.bubble_offset() {
            return invalid("EGO must start before the bubble".into());
        }
        if self.ego_destination.s - half_len < road.bubble_end() {
            return invalid("destination must lie beyond the bubble".into());
        }
        if self.ego_destination.s > road.road_length() {
            return invalid("destination beyond road end".into());
        }
        for (k, p) in self.npc_starts.iter().enumerate() {
            if p.s - half_len < road.bubble_offset() || p.s + half_len > road.bubble_end() {
                return invalid(format!("NPC {k} outside the bubble"));
            }
        }
        for p in self.spawn_points() {
            if !p.is_finite() || p.d < 0.0 || p.d > road.road_width() {
                return invalid("spawn point outside the road".into());
            }
        }
        let pts = self.spawn_points();
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let (a, b) = (spawn_box(pts[i]), spawn_box(pts[j]));
                if boxes_collide(&a, &b) || box_distance(&a, &b) < SPAWN_MARGIN {
                    return invalid(format!("spawn boxes {i} and {j} too close"));
                }
            }
        }
        let w = &self.weather;
        for (name, v) in [("rain", w.rain), ("fog", w.fog), ("wetness", w.wetness), ("cloudness", w.cloudness)] {
            if !(0.0..=1.0).contains(&v) {
                return invalid(format!("weather.{name} out of [0, 1]"));
            }
        }
        if w.time > 24 {
            return invalid("weather.time out of [0, 24]".into());
        }
        if self.max_frames == 0 {
            return invalid("max_frames must be positive".into());
        }
        Ok(())
    }

    /// Canonical fingerprint with positions quantized to 1 m, weather to
    /// 0.05, and time exact, so "same configuration" is meaningful over
    /// continuous genes.
    pub fn fingerprint(&self) -> String {
        let q = |v: f64| v.round() as i64;
        let qw = |v: f64| (v / 0.05).round() as i64;
        let mut out = format!(
            "E:{},{}|D:{},{}|N:",
            q(self.ego_start.s),
            q(self.ego_start.d),
            q(self.ego_destination.s),
            q(self.ego_destination.d)
        );
        for (i, p) in self.npc_starts.iter().enumerate() {
            if i > 0 {
                out.push(';');
            }
            out.push_str(&format!("{},{}", q(p.s), q(p.d)));
        }
        out.push_str(&format!(
            "|W:{},{},{},{},{}",
            qw(self.weather.rain),
            qw(self.weather.fog),
            qw(self.weather.wetness),
            qw(self.weather.cloudness),
            self.weather.time
        ));
        out
    }
}

// ---------------------------------------------------------------------------
// Gene sampling
// ---------------------------------------------------------------------------

fn random_lane_point(road: &RoadModel, s_lo: f64, s_hi: f64, rng: &mut SimRng) -> Point {
    let lane = rng.range_usize(road.lane_count());
    Point::new(rng.range_f64(s_lo, s_hi), road.centerline(lane))
}

fn sample_ego_start(road: &RoadModel, rng: &mut SimRng) -> Point {
    let half_len = VEHICLE_LENGTH / 2.0;
    random_lane_point(road, half_len, road.bubble_offset() - half_len, rng)
}

fn sample_destination(road: &RoadModel, rng: &mut SimRng) -> Point {
    let half_len = VEHICLE_LENGTH / 2.0;
    random_lane_point(road, road.bubble_end() + half_len, road.road_length() - half_len, rng)
}

fn sample_npc_start(road: &RoadModel, rng: &mut SimRng) -> Point {
    let half_len = VEHICLE_LENGTH / 2.0;
    random_lane_point(road, road.bubble_offset() + half_len, road.bubble_end() - half_len, rng)
}

fn sample_weather(rng: &mut SimRng) -> Weather {
    Weather {
        rain: rng.next_f64(),
        fog: rng.next_f64(),
        wetness: rng.next_f64(),
        cloudness: rng.next_f64(),
        time: rng.range_i64_inclusive(0, 24) as u8,
    }
}

/// Randomly initialize a configuration. The NPC count matches the lane
/// count; every NPC spawns inside the bubble with pairwise spawn margins.
pub fn random_config(road: &RoadModel, rng: &mut SimRng) -> Result<ScenarioConfig, SearchError> {
    let mut placed: Vec<Point> = Vec::new();
    let ego_start = sample_ego_start(road, rng);
    placed.push(ego_start);
    for _ in 0..road.lane_count() {
        let mut ok = None;
        for _ in 0..100 {
            let cand = sample_npc_start(road, rng);
            let fits = placed.iter().all(|p| {
                box_distance(&spawn_box(*p), &spawn_box(cand)) >= SPAWN_MARGIN
            });
            if fits {
                ok = Some(cand);
                break;
            }
        }
        match ok {
            Some(p) => placed.push(p),
            None => return Err(SearchError::Placement(100)),
        }
    }
    let config = ScenarioConfig {
        ego_start,
        ego_destination: sample_destination(road, rng),
        npc_starts: placed[1..].to_vec(),
        weather: sample_weather(rng),
        max_frames: DEFAULT_MAX_FRAMES,
    };
    config.validate(road).map_err(|_| SearchError::Placement(100))?;
    Ok(config)
}

// ---------------------------------------------------------------------------
// Mutation and crossover
// ---------------------------------------------------------------------------

fn gene_count(chromosome: usize, config: &ScenarioConfig) -> usize {
    match chromosome {
        0 => 2,
        1 => config.npc_starts.len(),
        _ => 5,
    }
}

fn resample_gene(
    config: &mut ScenarioConfig,
    chromosome: usize,
    gene: usize,
    road: &RoadModel,
    rng: &mut SimRng,
) {
    match (chromosome, gene) {
        (0, 0) => config.ego_start = sample_ego_start(road, rng),
        (0, _) => config.ego_destination = sample_destination(road, rng),
        (1, k) => config.npc_starts[k] = sample_npc_start(road, rng),
        (_, 0) => config.weather.rain = rng.next_f64(),
        (_, 1) => config.weather.fog = rng.next_f64(),
        (_, 2) => config.weather.wetness = rng.next_f64(),
        (_, 3) => config.weather.cloudness = rng.next_f64(),
        (_, _) => config.weather.time = rng.range_i64_inclusive(0, 24) as u8,
    }
}

/// Mutate exactly one gene of one uniformly chosen chromosome, resampling
/// until the result is valid and actually differs from the parent.
pub fn mutate(
    config: &ScenarioConfig,
    road: &RoadModel,
    rng: &mut SimRng,
) -> Result<ScenarioConfig, SearchError> {
    let chromosome = rng.range_usize(3);
    let gene = rng.range_usize(gene_count(chromosome, config));
    for _ in 0..100 {
        let mut child = config.clone();
        resample_gene(&mut child, chromosome, gene, road, rng);
        if child != *config && child.validate(road).is_ok() {
            return Ok(child);
        }
    }
    Err(SearchError::Mutation)
}

fn swap_tail(a: &mut ScenarioConfig, b: &mut ScenarioConfig, chromosome: usize, cut: usize) {
    match chromosome {
        0 => {
            if cut == 0 {
                std::mem::swap(&mut a.ego_start, &mut b.ego_start);
            }
            std::mem::swap(&mut a.ego_destination, &mut b.ego_destination);
        }
        1 => {
            for k in cut..a.npc_starts.len().min(b.npc_starts.len()) {
                std::mem::swap(&mut a.npc_starts[k], &mut b.npc_starts[k]);
            }
        }
        _ => {
            let wa = &mut a.weather;
            let wb = &mut b.weather;
            if cut == 0 {
                std::mem::swap(&mut wa.rain, &mut wb.rain);
            }
            if cut <= 1 {
                std::mem::swap(&mut wa.fog, &mut wb.fog);
            }
            if cut <= 2 {
                std::mem::swap(&mut wa.wetness, &mut wb.wetness);
            }
            if cut <= 3 {
                std::mem::swap(&mut wa.cloudness, &mut wb.cloudness);
            }
            std::mem::swap(&mut wa.time, &mut wb.time);
        }
    }
}

/// Single-point crossover: one chromosome is chosen uniformly, a cut point
/// inside it is drawn, and the gene tails are exchanged between the two
/// parents. The per-chromosome gene multiset is preserved across the pair;
/// invalid offspring are repaired by redrawing the cut.
pub fn crossover(
    a: &ScenarioConfig,
    b: &ScenarioConfig,
    road: &RoadModel,
    rng: &mut SimRng,
) -> Result<(ScenarioConfig, ScenarioConfig), SearchError> {
    for _ in 0..100 {
        let chromosome = rng.range_usize(3);
        let cut = rng.range_usize(gene_count(chromosome, a));
        let mut ca = a.clone();
        let mut cb = b.clone();
        swap_tail(&mut ca, &mut cb, chromosome, cut);
        if ca.validate(road).is_ok() && cb.validate(road).is_ok() {
            return Ok((ca, cb));
        }
    }
    Err(SearchError::Crossover)
}

// ---------------------------------------------------------------------------
// Fitness
// ---------------------------------------------------------------------------

/// Weights and the distance clamp for the inverse-distance objectives.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitnessParams {
    pub w1: f64,
    pub w2: f64,
    pub epsilon_m: f64,
}

impl Default for FitnessParams {
    fn default() -> Self {
        Self { w1: 1.0, w2: 1.0, epsilon_m: 0.1 }
    }
}

/// Three objectives, all maximized: final distance to destination,
/// inverse closest EGO-NPC approach, inverse closest illegal-line
/// approach. Larger means the scenario is closer to a violation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessVector {
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
}

impl FitnessVector {
    pub fn as_array(&self) -> [f64; 3] {
        [self.f1, self.f2, self.f3]
    }
}

pub fn evaluate_fitness(
    record: &SimulationRecord,
    config: &ScenarioConfig,
    road: &RoadModel,
) -> Result<FitnessVector, SearchError> {
    evaluate_fitness_with(record, config, road, &FitnessParams::default())
}

pub fn evaluate_fitness_with(
    record: &SimulationRecord,
    config: &ScenarioConfig,
    road: &RoadModel,
    params: &FitnessParams,
) -> Result<FitnessVector, SearchError> {
    if record.frames.is_empty() {
        return Err(SearchError::EmptyRecord);
    }
    let last = record.frames.len() - 1;
    let ego_final = record.ego_state_at(last).ok_or(SearchError::EmptyRecord)?;
    let f1 = ego_final.position.distance(&config.ego_destination);

    // Closest EGO-NPC approach over the trace. A collision-stopped record
    // ends before contact, so the collision itself pins the distance to 0.
    let mut d_c = if record.outcome == Outcome::CollisionStopped { 0.0 } else { f64::INFINITY };
    let npc_ids = record.npc_ids();
    let mut d_l = f64::INFINITY;
    for idx in 0..record.frames.len() {
        let ego = record.ego_state_at(idx).ok_or(SearchError::EmptyRecord)?;
        let ego_box = ego.bounding_box();
        for &id in &npc_ids {
            if let Some(npc) = record.state_at(idx, id) {
                d_c = d_c.min(box_distance(&ego_box, &npc.bounding_box()));
            }
        }
        d_l = d_l.min(road.distance_to_illegal_lines(&ego_box));
    }
    if !d_c.is_finite() {
        // No NPCs in the record (testing hook): treat as maximally distant.
        d_c = 1.0 / params.epsilon_m;
    }

    Ok(FitnessVector {
        f1,
        f2: params.w1 / d_c.max(params.epsilon_m),
        f3: params.w2 / d_l.max(params.epsilon_m),
    })
}

// ---------------------------------------------------------------------------
// Non-dominated sorting, crowding, selection
// ---------------------------------------------------------------------------

/// `a` dominates `b` iff it is at least as good on every objective and
/// strictly better on at least one (all objectives maximized).
pub fn dominates(a: &FitnessVector, b: &FitnessVector) -> bool {
    let (a, b) = (a.as_array(), b.as_array());
    let mut strictly = false;
    for i in 0..3 {
        if a[i] < b[i] {
            return false;
        }
        if a[i] > b[i] {
            strictly = true;
        }
    }
    strictly
}

/// Fast non-dominated sort; returns the Pareto rank of each individual
/// (rank 0 = non-dominated).
pub fn non_dominated_sort(fitness: &[FitnessVector]) -> Vec<usize> {
    let n = fitness.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut count = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if dominates(&fitness[i], &fitness[j]) {
                dominated_by[i].push(j);
            } else if dominates(&fitness[j], &fitness[i]) {
                count[i] += 1;
            }
        }
    }
    let mut ranks = vec![0usize; n];
    let mut front: Vec<usize> = (0..n).filter(|&i| count[i] == 0).collect();
    let mut rank = 0;
    while !front.is_empty() {
        let mut next = Vec::new();
        for &i in &front {
            ranks[i] = rank;
            for &j in &dominated_by[i] {
                count[j] -= 1;
                if count[j] == 0 {
                    next.push(j);
                }
            }
        }
        front = next;
        rank += 1;
    }
    ranks
}

/// Crowding distance within one front. Boundary individuals per objective
/// get +inf; interior individuals sum normalized neighbor gaps. Objectives
/// with zero range contribute nothing. Fronts of size <= 2 are all +inf.
pub fn crowding_distance(front: &[FitnessVector]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let mut dist = vec![0.0f64; n];
    for m in 0..3 {
        let mut order: Vec<usize> = (0..n).collect();
        // Stable tie handling: sort by objective value, then by index.
        order.sort_by(|&a, &b| {
            front[a].as_array()[m]
                .partial_cmp(&front[b].as_array()[m])
                .unwrap()
                .then(a.cmp(&b))
        });
        let lo = front[order[0]].as_array()[m];
        let hi = front[order[n - 1]].as_array()[m];
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        for k in 1..n - 1 {
            let prev = front[order[k - 1]].as_array()[m];
            let next = front[order[k + 1]].as_array()[m];
            dist[order[k]] += (next - prev) / range;
        }
    }
    dist
}

/// Rank and crowding for every individual of a mixed population.
pub fn rank_and_crowd(fitness: &[FitnessVector]) -> Vec<(usize, f64)> {
    let ranks = non_dominated_sort(fitness);
    let max_rank = ranks.iter().copied().max().unwrap_or(0);
    let mut out = vec![(0usize, 0.0f64); fitness.len()];
    for r in 0..=max_rank {
        let members: Vec<usize> = (0..fitness.len()).filter(|&i| ranks[i] == r).collect();
        let front: Vec<FitnessVector> = members.iter().map(|&i| fitness[i]).collect();
        let crowd = crowding_distance(&front);
        for (slot, &i) in members.iter().enumerate() {
            out[i] = (r, crowd[slot]);
        }
    }
    out
}

/// Pick the best `tau` individuals: ascending rank, ties broken by
/// descending crowding distance, then by index for determinism.
pub fn select_indices(fitness: &[FitnessVector], tau: usize) -> Vec<usize> {
    let rc = rank_and_crowd(fitness);
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| {
        rc[a].0
            .cmp(&rc[b].0)
            .then(rc[b].1.partial_cmp(&rc[a].1).unwrap())
            .then(a.cmp(&b))
    });
    order.truncate(tau);
    order
}

/// Stagnation test over per-generation best fitness (per-objective maxima).
/// True iff each of the last five generations failed to push any objective
/// above the best seen in all generations before it. The first entry is
/// the initial-population baseline.
pub fn check_restart(history: &[[f64; 3]]) -> bool {
    const WINDOW: usize = 5;
    if history.len() < WINDOW + 1 {
        return false;
    }
    let n = history.len();
    for t in (n - WINDOW)..n {
        let mut archive = [f64::NEG_INFINITY; 3];
        for h in &history[..t] {
            for i in 0..3 {
                archive[i] = archive[i].max(h[i]);
            }
        }
        if (0..3).any(|i| history[t][i] > archive[i]) {
            return false;
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Search state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSettings {
    pub tau: usize,
    pub offspring: usize,
    pub fitness: FitnessParams,
    pub restart_stagnation: usize,
    pub max_frames: u32,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            tau: 20,
            offspring: 20,
            fitness: FitnessParams::default(),
            restart_stagnation: 5,
            max_frames: DEFAULT_MAX_FRAMES,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluated {
    pub config: ScenarioConfig,
    pub fitness: FitnessVector,
    pub rank: usize,
    pub crowding: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GenerationSummary {
    pub generation: u32,
    pub best: [f64; 3],
    pub restart_triggered: bool,
}

/// Driver state for one search campaign. The caller owns scenario
/// execution: it asks for a batch of configs, evaluates them, and feeds
/// the (config, fitness) pairs back.
pub struct SearchState {
    road: RoadModel,
    settings: SearchSettings,
    rng: SimRng,
    generation: u32,
    population: Vec<Evaluated>,
    seen: HashSet<String>,
    history: Vec<[f64; 3]>,
    archive: [f64; 3],
    stagnation: usize,
    pending_restart: bool,
    restarts: u32,
}

impl SearchState {
    pub fn new(road: RoadModel, settings: SearchSettings, seed: u64) -> Self {
        Self {
            road,
            settings,
            rng: SimRng::derive(seed, 0xC0FFEE),
            generation: 0,
            population: Vec::new(),
            seen: HashSet::new(),
            history: Vec::new(),
            archive: [f64::NEG_INFINITY; 3],
            stagnation: 0,
            pending_restart: false,
            restarts: 0,
        }
    }

    pub fn generation(&self) -> u32 {
        self.generation
    }

    pub fn restarts(&self) -> u32 {
        self.restarts
    }

    pub fn population(&self) -> &[Evaluated] {
        &self.population
    }

    pub fn seen_fingerprints(&self) -> &HashSet<String> {
        &self.seen
    }

    fn fresh_unseen(&mut self) -> Result<ScenarioConfig, SearchError> {
        for _ in 0..200 {
            let cand = random_config(&self.road, &mut self.rng)?;
            if self.seen.insert(cand.fingerprint()) {
                return Ok(cand);
            }
        }
        Err(SearchError::Placement(200))
    }

    /// The next batch of configurations to execute: a fresh random
    /// population on generation 0 and after a restart, offspring
    /// otherwise. Every emitted config has a previously unseen
    /// fingerprint.
    pub fn next_batch(&mut self) -> Result<Vec<ScenarioConfig>, SearchError> {
        if self.population.is_empty() || self.pending_restart {
            if self.pending_restart {
                self.population.clear();
                self.pending_restart = false;
                self.restarts += 1;
            }
            let mut out = Vec::with_capacity(self.settings.tau);
            for _ in 0..self.settings.tau {
                out.push(self.fresh_unseen()?);
            }
            return Ok(out);
        }
        self.offspring_batch()
    }

    /// Mutation and crossover each produce half of the offspring. Parents
    /// are drawn uniformly from the current population; duplicates of
    /// previously generated configs are redrawn.
    fn offspring_batch(&mut self) -> Result<Vec<ScenarioConfig>, SearchError> {
        let want = self.settings.offspring;
        let mut out: Vec<ScenarioConfig> = Vec::with_capacity(want);
        let push_unseen = |cfg: ScenarioConfig, out: &mut Vec<ScenarioConfig>, seen: &mut HashSet<String>| {
            if seen.insert(cfg.fingerprint()) {
                out.push(cfg);
                true
            } else {
                false
            }
        };

        let half = want / 2;
        let mut guard = 0;
        while out.len() < half && guard < 1000 {
            guard += 1;
            let parent_idx = self.rng.range_usize(self.population.len());
            let parent = self.population[parent_idx].config.clone();
            if let Ok(child) = mutate(&parent, &self.road, &mut self.rng) {
                push_unseen(child, &mut out, &mut self.seen);
            }
        }
        let mut guard = 0;
        while out.len() < want && guard < 1000 {
            guard += 1;
            let ia = self.rng.range_usize(self.population.len());
            let ib = self.rng.range_usize(self.population.len());
            let (pa, pb) = (
                self.population[ia].config.clone(),
                self.population[ib].config.clone(),
            );
            if let Ok((ca, cb)) = crossover(&pa, &pb, &self.road, &mut self.rng) {
                push_unseen(ca, &mut out, &mut self.seen);
                if out.len() < want {
                    push_unseen(cb, &mut out, &mut self.seen);
                }
            }
        }
        // Exhausted operators (tiny search spaces): fall back to fresh
        // random configs so the campaign can always continue.
        while out.len() < want {
            let cfg = self.fresh_unseen()?;
            out.push(cfg);
        }
        Ok(out)
    }

    /// Fold an evaluated batch into the population: on generation 0 (or
    /// right after a restart) the batch becomes the population, otherwise
    /// parents and offspring compete and the best tau survive.
    pub fn integrate(&mut self, evaluated: Vec<(ScenarioConfig, FitnessVector)>) -> GenerationSummary {
        let mut best = [f64::NEG_INFINITY; 3];
        for (_, f) in &evaluated {
            let a = f.as_array();
            for i in 0..3 {
                best[i] = best[i].max(a[i]);
            }
        }

        let combined: Vec<(ScenarioConfig, FitnessVector)> = if self.population.is_empty() {
            evaluated
        } else {
            self.population
                .iter()
                .map(|e| (e.config.clone(), e.fitness))
                .chain(evaluated)
                .collect()
        };
        let fitness: Vec<FitnessVector> = combined.iter().map(|(_, f)| *f).collect();
        let rc = rank_and_crowd(&fitness);
        let keep = select_indices(&fitness, self.settings.tau.min(fitness.len()));
        self.population = keep
            .into_iter()
            .map(|i| Evaluated {
                config: combined[i].0.clone(),
                fitness: combined[i].1,
                rank: rc[i].0,
                crowding: rc[i].1,
            })
            .collect();

        self.history.push(best);
        // Stagnation accounting mirrors `check_restart`: a generation counts
        // as stagnant when no individual pushed any objective above the
        // elite archive. The counter resets after a restart so a fresh
        // population gets a full window.
        let improved = (0..3).any(|i| best[i] > self.archive[i]);
        for i in 0..3 {
            self.archive[i] = self.archive[i].max(best[i]);
        }
        let mut restart_triggered = false;
        if self.generation == 0 || improved {
            self.stagnation = 0;
        } else {
            self.stagnation += 1;
            if self.stagnation >= self.settings.restart_stagnation {
                restart_triggered = true;
                self.pending_restart = true;
                self.stagnation = 0;
            }
        }
        let summary = GenerationSummary {
            generation: self.generation,
            best,
            restart_triggered,
        };
        self.generation += 1;
        summary
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{FrameRecord, VehicleFrame, VehicleInfo};
    use crate::VehicleKind;
    use proptest::prelude::*;

    fn road2() -> RoadModel {
        RoadModel::build(2, 3.5, 500.0, 50.0, 300.0).unwrap()
    }

    fn road4() -> RoadModel {
        RoadModel::build(4, 3.5, 600.0, 50.0, 300.0).unwrap()
    }

    #[test]
    fn random_config_matches_lane_count_and_bubble() {
        let road = road2();
        let mut rng = SimRng::new(1);
        let cfg = random_config(&road, &mut rng).unwrap();
        assert_eq!(cfg.npc_starts.len(), 2);
        for p in &cfg.npc_starts {
            assert!(p.s >= 50.0 && p.s <= 350.0);
        }
        cfg.validate(&road).unwrap();
    }

    #[test]
    fn random_config_is_deterministic() {
        let road = road2();
        let a = random_config(&road, &mut SimRng::new(9)).unwrap();
        let b = random_config(&road, &mut SimRng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn four_lane_config_has_four_separated_npcs() {
        let road = road4();
        let mut rng = SimRng::new(3);
        for _ in 0..50 {
            let cfg = random_config(&road, &mut rng).unwrap();
            assert_eq!(cfg.npc_starts.len(), 4);
            // Overlap-check oracle: pairwise box distance strictly positive.
            for i in 0..cfg.npc_starts.len() {
                for j in (i + 1)..cfg.npc_starts.len() {
                    let a = spawn_box(cfg.npc_starts[i]);
                    let b = spawn_box(cfg.npc_starts[j]);
                    assert!(box_distance(&a, &b) > 0.0);
                }
            }
        }
    }

    /// Count differing genes between two configs.
    fn diff_genes(a: &ScenarioConfig, b: &ScenarioConfig) -> usize {
        let mut n = 0;
        n += (a.ego_start != b.ego_start) as usize;
        n += (a.ego_destination != b.ego_destination) as usize;
        for (x, y) in a.npc_starts.iter().zip(&b.npc_starts) {
            n += (x != y) as usize;
        }
        n += (a.weather.rain != b.weather.rain) as usize;
        n += (a.weather.fog != b.weather.fog) as usize;
        n += (a.weather.wetness != b.weather.wetness) as usize;
        n += (a.weather.cloudness != b.weather.cloudness) as usize;
        n += (a.weather.time != b.weather.time) as usize;
        n
    }

    #[test]
    fn mutate_changes_exactly_one_gene() {
        let road = road2();
        let mut rng = SimRng::new(17);
        let parent = random_config(&road, &mut rng).unwrap();
        for _ in 0..100 {
            let child = mutate(&parent, &road, &mut rng).unwrap();
            assert_eq!(diff_genes(&parent, &child), 1);
            child.validate(&road).unwrap();
        }
    }

    #[test]
    fn crossover_preserves_gene_multiset_and_handles_identical_parents() {
        let road = road2();
        let mut rng = SimRng::new(23);
        let a = random_config(&road, &mut rng).unwrap();
        let b = random_config(&road, &mut rng).unwrap();
        for _ in 0..100 {
            let (ca, cb) = crossover(&a, &b, &road, &mut rng).unwrap();
            ca.validate(&road).unwrap();
            cb.validate(&road).unwrap();
            // Per-chromosome gene multiset preserved across the pair.
            let genes = |cfg: &ScenarioConfig| {
                let mut out = Vec::new();
                for (i, p) in cfg.npc_starts.iter().enumerate() {
                    out.push(format!("n{i}:{:?}", p));
                }
                out.push(format!("e:{:?}", cfg.ego_start));
                out.push(format!("d:{:?}", cfg.ego_destination));
                let w = &cfg.weather;
                out.push(format!("rain:{}", w.rain));
                out.push(format!("fog:{}", w.fog));
                out.push(format!("wet:{}", w.wetness));
                out.push(format!("cloud:{}", w.cloudness));
                out.push(format!("time:{}", w.time));
                out
            };
            let mut parents = [genes(&a), genes(&b)].concat();
            let mut children = [genes(&ca), genes(&cb)].concat();
            parents.sort();
            children.sort();
            assert_eq!(parents, children);
        }
        // Identical parents: children equal parents.
        let (ca, cb) = crossover(&a, &a, &road, &mut rng).unwrap();
        assert_eq!(ca, a);
        assert_eq!(cb, a);
    }

    fn synthetic_record(
        road: &RoadModel,
        ego_track: Vec<(f64, f64)>,
        npc_track: Vec<(f64, f64)>,
        outcome: Outcome,
    ) -> (SimulationRecord, ScenarioConfig) {
        let config = ScenarioConfig {
            ego_start: Point::new(10.0, 1.75),
            ego_destination: Point::new(420.0, 1.75),
            npc_starts: vec![Point::new(100.0, 1.75)],
            weather: Weather { rain: 0.0, fog: 0.0, wetness: 0.0, cloudness: 0.0, time: 12 },
            max_frames: 500,
        };
        let frames = ego_track
            .iter()
            .zip(&npc_track)
            .enumerate()
            .map(|(i, (&(es, ed), &(ns, nd)))| FrameRecord {
                frame: (i + 1) as u32,
                vehicles: vec![
                    VehicleFrame { id: 0, s: es, d: ed, heading: 0.0, speed: 10.0, maneuver: None },
                    VehicleFrame { id: 1, s: ns, d: nd, heading: 0.0, speed: 8.0, maneuver: None },
                ],
            })
            .collect();
        let record = SimulationRecord {
            config: config.clone(),
            seed: 1,
            roster: vec![
                VehicleInfo { id: 0, kind: VehicleKind::Ego, box_length: 4.7, box_width: 2.0 },
                VehicleInfo { id: 1, kind: VehicleKind::Npc, box_length: 4.7, box_width: 2.0 },
            ],
            frames,
            violations: vec![],
            outcome,
            liability: vec![],
        };
        let _ = road;
        (record, config)
    }

    #[test]
    fn fitness_exact_destination_gives_zero_f1() {
        let road = road2();
        let (rec, cfg) =
            synthetic_record(&road, vec![(100.0, 1.75), (420.0, 1.75)], vec![(200.0, 5.25); 2], Outcome::Completed);
        let f = evaluate_fitness(&rec, &cfg, &road).unwrap();
        assert_eq!(f.f1, 0.0);
    }

    #[test]
    fn fitness_collision_clamps_f2() {
        let road = road2();
        let (rec, cfg) = synthetic_record(
            &road,
            vec![(100.0, 1.75)],
            vec![(120.0, 1.75)],
            Outcome::CollisionStopped,
        );
        let f = evaluate_fitness(&rec, &cfg, &road).unwrap();
        assert_eq!(f.f2, 10.0);
    }

    #[test]
    fn fitness_min_line_distance_over_frames() {
        let road = road2();
        // Closest approach to the d=0 edge: box half-width 1.0, so min
        // distance 1.25 m at d = 2.25.
        let (rec, cfg) = synthetic_record(
            &road,
            vec![(100.0, 3.0), (110.0, 2.25), (120.0, 3.2)],
            vec![(300.0, 5.25); 3],
            Outcome::Completed,
        );
        let f = evaluate_fitness(&rec, &cfg, &road).unwrap();
        assert!((f.f3 - 0.8).abs() < 1e-12, "f3 = {}", f.f3);
    }

    #[test]
    fn empty_record_is_an_error() {
        let road = road2();
        let (mut rec, cfg) =
            synthetic_record(&road, vec![(10.0, 1.75)], vec![(100.0, 1.75)], Outcome::Completed);
        rec.frames.clear();
        assert_eq!(evaluate_fitness(&rec, &cfg, &road).unwrap_err(), SearchError::EmptyRecord);
    }

    fn fv(f1: f64, f2: f64, f3: f64) -> FitnessVector {
        FitnessVector { f1, f2, f3 }
    }

    #[test]
    fn sort_total_dominance() {
        let ranks = non_dominated_sort(&[fv(1.0, 1.0, 1.0), fv(2.0, 2.0, 2.0)]);
        assert_eq!(ranks, vec![1, 0]);
    }

    #[test]
    fn sort_incomparable_pair() {
        let ranks = non_dominated_sort(&[fv(1.0, 2.0, 1.0), fv(2.0, 1.0, 1.0)]);
        assert_eq!(ranks, vec![0, 0]);
    }

    /// Independent oracle: repeatedly peel the non-dominated set by naive
    /// pairwise scanning.
    fn peel_ranks(fitness: &[FitnessVector]) -> Vec<usize> {
        let n = fitness.len();
        let mut ranks = vec![usize::MAX; n];
        let mut rank = 0;
        loop {
            let alive: Vec<usize> = (0..n).filter(|&i| ranks[i] == usize::MAX).collect();
            if alive.is_empty() {
                return ranks;
            }
            for &i in &alive {
                let dominated = alive.iter().any(|&j| j != i && dominates(&fitness[j], &fitness[i]));
                if !dominated {
                    ranks[i] = rank;
                }
            }
            rank += 1;
        }
    }

    #[test]
    fn sort_matches_peeling_oracle() {
        let mut rng = SimRng::new(5);
        for _ in 0..50 {
            let n = 1 + rng.range_usize(64);
            let pop: Vec<FitnessVector> = (0..n)
                .map(|_| fv(rng.range_f64(0.0, 5.0), rng.range_f64(0.0, 5.0), rng.range_f64(0.0, 5.0)))
                .collect();
            assert_eq!(non_dominated_sort(&pop), peel_ranks(&pop));
        }
    }

    #[test]
    fn crowding_small_front_and_boundaries() {
        assert_eq!(crowding_distance(&[fv(1.0, 1.0, 1.0), fv(2.0, 0.5, 1.0)]), vec![f64::INFINITY; 2]);
        // Three collinear equally spaced points: middle gets 1 per varying
        // objective.
        let front = [fv(0.0, 0.0, 0.0), fv(1.0, 1.0, 1.0), fv(2.0, 2.0, 2.0)];
        let crowd = crowding_distance(&front);
        assert_eq!(crowd[0], f64::INFINITY);
        assert_eq!(crowd[2], f64::INFINITY);
        assert!((crowd[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn crowding_zero_range_objective_contributes_nothing() {
        let front = [fv(0.0, 7.0, 0.0), fv(1.0, 7.0, 2.0), fv(2.0, 7.0, 4.0)];
        let crowd = crowding_distance(&front);
        assert!((crowd[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn selection_matches_sort_oracle() {
        let mut rng = SimRng::new(31);
        for _ in 0..50 {
            let n = 2 + rng.range_usize(40);
            let tau = 1 + rng.range_usize(n);
            let pop: Vec<FitnessVector> = (0..n)
                .map(|_| fv(rng.range_f64(0.0, 3.0), rng.range_f64(0.0, 3.0), rng.range_f64(0.0, 3.0)))
                .collect();
            let picked = select_indices(&pop, tau);
            let rc = rank_and_crowd(&pop);
            let mut oracle: Vec<usize> = (0..n).collect();
            oracle.sort_by(|&a, &b| {
                rc[a].0
                    .cmp(&rc[b].0)
                    .then(rc[b].1.partial_cmp(&rc[a].1).unwrap())
                    .then(a.cmp(&b))
            });
            oracle.truncate(tau);
            assert_eq!(picked, oracle);
        }
    }

    #[test]
    fn restart_fires_at_exactly_five_stagnant_generations() {
        let flat = [1.0, 2.0, 3.0];
        // Baseline + 4 stagnant: no restart yet.
        assert!(!check_restart(&vec![flat; 5]));
        // Baseline + 5 stagnant: restart.
        assert!(check_restart(&vec![flat; 6]));
    }

    #[test]
    fn improvement_inside_window_resets_restart() {
        let mut history = vec![[1.0, 1.0, 1.0]; 5];
        history.push([1.0, 1.5, 1.0]); // improvement at the fifth entry
        assert!(!check_restart(&history));
    }

    proptest! {
        #[test]
        fn positive_scaling_preserves_ranks_and_selection(
            scale in 0.01..100.0f64,
            seed in 0u64..1000,
        ) {
            let mut rng = SimRng::new(seed);
            let n = 3 + rng.range_usize(30);
            let pop: Vec<FitnessVector> = (0..n)
                .map(|_| fv(rng.range_f64(0.0, 2.0), rng.range_f64(0.0, 2.0), rng.range_f64(0.0, 2.0)))
                .collect();
            let scaled: Vec<FitnessVector> =
                pop.iter().map(|f| fv(f.f1 * scale, f.f2 * scale, f.f3 * scale)).collect();
            prop_assert_eq!(non_dominated_sort(&pop), non_dominated_sort(&scaled));
            let tau = 1 + n / 2;
            prop_assert_eq!(select_indices(&pop, tau), select_indices(&scaled, tau));
        }
    }

    #[test]
    fn search_state_emits_unique_fingerprints_across_restarts() {
        let road = road2();
        let settings = SearchSettings { tau: 10, offspring: 10, ..Default::default() };
        let mut state = SearchState::new(road, settings, 99);
        let mut all: Vec<String> = Vec::new();
        // Constant fitness forces stagnation and periodic restarts.
        let flat = FitnessVector { f1: 1.0, f2: 1.0, f3: 1.0 };
        let mut produced = 0;
        while produced < 500 {
            let batch = state.next_batch().unwrap();
            produced += batch.len();
            for c in &batch {
                all.push(c.fingerprint());
            }
            state.integrate(batch.into_iter().map(|c| (c, flat)).collect());
        }
        let unique: HashSet<&String> = all.iter().collect();
        assert_eq!(unique.len(), all.len(), "duplicate fingerprint emitted");
        assert!(state.restarts() >= 1, "stagnation never triggered a restart");
    }
}
