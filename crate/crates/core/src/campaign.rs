//! Campaign orchestration: run a seeded fuzzing campaign with a scenario
//! budget, persist every record, and compute the effectiveness and
//! efficiency metrics from the persisted records alone.
//!
//! Record files are byte-identical across reruns with the same seed.
//! Measured wall-clock data therefore lives in a separate
//! `timings.json` sidecar; time metrics report the simulated-time and
//! wall-time columns separately.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ego::{controller_by_name, EgoController};
use crate::executor::{execute_scenario, ExecError};
use crate::liability::{determine_all, ego_fault_set};
use crate::record::{RecordError, SimulationRecord};
use crate::rng::splitmix64;
use crate::road::{RoadError, RoadModel, RoadPreset};
use crate::search::{
    evaluate_fitness_with, FitnessVector, ScenarioConfig, SearchError, SearchSettings, SearchState,
};

pub const MANIFEST_FILE: &str = "campaign.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown ego controller '{0}'")]
    UnknownEgo(String),
    #[error("invalid road: {0}")]
    Road(#[from] RoadError),
    #[error("search error: {0}")]
    Search(#[from] SearchError),
    #[error("execution error: {0}")]
    Exec(#[from] ExecError),
    #[error("record error: {0}")]
    Record(#[from] RecordError),
    #[error("missing campaign manifest in {0}")]
    MissingManifest(PathBuf),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignSettings {
    pub road: RoadPreset,
    pub budget: usize,
    pub hours: Option<f64>,
    pub seed: u64,
    pub ell: f64,
    pub search: SearchSettings,
    pub ego: String,
    pub workers: Option<usize>,
}

impl CampaignSettings {
    pub fn new(road: RoadPreset, budget: usize, seed: u64) -> Self {
        Self {
            road,
            budget,
            hours: None,
            seed,
            ell: crate::npc::DEFAULT_ELL,
            search: SearchSettings::default(),
            ego: "baseline".into(),
            workers: None,
        }
    }
}

/// Per-scenario timing sidecar entry; wall values are measured and hence
/// not reproducible across runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioTiming {
    pub generation: u32,
    pub index: usize,
    pub sim_seconds: f64,
    pub wall_seconds: f64,
    /// Campaign wall-clock offset at which this scenario finished.
    pub wall_end_offset_seconds: f64,
}

/// A time metric reported in both accountings: simulated seconds summed
/// over scenario traces, and measured wall time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeMetric {
    pub simulated: f64,
    pub wall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessPoint {
    pub generation: u32,
    pub best_f1: f64,
    pub best_f2: f64,
    pub best_f3: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignReport {
    pub scenario_num: usize,
    pub violation_num: usize,
    pub ego_fault_num: usize,
    pub proportion_percent: f64,
    pub minutes_per_scenario: TimeMetric,
    pub minutes_per_violation: TimeMetric,
    pub minutes_per_ego_fault: TimeMetric,
    pub first_violation_minute: Option<TimeMetric>,
    pub first_ego_fault_minute: Option<TimeMetric>,
    pub fitness_series: Vec<FitnessPoint>,
    pub violation_histogram: BTreeMap<String, usize>,
    pub corrupt_records: usize,
}

fn record_path(dir: &Path, generation: u32, index: usize) -> PathBuf {
    dir.join(generation.to_string()).join(format!("{index}.json"))
}

fn scenario_seed(master: u64, global_index: u64) -> u64 {
    splitmix64(master ^ splitmix64(0x5EED ^ global_index))
}

fn build_pool(workers: Option<usize>) -> Result<rayon::ThreadPool, CampaignError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| CampaignError::Io(std::io::Error::other(e.to_string())))
}

/// Run a full campaign: generator -> executor -> violation detection ->
/// liability, persisting every record plus the manifest, timing sidecar,
/// and final report under `out_dir`.
pub fn run_campaign(settings: &CampaignSettings, out_dir: &Path) -> Result<CampaignReport, CampaignError> {
    let road = RoadModel::from_preset(&settings.road)?;
    let controller =
        controller_by_name(&settings.ego).ok_or_else(|| CampaignError::UnknownEgo(settings.ego.clone()))?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(settings)?)?;

    let pool = build_pool(settings.workers)?;
    let mut state = SearchState::new(road.clone(), settings.search.clone(), settings.seed);
    let mut timings: Vec<ScenarioTiming> = Vec::new();
    let mut executed: usize = 0;
    let start = Instant::now();
    let wall_budget_s = settings.hours.map(|h| h * 3600.0);

    while executed < settings.budget {
        if let Some(cap) = wall_budget_s {
            if start.elapsed().as_secs_f64() >= cap {
                break;
            }
        }
        let generation = state.generation();
        let mut batch = state.next_batch()?;
        let truncated = batch.len() > settings.budget - executed;
        if truncated {
            batch.truncate(settings.budget - executed);
        }

        let jobs: Vec<(usize, ScenarioConfig, u64)> = batch
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.clone(), scenario_seed(settings.seed, (executed + i) as u64)))
            .collect();

        let results: Result<Vec<(SimulationRecord, FitnessVector, f64)>, CampaignError> =
            pool.install(|| {
                jobs.par_iter()
                    .map(|(_, config, seed)| {
                        let t0 = Instant::now();
                        let mut rec = execute_scenario(&road, config, &*controller, settings.ell, *seed)?;
                        rec.liability = determine_all(&rec, &road);
                        let fitness =
                            evaluate_fitness_with(&rec, config, &road, &settings.search.fitness)?;
                        Ok((rec, fitness, t0.elapsed().as_secs_f64()))
                    })
                    .collect()
            });
        let results = results?;

        let mut evaluated = Vec::with_capacity(results.len());
        for (index, (rec, fitness, wall_seconds)) in results.into_iter().enumerate() {
            rec.save(&record_path(out_dir, generation, index))?;
            timings.push(ScenarioTiming {
                generation,
                index,
                sim_seconds: rec.sim_seconds(),
                wall_seconds,
                wall_end_offset_seconds: start.elapsed().as_secs_f64(),
            });
            evaluated.push((rec.config.clone(), fitness));
        }
        executed += evaluated.len();

        if truncated {
            break;
        }
        state.integrate(evaluated);
    }

    fs::write(out_dir.join(TIMINGS_FILE), serde_json::to_string_pretty(&timings)?)?;
    let report = report(out_dir)?;
    fs::write(out_dir.join(REPORT_FILE), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Enumerate record files in deterministic (generation, index) order.
pub fn list_record_files(dir: &Path) -> Result<Vec<(u32, usize, PathBuf)>, CampaignError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let Ok(generation) = entry.file_name().to_string_lossy().parse::<u32>() else {
            continue;
        };
        for file in fs::read_dir(entry.path())? {
            let file = file?;
            let name = file.file_name().to_string_lossy().into_owned();
            let Some(stem) = name.strip_suffix(".json") else { continue };
            let Ok(index) = stem.parse::<usize>() else { continue };
            out.push((generation, index, file.path()));
        }
    }
    out.sort_by_key(|(g, i, _)| (*g, *i));
    Ok(out)
}

struct LoadedCampaign {
    settings: CampaignSettings,
    road: RoadModel,
    records: Vec<(u32, usize, SimulationRecord)>,
    timings: Vec<ScenarioTiming>,
    corrupt: usize,
}

fn load_campaign(dir: &Path) -> Result<LoadedCampaign, CampaignError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(CampaignError::MissingManifest(dir.to_path_buf()));
    }
    let settings: CampaignSettings = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    let road = RoadModel::from_preset(&settings.road)?;
    let mut records = Vec::new();
    let mut corrupt = 0;
    for (generation, index, path) in list_record_files(dir)? {
        match SimulationRecord::load(&path) {
            Ok(rec) => records.push((generation, index, rec)),
            Err(e) => {
                eprintln!("warning: skipping corrupt record {}: {e}", path.display());
                corrupt += 1;
            }
        }
    }
    let timings: Vec<ScenarioTiming> = match fs::read_to_string(dir.join(TIMINGS_FILE)) {
        Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
        Err(_) => Vec::new(),
    };
    Ok(LoadedCampaign { settings, road, records, timings, corrupt })
}

/// Recompute all campaign metrics from the persisted records alone.
pub fn report(dir: &Path) -> Result<CampaignReport, CampaignError> {
    let campaign = load_campaign(dir)?;
    let n = campaign.records.len();

    let mut violation_num = 0usize;
    let mut histogram: BTreeMap<String, usize> = BTreeMap::new();
    let mut ego_fault_num = 0usize;
    let mut per_gen_best: BTreeMap<u32, [f64; 3]> = BTreeMap::new();

    let timing_of = |generation: u32, index: usize| {
        campaign
            .timings
            .iter()
            .find(|t| t.generation == generation && t.index == index)
    };

    let mut sim_elapsed = 0.0f64;
    let mut first_violation: Option<TimeMetric> = None;
    let mut first_ego_fault: Option<TimeMetric> = None;
    let mut total_wall = 0.0f64;

    for (generation, index, rec) in &campaign.records {
        let faults = ego_fault_set(std::slice::from_ref(rec)).len();
        violation_num += rec.violations.len();
        ego_fault_num += faults;
        for v in &rec.violations {
            *histogram.entry(v.kind.label().to_string()).or_insert(0) += 1;
        }

        sim_elapsed += rec.sim_seconds();
        let timing = timing_of(*generation, *index);
        let wall_end = timing.map(|t| t.wall_end_offset_seconds).unwrap_or(0.0);
        total_wall += timing.map(|t| t.wall_seconds).unwrap_or(0.0);
        if !rec.violations.is_empty() && first_violation.is_none() {
            first_violation = Some(TimeMetric { simulated: sim_elapsed / 60.0, wall: wall_end / 60.0 });
        }
        if faults > 0 && first_ego_fault.is_none() {
            first_ego_fault = Some(TimeMetric { simulated: sim_elapsed / 60.0, wall: wall_end / 60.0 });
        }

        if let Ok(f) = evaluate_fitness_with(rec, &rec.config, &campaign.road, &campaign.settings.search.fitness)
        {
            let entry = per_gen_best.entry(*generation).or_insert([f64::NEG_INFINITY; 3]);
            let a = f.as_array();
            for i in 0..3 {
                entry[i] = entry[i].max(a[i]);
            }
        }
    }

    let sim_total_min = sim_elapsed / 60.0;
    let wall_total_min = total_wall / 60.0;
    let per = |count: usize| {
        if count == 0 {
            TimeMetric { simulated: 0.0, wall: 0.0 }
        } else {
            TimeMetric { simulated: sim_total_min / count as f64, wall: wall_total_min / count as f64 }
        }
    };

    Ok(CampaignReport {
        scenario_num: n,
        violation_num,
        ego_fault_num,
        proportion_percent: if violation_num == 0 {
            0.0
        } else {
            100.0 * ego_fault_num as f64 / violation_num as f64
        },
        minutes_per_scenario: per(n),
        minutes_per_violation: per(violation_num),
        minutes_per_ego_fault: per(ego_fault_num),
        first_violation_minute: first_violation,
        first_ego_fault_minute: first_ego_fault,
        fitness_series: per_gen_best
            .into_iter()
            .map(|(generation, best)| FitnessPoint {
                generation,
                best_f1: best[0],
                best_f2: best[1],
                best_f3: best[2],
            })
            .collect(),
        violation_histogram: histogram,
        corrupt_records: campaign.corrupt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    SpeedTraces,
    Fitness,
    Histogram,
}

impl std::str::FromStr for ExportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "speed_traces" => Ok(Self::SpeedTraces),
            "fitness" => Ok(Self::Fitness),
            "histogram" => Ok(Self::Histogram),
            other => Err(format!("unknown export kind '{other}'")),
        }
    }
}

/// Emit plot-ready CSV series from a records directory. Returns the path
/// of the written file.
pub fn export_series(dir: &Path, kind: ExportKind) -> Result<PathBuf, CampaignError> {
    let exports = dir.join("exports");
    fs::create_dir_all(&exports)?;
    match kind {
        ExportKind::SpeedTraces => {
            let campaign = load_campaign(dir)?;
            let path = exports.join("speed_traces.csv");
            let mut out = fs::File::create(&path)?;
            writeln!(out, "generation,scenario,frame,vehicle_id,vehicle_kind,speed_mps")?;
            for (generation, index, rec) in &campaign.records {
                for frame in &rec.frames {
                    for v in &frame.vehicles {
                        let kind = rec
                            .vehicle_info(v.id)
                            .map(|i| match i.kind {
                                crate::VehicleKind::Ego => "ego",
                                crate::VehicleKind::Npc => "npc",
                            })
                            .unwrap_or("unknown");
                        writeln!(
                            out,
                            "{generation},{index},{},{},{kind},{}",
                            frame.frame, v.id, v.speed
                        )?;
                    }
                }
            }
            Ok(path)
        }
        ExportKind::Fitness => {
            let rep = report(dir)?;
            let path = exports.join("fitness.csv");
            let mut out = fs::File::create(&path)?;
            writeln!(out, "generation,best_f1,best_f2,best_f3")?;
            for p in &rep.fitness_series {
                writeln!(out, "{},{},{},{}", p.generation, p.best_f1, p.best_f2, p.best_f3)?;
            }
            Ok(path)
        }
        ExportKind::Histogram => {
            let rep = report(dir)?;
            let path = exports.join("histogram.csv");
            let mut out = fs::File::create(&path)?;
            writeln!(out, "kind,count")?;
            for (kind, count) in &rep.violation_histogram {
                writeln!(out, "{kind},{count}")?;
            }
            Ok(path)
        }
    }
}

/// Re-simulate a persisted record from its (config, seed) and check that
/// the frames match exactly.
pub fn verify_replay(
    record: &SimulationRecord,
    road: &RoadModel,
    controller: &dyn EgoController,
    ell: f64,
) -> Result<bool, CampaignError> {
    let replayed = execute_scenario(road, &record.config, controller, ell, record.seed)?;
    Ok(replayed.frames == record.frames
        && replayed.violations == record.violations
        && replayed.outcome == record.outcome)
}
