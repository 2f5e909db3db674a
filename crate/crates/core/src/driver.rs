//! The frame loop: spawning, model stepping per the aligned clock,
//! transformation, zoom, metrics.
//!
//! Frame order, fixed: spawn due agents, run the zoom tick when due, plant
//! virtual pedestrians, one discrete step, the owed continuous steps with
//! density recording after each, then the transformation at the residual
//! gap, then commit (clear marks, sample trajectories, check invariants).
//! Virtual pedestrians are planted before the discrete step on purpose:
//! the discrete model must see the continuous bodies of the previous
//! instant before it claims cells.
//!
//! Every run is fully determined by (scenario, params, mode, seed).

use crate::clock::{micros_to_seconds, seconds_to_micros, AlignedSchedule};
use crate::density::{DensityField, ModelKind};
use crate::geometry::Vec2;
use crate::grid::Grid;
use crate::model_continuous::{step_continuous, ContinuousAgent, StaticBody, WallSet};
use crate::model_discrete::{step_discrete_filtered, DiscreteAgent};
use crate::partition::{Partition, PartitionMode, Region, ZoneId};
use crate::routing::{build_visibility_graph, sample_od_row, shortest_path, VisibilityGraph};
use crate::scenario::{Scenario, SimParams};
use crate::transition::{execute_transform, plant_virtual_pedestrians, TransformReport};
use crate::zoom::{ZoneEvent, ZoomController};
use crate::{AgentId, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::{BTreeMap, HashSet};

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub mode: PartitionMode,
    pub seed: u64,
    pub t_end_s: f64,
    /// Emit a density snapshot every this many seconds (None: no frames).
    pub density_snapshot_every_s: Option<f64>,
    /// Keep per-frame trajectory samples (benchmarks switch this off).
    pub record_trajectories: bool,
}

impl RunConfig {
    pub fn new(mode: PartitionMode, seed: u64, t_end_s: f64) -> Self {
        RunConfig {
            mode,
            seed,
            t_end_s,
            density_snapshot_every_s: None,
            record_trajectories: true,
        }
    }
}

/// One trajectory row, sampled at the discrete cadence for every agent.
#[derive(Clone, Debug, Serialize)]
pub struct TrajectorySample {
    pub t_s: f64,
    pub id: AgentId,
    pub x_m: f64,
    pub y_m: f64,
    /// 'C' continuous, 'D' discrete.
    pub model: char,
    pub zone: Option<ZoneId>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub spawned: u64,
    pub exited: u64,
    /// Last exit time; None when the run was truncated at t_end.
    pub escape_time_s: Option<f64>,
    pub frames: u64,
    pub wall_seconds: f64,
    pub agent_seconds_continuous: f64,
    pub agent_seconds_discrete: f64,
    pub transformations: u64,
    pub deferrals: u64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub trajectories: Vec<TrajectorySample>,
    pub transform_reports: Vec<TransformReport>,
    pub zone_events: Vec<ZoneEvent>,
    pub exit_times: BTreeMap<AgentId, f64>,
    pub density_frames: Vec<(f64, String)>,
    pub summary: RunSummary,
}

/// Escape time of a completed run: the last exit timestamp. A run that
/// still holds agents (truncated at t_end) has no escape time.
pub fn escape_time(result: &RunResult) -> Result<f64> {
    if result.summary.exited < result.summary.spawned {
        return Err(Error::runtime(
            result.summary.frames,
            format!(
                "run truncated before all exits ({} of {} exited)",
                result.summary.exited, result.summary.spawned
            ),
        ));
    }
    Ok(result
        .exit_times
        .values()
        .copied()
        .fold(0.0, f64::max))
}

struct PendingSpawn {
    origin_idx: usize,
    spawn_t_us: u64,
}

/// Run one simulation to completion (all agents exited) or to t_end.
pub fn run(scenario: &Scenario, params: &SimParams, cfg: &RunConfig) -> Result<RunResult> {
    scenario.validate()?;
    params.validate()?;
    let wall_start = std::time::Instant::now();

    let grid_full = Grid::new(&scenario.bounds_m, &scenario.obstacles_m, params.cell_edge_m)?;
    let mut grid = grid_full;
    let walls = WallSet::new(&scenario.bounds_m, &scenario.obstacles_m);
    let graph = build_visibility_graph(scenario, params.torso_radius_m)?;
    let mut partition = Partition::new(cfg.mode);
    let mut field = DensityField::new(
        &grid,
        seconds_to_micros("density_window", params.density_window_s)?,
        seconds_to_micros("dt_cont", params.dt_cont_s)?,
        seconds_to_micros("dt_disc", params.dt_disc_s)?,
    );
    let mut sched = AlignedSchedule::new(params.dt_disc_s, params.dt_cont_s)?;
    let mut zoom = ZoomController::new();

    let mut rng_spawn = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5350_4157);
    let mut rng_disc = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4449_5343);

    // expand the spawn schedule into timestamped entries
    let mut spawn_queue: Vec<PendingSpawn> = Vec::new();
    for entry in &scenario.spawn_schedule {
        let origin_idx = scenario.origin_index(&entry.origin).expect("validated");
        for i in 0..entry.count {
            let t = i as f64 / entry.rate_per_s;
            spawn_queue.push(PendingSpawn {
                origin_idx,
                spawn_t_us: (t * 1e6).round() as u64,
            });
        }
    }
    spawn_queue.sort_by_key(|s| (s.spawn_t_us, s.origin_idx));
    let mut next_spawn = 0usize;
    let mut retry_spawns: Vec<PendingSpawn> = Vec::new();

    let mut cont_agents: Vec<ContinuousAgent> = Vec::new();
    let mut disc_agents: Vec<DiscreteAgent> = Vec::new();
    let mut next_agent_id = 0u64;

    let mut result = RunResult {
        trajectories: Vec::new(),
        transform_reports: Vec::new(),
        zone_events: Vec::new(),
        exit_times: BTreeMap::new(),
        density_frames: Vec::new(),
        summary: RunSummary {
            spawned: 0,
            exited: 0,
            escape_time_s: None,
            frames: 0,
            wall_seconds: 0.0,
            agent_seconds_continuous: 0.0,
            agent_seconds_discrete: 0.0,
            transformations: 0,
            deferrals: 0,
        },
    };

    let t_end_us = (cfg.t_end_s * 1e6).round() as u64;
    let zoom_interval_us = seconds_to_micros("zoom_check_interval", params.zoom_check_interval_s)?;
    let mut next_zoom_us = zoom_interval_us;
    let snapshot_every_us = cfg
        .density_snapshot_every_s
        .map(|s| (s * 1e6).round().max(1.0) as u64);
    let mut next_snapshot_us = snapshot_every_us.unwrap_or(u64::MAX);

    loop {
        let frame = sched.advance();
        let t_start_us = (frame.n - 1) * sched.dt_disc_us();
        let spawns_done = next_spawn >= spawn_queue.len() && retry_spawns.is_empty();
        if t_start_us >= t_end_us
            || (spawns_done && cont_agents.is_empty() && disc_agents.is_empty())
        {
            break;
        }
        result.summary.frames = frame.n;

        // 1. spawn everything due by the frame start
        let mut due: Vec<PendingSpawn> = std::mem::take(&mut retry_spawns);
        while next_spawn < spawn_queue.len() && spawn_queue[next_spawn].spawn_t_us <= t_start_us {
            due.push(PendingSpawn {
                origin_idx: spawn_queue[next_spawn].origin_idx,
                spawn_t_us: spawn_queue[next_spawn].spawn_t_us,
            });
            next_spawn += 1;
        }
        for spawn in due {
            match try_spawn(
                scenario,
                params,
                &graph,
                &partition,
                &walls,
                &mut grid,
                &cont_agents,
                spawn.origin_idx,
                next_agent_id,
                &mut rng_spawn,
            )? {
                Some(SpawnedAgent::Continuous(a)) => {
                    cont_agents.push(a);
                    next_agent_id += 1;
                    result.summary.spawned += 1;
                }
                Some(SpawnedAgent::Discrete(a)) => {
                    disc_agents.push(a);
                    next_agent_id += 1;
                    result.summary.spawned += 1;
                }
                None => retry_spawns.push(spawn), // origin congested, retry next frame
            }
        }
        cont_agents.sort_by_key(|a| a.id);
        disc_agents.sort_by_key(|a| a.id);

        // 2. zoom tick (hybrid only, once the density field is warm)
        if cfg.mode == PartitionMode::Hybrid
            && t_start_us >= next_zoom_us
            && field.is_warm(t_start_us)
        {
            let outcome = zoom.tick(
                &mut partition,
                &field,
                &mut grid,
                &mut cont_agents,
                &mut disc_agents,
                params,
                frame.n,
                t_start_us,
            )?;
            next_zoom_us = t_start_us + zoom_interval_us;
            result.summary.transformations +=
                (outcome.promoted.len() + outcome.demoted.len()) as u64;
            if !outcome.promoted.is_empty() || !outcome.demoted.is_empty() {
                result.transform_reports.push(TransformReport {
                    frame: frame.n,
                    promoted: outcome.promoted,
                    demoted: outcome.demoted,
                    deferred: Vec::new(),
                });
            }
            result.zone_events.extend(outcome.events);
        }

        // 3. virtual pedestrians from the previous instant's poses
        let statics: Vec<StaticBody> = if cfg.mode == PartitionMode::Hybrid {
            plant_virtual_pedestrians(&mut grid, &partition, &cont_agents, &disc_agents, params)
        } else {
            Vec::new()
        };

        // 4. one discrete step, then record and handle exits
        if !disc_agents.is_empty() {
            let part_ref = &partition;
            step_discrete_filtered(
                &mut disc_agents,
                &mut grid,
                params,
                sched.dt_disc_s(),
                &mut rng_disc,
                |center| !matches!(part_ref.region_of(center), Region::Core(_)),
            )?;
            field.record_step(
                ModelKind::Discrete,
                frame.t_end_us,
                disc_agents.iter().map(|a| grid.flat(a.cell) as u32),
            )?;
            remove_discrete_exits(
                scenario,
                params,
                &mut grid,
                &mut disc_agents,
                frame.t_end_s(),
                &mut result,
            )?;
        }

        // 5. the owed continuous steps
        for l in 1..=frame.d_n {
            if cont_agents.is_empty() {
                break;
            }
            step_continuous(&mut cont_agents, &statics, &walls, params, sched.dt_cont_s());
            if cfg.mode == PartitionMode::Hybrid {
                confine_to_partition(&partition, &walls, &mut cont_agents);
            }
            let t_step_us = (frame.first_cont_step + l - 1) * sched.dt_cont_us();
            field.record_step(
                ModelKind::Continuous,
                t_step_us,
                cont_agents
                    .iter()
                    .filter_map(|a| grid.pos_to_cell(a.pos).map(|c| grid.flat(c) as u32)),
            )?;
            remove_continuous_exits(
                scenario,
                params,
                &mut cont_agents,
                micros_to_seconds(t_step_us),
                &mut result,
            );
        }

        // 6. transformation at the residual gap
        if cfg.mode == PartitionMode::Hybrid {
            let report = execute_transform(
                frame.n,
                frame.gap_s(),
                &mut cont_agents,
                &mut disc_agents,
                &mut grid,
                &partition,
                params,
            )?;
            result.summary.transformations +=
                (report.promoted.len() + report.demoted.len()) as u64;
            result.summary.deferrals += report.deferred.len() as u64;
            result.transform_reports.push(report);
        }

        // 7. commit: clear marks, sample, account, check invariants
        grid.clear_virtual_marks();
        if cfg.record_trajectories {
            let t = frame.t_end_s();
            for a in &cont_agents {
                result.trajectories.push(TrajectorySample {
                    t_s: t,
                    id: a.id,
                    x_m: a.pos.x,
                    y_m: a.pos.y,
                    model: 'C',
                    zone: zone_of(&partition, a.pos),
                });
            }
            for a in &disc_agents {
                let c = grid.cell_center(a.cell);
                result.trajectories.push(TrajectorySample {
                    t_s: t,
                    id: a.id,
                    x_m: c.x,
                    y_m: c.y,
                    model: 'D',
                    zone: zone_of(&partition, c),
                });
            }
        }
        result.summary.agent_seconds_continuous += cont_agents.len() as f64 * sched.dt_disc_s();
        result.summary.agent_seconds_discrete += disc_agents.len() as f64 * sched.dt_disc_s();

        if frame.t_end_us >= next_snapshot_us {
            result
                .density_frames
                .push((frame.t_end_s(), field.snapshot_text(&grid, frame.t_end_us)));
            next_snapshot_us += snapshot_every_us.unwrap_or(u64::MAX);
        }

        check_frame_invariants(
            frame.n,
            &grid,
            &partition,
            &cont_agents,
            &disc_agents,
            result.summary.spawned,
            result.summary.exited,
        )?;
    }

    result.summary.wall_seconds = wall_start.elapsed().as_secs_f64();
    if result.summary.exited == result.summary.spawned {
        result.summary.escape_time_s = Some(
            result
                .exit_times
                .values()
                .copied()
                .fold(0.0, f64::max),
        );
    }
    Ok(result)
}

fn zone_of(partition: &Partition, pos: Vec2) -> Option<ZoneId> {
    match partition.region_of(pos) {
        Region::Core(id) | Region::Transit(id) => Some(id),
        Region::Remainder => None,
    }
}

/// A deferred demotion can drift past the outer transit boundary before the
/// next transformation; the rim acts as a wall (the discrete side is full,
/// there is nowhere to walk). The agent waits on the rim.
fn confine_to_partition(
    partition: &Partition,
    walls: &WallSet,
    cont_agents: &mut [ContinuousAgent],
) {
    for a in cont_agents.iter_mut() {
        if !matches!(partition.region_of(a.pos), Region::Remainder) {
            continue;
        }
        // nearest zone by outer-boundary distance
        let Some(zone) = partition
            .zones()
            .iter()
            .min_by(|x, y| {
                let dx = x.center.distance(a.pos) - x.outer_radius();
                let dy = y.center.distance(a.pos) - y.outer_radius();
                dx.total_cmp(&dy)
            })
        else {
            continue;
        };
        let dir = (a.pos - zone.center).normalized().unwrap_or(Vec2::new(1.0, 0.0));
        let clamped = zone.center + dir * (zone.outer_radius() - 1e-6);
        if walls.position_allowed(clamped) {
            a.pos = clamped;
            a.vel = Vec2::ZERO;
        }
    }
}

enum SpawnedAgent {
    Continuous(ContinuousAgent),
    Discrete(DiscreteAgent),
}

#[allow(clippy::too_many_arguments)]
fn try_spawn(
    scenario: &Scenario,
    params: &SimParams,
    graph: &VisibilityGraph,
    partition: &Partition,
    walls: &WallSet,
    grid: &mut Grid,
    cont_agents: &[ContinuousAgent],
    origin_idx: usize,
    id: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<SpawnedAgent>> {
    let origin = &scenario.origins[origin_idx];
    let dest_idx = sample_od_row(&scenario.od_matrix[origin_idx], rng);
    let desired_speed = sample_desired_speed(params, rng);
    let (bb_min, bb_max) = origin.polygon_m.bbox();

    for _attempt in 0..30 {
        let p = Vec2::new(
            rng.random_range(bb_min.x..=bb_max.x),
            rng.random_range(bb_min.y..=bb_max.y),
        );
        if !origin.polygon_m.contains(p) {
            continue;
        }
        let region = partition.region_of(p);
        let continuous = match region {
            Region::Core(_) => true,
            Region::Transit(_) | Region::Remainder => false,
        };
        if continuous {
            let clear_of_walls = walls.position_allowed(p)
                && scenario
                    .obstacles_m
                    .iter()
                    .all(|ob| ob.distance_to_point(p) >= params.torso_radius_m);
            let clear_of_agents = cont_agents
                .iter()
                .all(|a| a.pos.distance(p) >= a.radius + params.torso_radius_m);
            if !(clear_of_walls && clear_of_agents) {
                continue;
            }
            let dest = graph.destination_node(dest_idx);
            let waypoints = shortest_path(graph, p, dest)?;
            // waypoint 0 is the spawn point itself; target the next one
            let waypoint_idx = 1.min(waypoints.len() - 1);
            return Ok(Some(SpawnedAgent::Continuous(ContinuousAgent {
                id: AgentId(id),
                pos: p,
                vel: Vec2::ZERO,
                radius: params.torso_radius_m,
                desired_speed,
                mass: params.mass_kg,
                waypoints,
                waypoint_idx,
                prev_waypoint: p,
                dest_idx,
            })));
        } else {
            // discrete spawn: the free cell under the point, or any free
            // origin cell outside the transit areas
            let cell = grid
                .pos_to_cell(p)
                .filter(|&c| {
                    grid.is_free(c)
                        && matches!(
                            partition.region_of(grid.cell_center(c)),
                            Region::Remainder
                        )
                        && origin.polygon_m.contains(grid.cell_center(c))
                });
            let Some(cell) = cell else { continue };
            let center = grid.cell_center(cell);
            let dest = graph.destination_node(dest_idx);
            let waypoints = shortest_path(graph, center, dest)?;
            let waypoint_idx = 1.min(waypoints.len() - 1);
            grid.set_occupied(cell, AgentId(id))?;
            return Ok(Some(SpawnedAgent::Discrete(DiscreteAgent {
                id: AgentId(id),
                cell,
                vel: Vec2::ZERO,
                desired_speed,
                stock: 0.0,
                waypoints,
                waypoint_idx,
                prev_waypoint: center,
                dest_idx,
            })));
        }
    }
    Ok(None)
}

/// Desired speeds are drawn from a normal around the scenario mean,
/// truncated to [0.5, v_max].
fn sample_desired_speed(params: &SimParams, rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(params.v_desired_mean_mps, params.v_desired_std_mps)
        .expect("validated parameters");
    let lo = 0.5_f64.min(params.v_max_mps);
    for _ in 0..100 {
        let v = normal.sample(rng);
        if v >= lo && v <= params.v_max_mps {
            return v;
        }
    }
    params.v_desired_mean_mps.clamp(lo, params.v_max_mps)
}

fn at_destination(scenario: &Scenario, params: &SimParams, pos: Vec2, dest_idx: usize) -> bool {
    let dest = &scenario.destinations[dest_idx];
    pos.distance(dest.polygon_m.centroid()) < 2.0 * params.torso_radius_m
        || dest.polygon_m.contains(pos)
}

fn remove_continuous_exits(
    scenario: &Scenario,
    params: &SimParams,
    agents: &mut Vec<ContinuousAgent>,
    t_s: f64,
    result: &mut RunResult,
) {
    agents.retain(|a| {
        if at_destination(scenario, params, a.pos, a.dest_idx) {
            result.exit_times.insert(a.id, t_s);
            result.summary.exited += 1;
            false
        } else {
            true
        }
    });
}

fn remove_discrete_exits(
    scenario: &Scenario,
    params: &SimParams,
    grid: &mut Grid,
    agents: &mut Vec<DiscreteAgent>,
    t_s: f64,
    result: &mut RunResult,
) -> Result<()> {
    let mut leaving: Vec<(AgentId, crate::grid::CellIndex)> = Vec::new();
    agents.retain(|a| {
        if at_destination(scenario, params, grid.cell_center(a.cell), a.dest_idx) {
            leaving.push((a.id, a.cell));
            result.exit_times.insert(a.id, t_s);
            result.summary.exited += 1;
            false
        } else {
            true
        }
    });
    for (id, cell) in leaving {
        grid.clear_occupied(cell, id)?;
    }
    Ok(())
}

fn check_frame_invariants(
    frame: u64,
    grid: &Grid,
    partition: &Partition,
    cont_agents: &[ContinuousAgent],
    disc_agents: &[DiscreteAgent],
    spawned: u64,
    exited: u64,
) -> Result<()> {
    // global conservation
    let in_sim = (cont_agents.len() + disc_agents.len()) as u64;
    if in_sim + exited != spawned {
        return Err(Error::runtime(
            frame,
            format!("conservation broken: {in_sim} in sim + {exited} exited != {spawned} spawned"),
        ));
    }
    // unique ids, no dual representation
    let mut ids: HashSet<AgentId> = HashSet::with_capacity(cont_agents.len() + disc_agents.len());
    for id in cont_agents
        .iter()
        .map(|a| a.id)
        .chain(disc_agents.iter().map(|a| a.id))
    {
        if !ids.insert(id) {
            return Err(Error::runtime(frame, format!("dual representation of {id}")));
        }
    }
    // one agent per cell, grid in sync
    grid.check_occupancy_unique().map_err(|e| match e {
        Error::Runtime { message, .. } => Error::Runtime { frame, message },
        other => other,
    })?;
    for a in disc_agents {
        if grid.occupant(a.cell) != Some(a.id) {
            return Err(Error::runtime(
                frame,
                format!("grid desync: {} not the occupant of {}", a.id, a.cell),
            ));
        }
    }
    // region consistency
    for a in cont_agents {
        if matches!(partition.region_of(a.pos), Region::Remainder) {
            return Err(Error::runtime(
                frame,
                format!("continuous agent {} in the discrete remainder", a.id),
            ));
        }
    }
    for a in disc_agents {
        if matches!(partition.region_of(grid.cell_center(a.cell)), Region::Core(_)) {
            return Err(Error::runtime(
                frame,
                format!("discrete agent {} inside a zone core", a.id),
            ));
        }
    }
    Ok(())
}
