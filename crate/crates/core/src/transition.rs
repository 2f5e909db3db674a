//! Bidirectional agent transformation in the transit areas.
//!
//! At every frame boundary the transformation pass runs over all agents
//! currently inside a transit annulus. Continuous agents are first mapped
//! onto the frame-end instant by linear extrapolation over the residual
//! clock gap. Each transit agent then gets a propagation segment: a
//! circular sector of radius v_max * dt_disc around its heading whose
//! half-angle comes from the stride-wise direction-change bound (12.3
//! degrees per stride, stride length 0.234 + 0.302 v). An agent whose
//! segment pokes out of its zone's outer boundary can leave the transit
//! area next frame and must be demoted; a discrete agent whose segment
//! reaches a zone core must be promoted. Stationary agents get a
//! torso-sized full disk, which keeps them out of the candidate sets until
//! they move.
//!
//! Demotion targets are grid cells. Candidates first compete for the cells
//! their torsos overlap: the pass assigns as many candidates as possible
//! while minimizing total displacement (ties resolved by candidate id then
//! cell index), which reproduces the nearest-cell/nearest-pedestrian
//! conflict rules on simple instances and stays optimal on tangled ones.
//! Whoever is left searches reachable free cells within r_place =
//! v_max * dt_disc, constrained to the propagation segment; per transit
//! area the candidate with the fewest options commits first. An agent with
//! no cell at all is deferred to the next frame — the error of skipping one
//! transformation is bounded by the same r_place.

use crate::geometry::{
    circle_cell_overlap, sector_circle_intersects, CircularSector, Vec2, EPS,
};
use crate::grid::{CellIndex, CellState, Grid};
use crate::model_continuous::{ContinuousAgent, StaticBody};
use crate::model_discrete::DiscreteAgent;
use crate::partition::{Partition, Region, ZoneId};
use crate::scenario::SimParams;
use crate::{AgentId, Error, Result};
use serde::Serialize;
use std::collections::{HashMap, HashSet};

/// Average direction change per stride (Antonini et al.), radians.
pub const STRIDE_ANGLE_RAD: f64 = 12.3 * std::f64::consts::PI / 180.0;

/// Stride length as a function of walking speed (Weidmann).
pub fn stride_length(speed: f64) -> f64 {
    0.234 + 0.302 * speed
}

/// Propagation segment of an agent at `pos` moving with `vel`.
///
/// Radius is the worst-case travel v_max * dt_disc. The half-angle is the
/// maximal heading change over the strides of one frame, clamped to pi.
/// A stationary agent cannot leave the transit area, so it gets a full
/// disk of its torso radius only.
pub fn propagation_segment(pos: Vec2, vel: Vec2, params: &SimParams) -> CircularSector {
    let speed = vel.norm();
    if speed < EPS {
        return CircularSector::new(pos, params.torso_radius_m, 0.0, std::f64::consts::PI);
    }
    let strides = params.dt_disc_s * speed / stride_length(speed);
    let half_angle = (strides * STRIDE_ANGLE_RAD).min(std::f64::consts::PI);
    CircularSector::new(
        pos,
        params.v_max_mps * params.dt_disc_s,
        vel.angle(),
        half_angle.max(1e-6),
    )
}

/// Cells whose area the torso disk overlaps (open-set overlap).
pub fn cells_overlapping_circle(grid: &Grid, center: Vec2, radius: f64) -> Vec<CellIndex> {
    let circle = crate::geometry::Circle::new(center, radius);
    let mut out = Vec::new();
    for idx in grid.cells_in_disk(center, radius + grid.cell_edge()) {
        if circle_cell_overlap(&circle, &grid.cell_polygon(idx)) {
            out.push(idx);
        }
    }
    out
}

/// Plant frame-scoped proxies of each model into the other: transit cells
/// overlapped by continuous torsos are marked virtual (blocked for the
/// discrete step), and discrete agents in transit become static circles for
/// the continuous steps. Marks live until `Grid::clear_virtual_marks`.
pub fn plant_virtual_pedestrians(
    grid: &mut Grid,
    partition: &Partition,
    cont_agents: &[ContinuousAgent],
    disc_agents: &[DiscreteAgent],
    params: &SimParams,
) -> Vec<StaticBody> {
    for agent in cont_agents {
        for cell in cells_overlapping_circle(grid, agent.pos, agent.radius) {
            if matches!(partition.region_of(grid.cell_center(cell)), Region::Transit(_)) {
                grid.mark_virtual(cell, agent.id);
            }
        }
    }
    let mut statics: Vec<StaticBody> = disc_agents
        .iter()
        .filter(|a| matches!(partition.region_of(grid.cell_center(a.cell)), Region::Transit(_)))
        .map(|a| StaticBody {
            id: a.id,
            pos: grid.cell_center(a.cell),
            radius: params.torso_radius_m,
        })
        .collect();
    statics.sort_by_key(|s| s.id);
    statics
}

/// Continuous-to-discrete velocity bookkeeping: a walking speed expressed
/// in cells per discrete step. The stock mechanism realizes the fractional
/// part over time, so nothing is rounded away here.
pub fn transform_velocity_to_discrete(speed: f64, cell_edge: f64, dt_disc: f64) -> f64 {
    assert!(speed >= 0.0);
    speed * dt_disc / cell_edge
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct TransformedAgent {
    pub id: AgentId,
    pub displacement_m: f64,
}

/// Per-frame transformation outcome, streamed to the run log.
#[derive(Clone, Debug, Serialize, Default)]
pub struct TransformReport {
    pub frame: u64,
    pub promoted: Vec<TransformedAgent>,
    pub demoted: Vec<TransformedAgent>,
    pub deferred: Vec<AgentId>,
}

/// Maximum-cardinality, minimum-total-cost assignment of candidates to
/// cells. `costs[i][j]` is `None` where candidate i cannot take cell j.
/// Returns the chosen cell per candidate. Deterministic: inputs are
/// processed in index order, so equal-cost optima resolve toward lower
/// candidate ids and lower cell indices.
pub fn solve_min_displacement_assignment(costs: &[Vec<Option<f64>>]) -> Vec<Option<usize>> {
    let n_cand = costs.len();
    let n_cell = costs.first().map_or(0, |r| r.len());
    // successive shortest augmenting paths on the bipartite graph
    let mut match_cand: Vec<Option<usize>> = vec![None; n_cand];
    let mut match_cell: Vec<Option<usize>> = vec![None; n_cell];
    loop {
        // Bellman-Ford over residual graph: nodes = candidates + cells
        const SRC: usize = usize::MAX;
        let mut dist_cand = vec![f64::INFINITY; n_cand];
        let mut dist_cell = vec![f64::INFINITY; n_cell];
        let mut prev_cell: Vec<Option<usize>> = vec![None; n_cell]; // candidate we came from
        let mut from_src = vec![false; n_cand];
        for i in 0..n_cand {
            if match_cand[i].is_none() {
                dist_cand[i] = 0.0;
                from_src[i] = true;
            }
        }
        let _ = SRC;
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..n_cand {
                if !dist_cand[i].is_finite() {
                    continue;
                }
                for (j, c) in costs[i].iter().enumerate() {
                    let Some(c) = c else { continue };
                    // forward edge i -> j unless it's the matched edge
                    if match_cand[i] == Some(j) {
                        continue;
                    }
                    let nd = dist_cand[i] + c;
                    if nd < dist_cell[j] - 1e-15 {
                        dist_cell[j] = nd;
                        prev_cell[j] = Some(i);
                        // residual backward edge j -> owner
                        if let Some(owner) = match_cell[j] {
                            let back = nd - costs[owner][j].expect("matched edge has cost");
                            if back < dist_cand[owner] - 1e-15 {
                                dist_cand[owner] = back;
                            }
                        }
                        changed = true;
                    }
                }
            }
        }
        // cheapest reachable free cell ends the augmenting path
        let mut best: Option<(f64, usize)> = None;
        for j in 0..n_cell {
            if match_cell[j].is_none() && dist_cell[j].is_finite() {
                if best.map_or(true, |(bd, _)| dist_cell[j] < bd - 1e-15) {
                    best = Some((dist_cell[j], j));
                }
            }
        }
        let Some((_, mut j)) = best else {
            break; // no augmenting path: matching is maximum
        };
        // walk back flipping matched edges
        loop {
            let i = prev_cell[j].expect("augmenting path is connected");
            let prior = match_cand[i];
            match_cand[i] = Some(j);
            match_cell[j] = Some(i);
            match prior {
                Some(prev_j) => j = prev_j,
                None => break,
            }
        }
    }
    match_cand
}

struct DemotionCandidate {
    /// Index into the continuous agent vector.
    agent_idx: usize,
    id: AgentId,
    /// Extrapolated position the transformation evaluates at.
    pos: Vec2,
    segment: CircularSector,
    zone: ZoneId,
}

/// Run the complete transformation pass for one frame boundary.
///
/// `gap_s` is the residual extrapolation gap from the clock. Both agent
/// vectors are edited in place; the grid occupancy is kept in sync. The
/// returned report lists promoted, demoted and deferred agents.
pub fn execute_transform(
    frame: u64,
    gap_s: f64,
    cont_agents: &mut Vec<ContinuousAgent>,
    disc_agents: &mut Vec<DiscreteAgent>,
    grid: &mut Grid,
    partition: &Partition,
    params: &SimParams,
) -> Result<TransformReport> {
    let mut report = TransformReport {
        frame,
        ..Default::default()
    };
    let total_before = cont_agents.len() + disc_agents.len();

    // --- continuous -> discrete ---------------------------------------
    // evaluation positions: transit agents extrapolated over the gap
    let eval_pos: Vec<Vec2> = cont_agents
        .iter()
        .map(|a| {
            if partition.in_transit(a.pos) {
                crate::model_continuous::extrapolate_position(a, gap_s)
            } else {
                a.pos
            }
        })
        .collect();

    let mut candidates: Vec<DemotionCandidate> = Vec::new();
    for (idx, agent) in cont_agents.iter().enumerate() {
        let Region::Transit(zone) = partition.region_of(agent.pos) else {
            continue;
        };
        let segment = propagation_segment(eval_pos[idx], agent.vel, params);
        // a segment contained in some zone's outer disk stays simulated
        // continuously; everything else can reach the discrete remainder
        let escapes_all = partition
            .zones()
            .iter()
            .all(|z| crate::geometry::sector_escapes_disk(&segment, &z.outer_circle()));
        if escapes_all {
            candidates.push(DemotionCandidate {
                agent_idx: idx,
                id: agent.id,
                pos: eval_pos[idx],
                segment,
                zone,
            });
        }
    }
    candidates.sort_by_key(|c| c.id);

    // cells overlapped by non-candidate continuous torsos are not demotion
    // targets (they contain a pedestrian that stays continuous)
    let candidate_ids: HashSet<AgentId> = candidates.iter().map(|c| c.id).collect();
    let mut blocked_by_cont: HashSet<u32> = HashSet::new();
    for (idx, agent) in cont_agents.iter().enumerate() {
        if candidate_ids.contains(&agent.id) {
            continue;
        }
        for cell in cells_overlapping_circle(grid, eval_pos[idx], agent.radius) {
            blocked_by_cont.insert(grid.flat(cell) as u32);
        }
    }

    let placeable = |grid: &Grid, cell: CellIndex, blocked: &HashSet<u32>| -> bool {
        let state_ok = matches!(grid.state(cell), CellState::Free | CellState::Virtual(_));
        state_ok
            && !blocked.contains(&(grid.flat(cell) as u32))
            && matches!(
                partition.region_of(grid.cell_center(cell)),
                Region::Transit(_) | Region::Remainder
            )
    };

    // stage 1-2: candidates compete for the transit cells they overlap
    let mut cell_universe: Vec<CellIndex> = Vec::new();
    let mut cell_rank: HashMap<CellIndex, usize> = HashMap::new();
    let mut overlap_sets: Vec<Vec<CellIndex>> = Vec::new();
    for cand in &candidates {
        let mut cells: Vec<CellIndex> =
            cells_overlapping_circle(grid, cand.pos, params.torso_radius_m)
                .into_iter()
                .filter(|&c| {
                    matches!(partition.region_of(grid.cell_center(c)), Region::Transit(_))
                        && placeable(grid, c, &blocked_by_cont)
                })
                .collect();
        cells.sort();
        for &c in &cells {
            cell_rank.entry(c).or_insert_with(|| {
                cell_universe.push(c);
                cell_universe.len() - 1
            });
        }
        overlap_sets.push(cells);
    }
    let costs: Vec<Vec<Option<f64>>> = candidates
        .iter()
        .zip(&overlap_sets)
        .map(|(cand, cells)| {
            let mut row = vec![None; cell_universe.len()];
            for &c in cells {
                row[cell_rank[&c]] = Some(cand.pos.distance(grid.cell_center(c)));
            }
            row
        })
        .collect();
    let matches = solve_min_displacement_assignment(&costs);

    let mut demoted_indices: Vec<(usize, CellIndex, f64)> = Vec::new(); // (agent_idx, cell, displacement)
    let mut leftovers: Vec<usize> = Vec::new(); // indices into `candidates`
    for (ci, cand) in candidates.iter().enumerate() {
        match matches[ci] {
            Some(jcell) => {
                let cell = cell_universe[jcell];
                let displacement = cand.pos.distance(grid.cell_center(cell));
                grid.set_occupied(cell, cand.id)?;
                demoted_indices.push((cand.agent_idx, cell, displacement));
            }
            None => leftovers.push(ci),
        }
    }

    // stage 3: leftovers search reachable free cells within r_place,
    // constrained to their propagation segment, per transit area;
    // fewest options commit first
    let r_place = params.r_place_m();
    let mut zones_with_leftovers: Vec<ZoneId> =
        leftovers.iter().map(|&ci| candidates[ci].zone).collect();
    zones_with_leftovers.sort();
    zones_with_leftovers.dedup();
    for zone in zones_with_leftovers {
        let mut pool: Vec<usize> = leftovers
            .iter()
            .copied()
            .filter(|&ci| candidates[ci].zone == zone)
            .collect();
        while !pool.is_empty() {
            // options per pooled candidate
            let mut best: Option<(usize, Vec<(f64, CellIndex)>)> = None;
            let mut zero_option: Vec<usize> = Vec::new();
            for &ci in &pool {
                let cand = &candidates[ci];
                let options = stage3_options(grid, partition, cand, r_place, &blocked_by_cont);
                if options.is_empty() {
                    zero_option.push(ci);
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some((bci, bopts)) => {
                        let (bcand, bl) = (&candidates[*bci], bopts.len());
                        options.len() < bl
                            || (options.len() == bl && options[0].0 < bopts[0].0 - EPS)
                            || (options.len() == bl
                                && (options[0].0 - bopts[0].0).abs() <= EPS
                                && cand.id < bcand.id)
                    }
                };
                if better {
                    best = Some((ci, options));
                }
            }
            for ci in &zero_option {
                report.deferred.push(candidates[*ci].id);
            }
            pool.retain(|ci| !zero_option.contains(ci));
            let Some((ci, options)) = best else {
                break;
            };
            let cand = &candidates[ci];
            let (displacement, cell) = options[0];
            grid.set_occupied(cell, cand.id)?;
            demoted_indices.push((cand.agent_idx, cell, displacement));
            pool.retain(|&x| x != ci);
        }
    }

    // apply demotions: continuous agents become discrete agents
    demoted_indices.sort_by_key(|&(agent_idx, _, _)| cont_agents[agent_idx].id);
    let demoting: HashSet<usize> = demoted_indices.iter().map(|&(i, _, _)| i).collect();
    let mut new_disc: Vec<DiscreteAgent> = Vec::new();
    for &(agent_idx, cell, displacement) in &demoted_indices {
        let a = &cont_agents[agent_idx];
        debug_assert!(displacement <= r_place + 1e-9);
        new_disc.push(DiscreteAgent {
            id: a.id,
            cell,
            vel: a.vel, // velocity vector carried over
            desired_speed: a.desired_speed,
            stock: 0.0,
            waypoints: a.waypoints.clone(),
            waypoint_idx: a.waypoint_idx,
            prev_waypoint: a.prev_waypoint,
            dest_idx: a.dest_idx,
        });
        report.demoted.push(TransformedAgent {
            id: a.id,
            displacement_m: displacement,
        });
    }
    let mut keep_idx = 0usize;
    cont_agents.retain(|_| {
        let keep = !demoting.contains(&keep_idx);
        keep_idx += 1;
        keep
    });
    disc_agents.extend(new_disc);

    // --- discrete -> continuous ---------------------------------------
    let mut promote_indices: Vec<usize> = Vec::new();
    for (idx, agent) in disc_agents.iter().enumerate() {
        let center = grid.cell_center(agent.cell);
        if !matches!(partition.region_of(center), Region::Transit(_)) {
            continue;
        }
        let segment = propagation_segment(center, agent.vel, params);
        let reaches_core = partition
            .zones()
            .iter()
            .any(|z| sector_circle_intersects(&segment, &z.core_circle()));
        if reaches_core {
            promote_indices.push(idx);
        }
    }
    promote_indices.sort_by_key(|&i| disc_agents[i].id);
    let mut new_cont: Vec<ContinuousAgent> = Vec::new();
    for &idx in &promote_indices {
        let a = &disc_agents[idx];
        let pos = grid.cell_center(a.cell);
        // virtual-pedestrian discipline should have kept this spot clear
        if cfg!(debug_assertions) {
            for other in cont_agents.iter() {
                let min_sep = other.radius + params.torso_radius_m;
                if other.pos.distance(pos) < min_sep - 1e-9 {
                    return Err(Error::runtime(
                        frame,
                        format!(
                            "promotion cell of {} contested by continuous agent {}",
                            a.id, other.id
                        ),
                    ));
                }
            }
        }
        grid.clear_occupied(a.cell, a.id)?;
        new_cont.push(ContinuousAgent {
            id: a.id,
            pos,
            vel: a.vel,
            radius: params.torso_radius_m,
            desired_speed: a.desired_speed,
            mass: params.mass_kg,
            waypoints: a.waypoints.clone(),
            waypoint_idx: a.waypoint_idx,
            prev_waypoint: a.prev_waypoint,
            dest_idx: a.dest_idx,
        });
        report.promoted.push(TransformedAgent {
            id: a.id,
            displacement_m: 0.0,
        });
    }
    let promoting: HashSet<usize> = promote_indices.iter().copied().collect();
    let mut keep_idx = 0usize;
    disc_agents.retain(|_| {
        let keep = !promoting.contains(&keep_idx);
        keep_idx += 1;
        keep
    });
    cont_agents.extend(new_cont);

    cont_agents.sort_by_key(|a| a.id);
    disc_agents.sort_by_key(|a| a.id);

    // agent conservation across the boundary
    let total_after = cont_agents.len() + disc_agents.len();
    if total_before != total_after {
        return Err(Error::runtime(
            frame,
            format!("transformation lost agents: {total_before} -> {total_after}"),
        ));
    }
    let promoted_set: HashSet<AgentId> = report.promoted.iter().map(|t| t.id).collect();
    if report.demoted.iter().any(|t| promoted_set.contains(&t.id)) {
        return Err(Error::runtime(
            frame,
            "agent both promoted and demoted in one frame",
        ));
    }
    Ok(report)
}

/// Reachable placement cells for a stage-3 candidate, sorted by distance
/// (ties by cell index).
fn stage3_options(
    grid: &Grid,
    partition: &Partition,
    cand: &DemotionCandidate,
    r_place: f64,
    blocked_by_cont: &HashSet<u32>,
) -> Vec<(f64, CellIndex)> {
    let disk = grid.cells_in_disk(cand.pos, r_place);
    let mut mask: HashSet<CellIndex> = disk
        .into_iter()
        .filter(|&c| cand.segment.contains(grid.cell_center(c)))
        .collect();
    // seed: the cell under the agent, or the nearest non-obstacle mask cell
    let seed = grid
        .pos_to_cell(cand.pos)
        .filter(|&c| !grid.is_obstacle(c))
        .or_else(|| {
            mask.iter()
                .filter(|&&c| !grid.is_obstacle(c))
                .min_by(|&&a, &&b| {
                    let da = cand.pos.distance(grid.cell_center(a));
                    let db = cand.pos.distance(grid.cell_center(b));
                    da.total_cmp(&db).then(a.cmp(&b))
                })
                .copied()
        });
    let Some(seed) = seed else {
        return Vec::new();
    };
    mask.insert(seed);
    let Ok(reachable) = grid.reachable_cells(seed, &mask) else {
        return Vec::new();
    };
    let mut options: Vec<(f64, CellIndex)> = reachable
        .into_iter()
        .filter(|&c| {
            matches!(grid.state(c), CellState::Free | CellState::Virtual(_))
                && !blocked_by_cont.contains(&(grid.flat(c) as u32))
                && matches!(
                    partition.region_of(grid.cell_center(c)),
                    Region::Transit(_) | Region::Remainder
                )
                && cand.pos.distance(grid.cell_center(c)) <= r_place + 1e-12
        })
        .map(|c| (cand.pos.distance(grid.cell_center(c)), c))
        .collect();
    options.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    options
}
