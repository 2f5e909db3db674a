//! Spatial-discrete operational model: the cellular walking-stock
//! automaton, advanced by the discrete time step.
//!
//! Every step each agent banks desired_speed * dt of walking stock and
//! spends it on center-to-center cell moves: among the free Moore neighbors
//! strictly closer to the next routing point, the one nearest the beeline
//! from the previous to the next routing point is taken whenever the stock
//! covers its distance. Moves repeat within one step while stock lasts, so
//! the realized long-run speed converges to the desired speed regardless of
//! the cell-size/time-step ratio; the per-step path is still capped at
//! v_max * dt to honor the global speed bound. An agent that could not move
//! at all but has banked more than k * desired_speed * dt sidesteps to a
//! random free neighbor, which dissolves local deadlocks.
//!
//! Agents update one at a time in a freshly shuffled order each step, so
//! two agents can never claim one cell in the same sweep.

use crate::geometry::{point_segment_distance, Vec2, EPS};
use crate::grid::{CellIndex, Grid};
use crate::scenario::SimParams;
use crate::{AgentId, Result};
use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Clone, Debug)]
pub struct DiscreteAgent {
    pub id: AgentId,
    pub cell: CellIndex,
    /// Realized velocity of the last step (net displacement / dt). Right
    /// after a demotion this carries the continuous velocity vector so a
    /// prompt promotion restores the heading.
    pub vel: Vec2,
    pub desired_speed: f64,
    /// Banked walking distance, meters. Never negative.
    pub stock: f64,
    pub waypoints: Vec<Vec2>,
    pub waypoint_idx: usize,
    pub prev_waypoint: Vec2,
    pub dest_idx: usize,
}

impl DiscreteAgent {
    pub fn current_waypoint(&self) -> Vec2 {
        self.waypoints[self.waypoint_idx.min(self.waypoints.len() - 1)]
    }

    pub fn advance_waypoints(&mut self, pos: Vec2, arrival_radius: f64) {
        while self.waypoint_idx + 1 < self.waypoints.len()
            && pos.distance(self.current_waypoint()) < arrival_radius
        {
            self.prev_waypoint = self.current_waypoint();
            self.waypoint_idx += 1;
        }
    }
}

/// One automaton step over all agents. The update order is a fresh random
/// permutation drawn from `rng`; each agent commits its moves before the
/// next one runs.
pub fn step_discrete<R: Rng>(
    agents: &mut [DiscreteAgent],
    grid: &mut Grid,
    params: &SimParams,
    dt: f64,
    rng: &mut R,
) -> Result<()> {
    step_discrete_filtered(agents, grid, params, dt, rng, |_| true)
}

/// `step_discrete` with a target-cell filter. The hybrid driver uses it to
/// keep discrete agents out of zone cores: those cells belong to the other
/// model and are entered through promotion only.
pub fn step_discrete_filtered<R: Rng>(
    agents: &mut [DiscreteAgent],
    grid: &mut Grid,
    params: &SimParams,
    dt: f64,
    rng: &mut R,
    cell_allowed: impl Fn(Vec2) -> bool,
) -> Result<()> {
    let mut order: Vec<usize> = (0..agents.len()).collect();
    order.shuffle(rng);

    // stock above this is discarded: enough to trigger the blocked-agent
    // sidestep plus one diagonal move, so waiting never banks a sprint
    let diag = params.cell_edge_m * std::f64::consts::SQRT_2;

    for &ai in &order {
        let agent = &mut agents[ai];
        agent.stock += agent.desired_speed * dt;
        let stock_cap = params.stock_block_factor * agent.desired_speed * dt + diag;
        agent.stock = agent.stock.min(stock_cap);

        let start_center = grid.cell_center(agent.cell);
        // per-step path budget: v_max * dt plus one quantized move of slack,
        // so desired speeds near v_max stay reachable on a coarse lattice.
        // The transit annulus is sized to cover exactly this worst case.
        let mut budget = params.v_max_mps * dt + diag;
        let mut moved_any = false;

        loop {
            let cur_center = grid.cell_center(agent.cell);
            let wp = agent.current_waypoint();
            let cur_dist = cur_center.distance(wp);
            let beeline = (agent.prev_waypoint, wp);

            // free neighbors strictly closer to the waypoint, affordable
            // within stock and step budget
            let mut best: Option<(CellIndex, f64, f64, f64)> = None; // (cell, beeline_d, wp_d, move_d)
            for cand in grid.neighbors8(agent.cell) {
                if !grid.is_free(cand) {
                    continue;
                }
                let center = grid.cell_center(cand);
                if !cell_allowed(center) {
                    continue;
                }
                let wp_d = center.distance(wp);
                if wp_d >= cur_dist - EPS {
                    continue;
                }
                let move_d = cur_center.distance(center);
                if move_d > agent.stock || move_d > budget {
                    continue;
                }
                let bee_d = point_segment_distance(center, beeline.0, beeline.1);
                let better = match best {
                    None => true,
                    Some((bc, bb, bw, _)) => {
                        bee_d < bb - EPS
                            || (bee_d < bb + EPS && wp_d < bw - EPS)
                            || (bee_d < bb + EPS
                                && wp_d < bw + EPS
                                && (cand.m, cand.n) < (bc.m, bc.n))
                    }
                };
                if better {
                    best = Some((cand, bee_d, wp_d, move_d));
                }
            }

            let Some((target, _, _, move_d)) = best else {
                break;
            };
            grid.clear_occupied(agent.cell, agent.id)?;
            grid.set_occupied(target, agent.id)?;
            agent.cell = target;
            agent.stock -= move_d;
            budget -= move_d;
            moved_any = true;
            agent.advance_waypoints(grid.cell_center(target), 2.0 * params.torso_radius_m);
        }

        // blocked with a full bank: sidestep to a random free neighbor.
        // Only agents that actually want to leave (waypoint at least a cell
        // away) sidestep; an agent parked on its target never jitters.
        let wants_to_move =
            grid.cell_center(agent.cell).distance(agent.current_waypoint()) >= params.cell_edge_m;
        if !moved_any
            && wants_to_move
            && agent.stock > params.stock_block_factor * agent.desired_speed * dt
        {
            let cur_center = grid.cell_center(agent.cell);
            let mut options: Vec<CellIndex> = grid
                .neighbors8(agent.cell)
                .filter(|&c| {
                    grid.is_free(c)
                        && cell_allowed(grid.cell_center(c))
                        && cur_center.distance(grid.cell_center(c)) <= agent.stock.min(budget)
                })
                .collect();
            options.sort();
            if !options.is_empty() {
                let target = options[rng.random_range(0..options.len())];
                let move_d = cur_center.distance(grid.cell_center(target));
                grid.clear_occupied(agent.cell, agent.id)?;
                grid.set_occupied(target, agent.id)?;
                agent.cell = target;
                agent.stock -= move_d;
                moved_any = true;
            }
        }

        let end_center = grid.cell_center(agent.cell);
        agent.vel = if moved_any {
            let v = (end_center - start_center) / dt;
            let speed = v.norm();
            // quantized multi-cell steps can spike past v_max; the stored
            // velocity keeps the heading but respects the global bound
            if speed > params.v_max_mps {
                v * (params.v_max_mps / speed)
            } else {
                v
            }
        } else {
            Vec2::ZERO
        };
        debug_assert!(agent.stock >= -1e-12, "stock went negative");
    }
    Ok(())
}

/// Mean realized speed over a recorded history: total path length divided
/// by the elapsed time.
pub fn realized_speed(step_path_lengths: &[f64], total_time_s: f64) -> f64 {
    assert!(total_time_s > 0.0);
    step_path_lengths.iter().sum::<f64>() / total_time_s
}
