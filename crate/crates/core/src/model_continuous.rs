//! Spatial-continuous operational model: social forces with circular
//! torsos, advanced by the continuous time step.
//!
//! Per agent the acceleration is a driving term
//! (desired_speed * e_waypoint - v) / relaxation_time plus repulsive
//! agent-agent and agent-wall terms A*exp((r_ij - d_ij)/B) along the
//! contact normal. When torsos overlap (d_ij < r_ij) a body-compression
//! term and a sliding-friction term switch on. The compression coefficient
//! (kg/s^2) and friction coefficient (kg/(m s)) are assigned to the terms
//! their units fit; divided by the agent mass they act as accelerations.
//!
//! Virtual pedestrians enter the force loops exactly as agents with zero
//! velocity, but never move. Integration is semi-implicit Euler (velocity
//! first, then position) with the velocity capped at v_max; a position
//! update that would land inside an obstacle is rejected and the agent
//! stops there for that step.

use crate::geometry::{point_segment_distance, Polygon, Vec2};
use crate::scenario::SimParams;
use crate::AgentId;

/// Force cutoff: beyond this separation the exponential repulsion is below
/// any behavioral relevance and neighbors are skipped.
pub const FORCE_CUTOFF_M: f64 = 2.0;

#[derive(Clone, Debug)]
pub struct ContinuousAgent {
    pub id: AgentId,
    pub pos: Vec2,
    pub vel: Vec2,
    pub radius: f64,
    pub desired_speed: f64,
    pub mass: f64,
    /// Remaining route; `waypoint_idx` points at the current target.
    pub waypoints: Vec<Vec2>,
    pub waypoint_idx: usize,
    /// Waypoint most recently reached (route segment start).
    pub prev_waypoint: Vec2,
    /// Destination region this agent exits at.
    pub dest_idx: usize,
}

impl ContinuousAgent {
    pub fn current_waypoint(&self) -> Vec2 {
        self.waypoints[self.waypoint_idx.min(self.waypoints.len() - 1)]
    }

    /// Advance the waypoint pointer while the agent is within the arrival
    /// radius of its current target.
    pub fn advance_waypoints(&mut self, arrival_radius: f64) {
        while self.waypoint_idx + 1 < self.waypoints.len()
            && self.pos.distance(self.current_waypoint()) < arrival_radius
        {
            self.prev_waypoint = self.current_waypoint();
            self.waypoint_idx += 1;
        }
    }
}

/// Non-moving pedestrian proxy seen by the force loops (virtual pedestrian
/// planted from the discrete side, zero velocity).
#[derive(Clone, Copy, Debug)]
pub struct StaticBody {
    pub id: AgentId,
    pub pos: Vec2,
    pub radius: f64,
}

/// Static wall geometry shared by all steps: obstacle boundaries plus the
/// scenario bounds, flattened to segments once.
#[derive(Clone, Debug)]
pub struct WallSet {
    segments: Vec<(Vec2, Vec2)>,
    obstacles: Vec<Polygon>,
    bounds: Polygon,
}

impl WallSet {
    pub fn new(bounds: &Polygon, obstacles: &[Polygon]) -> Self {
        let mut segments = Vec::new();
        for ob in obstacles {
            segments.extend(ob.edges());
        }
        segments.extend(bounds.edges());
        WallSet {
            segments,
            obstacles: obstacles.to_vec(),
            bounds: bounds.clone(),
        }
    }

    /// Is `p` a legal agent position (inside bounds, not inside an obstacle)?
    pub fn position_allowed(&self, p: Vec2) -> bool {
        self.bounds.contains(p) && !self.obstacles.iter().any(|ob| ob.contains(p))
    }

    fn nearest_wall_points(&self, p: Vec2, cutoff: f64, out: &mut Vec<Vec2>) {
        out.clear();
        for &(a, b) in &self.segments {
            if point_segment_distance(p, a, b) < cutoff {
                let ab = b - a;
                let t = ((p - a).dot(ab) / ab.norm_sq()).clamp(0.0, 1.0);
                out.push(a + ab * t);
            }
        }
    }
}

/// Uniform spatial hash over agent positions; bucket size equals the force
/// cutoff so the 3x3 neighborhood covers all interacting pairs.
struct SpatialHash {
    buckets: std::collections::HashMap<(i32, i32), Vec<u32>>,
    cell: f64,
}

impl SpatialHash {
    fn build(positions: impl Iterator<Item = Vec2>, cell: f64) -> Self {
        let mut buckets: std::collections::HashMap<(i32, i32), Vec<u32>> =
            std::collections::HashMap::new();
        for (i, p) in positions.enumerate() {
            let key = ((p.x / cell).floor() as i32, (p.y / cell).floor() as i32);
            buckets.entry(key).or_default().push(i as u32);
        }
        SpatialHash { buckets, cell }
    }

    /// Indices in the 3x3 bucket neighborhood, sorted for deterministic
    /// summation order.
    fn query(&self, p: Vec2, out: &mut Vec<u32>) {
        out.clear();
        let cx = (p.x / self.cell).floor() as i32;
        let cy = (p.y / self.cell).floor() as i32;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(list) = self.buckets.get(&(cx + dx, cy + dy)) {
                    out.extend_from_slice(list);
                }
            }
        }
        out.sort_unstable();
    }
}

/// Repulsion-plus-contact force (per unit mass) exerted on an agent at
/// `pos`/`vel` by a pedestrian body at `other_pos` with `other_vel`.
/// This single kernel serves real agents and virtual pedestrians alike.
pub fn body_force(
    pos: Vec2,
    vel: Vec2,
    radius: f64,
    other_pos: Vec2,
    other_vel: Vec2,
    other_radius: f64,
    p: &SimParams,
) -> Vec2 {
    let diff = pos - other_pos;
    let d = diff.norm();
    if d >= FORCE_CUTOFF_M || d < 1e-12 {
        return Vec2::ZERO;
    }
    let normal = diff / d;
    let r_sum = radius + other_radius;
    let mut force = normal * (p.sf_a_mps2 * ((r_sum - d) / p.sf_b_m).exp());
    let overlap = r_sum - d;
    if overlap > 0.0 {
        // body compression
        force += normal * (p.sf_kappa_kg_s2 * overlap / p.mass_kg);
        // sliding friction against the tangential velocity difference
        let tangent = normal.perp();
        let dv_t = (other_vel - vel).dot(tangent);
        force += tangent * (p.sf_k_kg_ms * overlap * dv_t / p.mass_kg);
    }
    force
}

fn wall_force(pos: Vec2, vel: Vec2, radius: f64, wall_point: Vec2, p: &SimParams) -> Vec2 {
    let diff = pos - wall_point;
    let d = diff.norm();
    if d >= FORCE_CUTOFF_M || d < 1e-12 {
        return Vec2::ZERO;
    }
    let normal = diff / d;
    let mut force = normal * (p.sf_a_mps2 * ((radius - d) / p.sf_b_m).exp());
    let overlap = radius - d;
    if overlap > 0.0 {
        force += normal * (p.sf_kappa_kg_s2 * overlap / p.mass_kg);
        let tangent = normal.perp();
        force -= tangent * (p.sf_k_kg_ms * overlap * vel.dot(tangent) / p.mass_kg);
    }
    force
}

/// Advance all continuous agents by one step of `dt`. Statics contribute
/// forces but never move. Agents are processed in slice order and all
/// forces are evaluated against the pre-step snapshot.
pub fn step_continuous(
    agents: &mut [ContinuousAgent],
    statics: &[StaticBody],
    walls: &WallSet,
    params: &SimParams,
    dt: f64,
) {
    let n = agents.len();
    let snapshot: Vec<(Vec2, Vec2, f64)> =
        agents.iter().map(|a| (a.pos, a.vel, a.radius)).collect();
    let agent_hash = SpatialHash::build(snapshot.iter().map(|s| s.0), FORCE_CUTOFF_M);
    let static_hash = SpatialHash::build(statics.iter().map(|s| s.pos), FORCE_CUTOFF_M);

    let mut neighbor_buf: Vec<u32> = Vec::new();
    let mut wall_buf: Vec<Vec2> = Vec::new();
    let mut accels = vec![Vec2::ZERO; n];

    for i in 0..n {
        let (pos, vel, radius) = snapshot[i];
        let agent = &agents[i];

        // driving force toward the current waypoint
        let target = agent.current_waypoint();
        let desired_dir = (target - pos).normalized().unwrap_or(Vec2::ZERO);
        let mut acc = (desired_dir * agent.desired_speed - vel) / params.relaxation_time_s;

        // pedestrian-pedestrian repulsion
        agent_hash.query(pos, &mut neighbor_buf);
        for &j in &neighbor_buf {
            let j = j as usize;
            if j == i {
                continue;
            }
            let (opos, ovel, orad) = snapshot[j];
            acc += body_force(pos, vel, radius, opos, ovel, orad, params);
        }

        // virtual pedestrians: same kernel, zero velocity
        static_hash.query(pos, &mut neighbor_buf);
        for &j in &neighbor_buf {
            let s = &statics[j as usize];
            acc += body_force(pos, vel, radius, s.pos, Vec2::ZERO, s.radius, params);
        }

        // walls
        walls.nearest_wall_points(pos, FORCE_CUTOFF_M, &mut wall_buf);
        for &wp in &wall_buf {
            acc += wall_force(pos, vel, radius, wp, params);
        }

        accels[i] = acc;
    }

    for (i, agent) in agents.iter_mut().enumerate() {
        let mut vel = agent.vel + accels[i] * dt;
        let speed = vel.norm();
        if speed > params.v_max_mps {
            vel = vel * (params.v_max_mps / speed);
        }
        let new_pos = agent.pos + vel * dt;
        if walls.position_allowed(new_pos) {
            agent.pos = new_pos;
            agent.vel = vel;
        } else {
            // blocked: slide along the free axis so tangential progress
            // along a wall face survives; an agent is never placed inside
            // an obstacle
            let x_slide = Vec2::new(new_pos.x, agent.pos.y);
            let y_slide = Vec2::new(agent.pos.x, new_pos.y);
            let prefer_x = vel.x.abs() >= vel.y.abs();
            let attempts = if prefer_x {
                [(x_slide, Vec2::new(vel.x, 0.0)), (y_slide, Vec2::new(0.0, vel.y))]
            } else {
                [(y_slide, Vec2::new(0.0, vel.y)), (x_slide, Vec2::new(vel.x, 0.0))]
            };
            let mut moved = false;
            for (slide_pos, slide_vel) in attempts {
                if walls.position_allowed(slide_pos) {
                    agent.pos = slide_pos;
                    agent.vel = slide_vel;
                    moved = true;
                    break;
                }
            }
            if !moved {
                agent.vel = Vec2::ZERO;
            }
        }
        agent.advance_waypoints(2.0 * params.torso_radius_m);
    }
}

/// Position extrapolated by the residual gap at transformation time; agent
/// state is untouched.
pub fn extrapolate_position(agent: &ContinuousAgent, dt_star: f64) -> Vec2 {
    agent.pos + agent.vel * dt_star
}
