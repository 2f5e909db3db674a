//! Scenario loading, validation, and simulation parameters.
//!
//! A scenario is a single JSON document with explicit units in field names.
//! Polygons are vertex arrays in meters, the OD matrix is a nested array
//! (rows = origins, columns = destinations), and every parameter is
//! optional with event defaults: desired walking speed 1.34 m/s, quadratic
//! cells of 0.46 m, density threshold 1.5 ped/m^2, relaxation time 0.5 s,
//! repulsion scale 26.67 m/s^2 with range 0.06 m, and contact coefficients
//! 2.4e5 / 1.2e5.

use crate::clock::seconds_to_micros;
use crate::geometry::{polygons_interior_intersect, Polygon};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Hard ceiling on pedestrian speed in either model, m/s.
pub const V_MAX_DEFAULT: f64 = 2.16;

fn d_dt_cont() -> f64 {
    0.05
}
fn d_dt_disc() -> f64 {
    0.4
}
fn d_v_max() -> f64 {
    V_MAX_DEFAULT
}
fn d_v_desired_mean() -> f64 {
    1.34
}
fn d_v_desired_std() -> f64 {
    0.1
}
fn d_torso_radius() -> f64 {
    0.23
}
fn d_cell_edge() -> f64 {
    0.46
}
fn d_rho_thr() -> f64 {
    1.5
}
fn d_zoom_radius() -> f64 {
    0.8
}
fn d_k_max() -> u32 {
    5
}
fn d_density_window() -> f64 {
    2.0
}
fn d_zoom_interval() -> f64 {
    2.0
}
fn d_relaxation() -> f64 {
    0.5
}
fn d_sf_a() -> f64 {
    26.67
}
fn d_sf_b() -> f64 {
    0.06
}
fn d_sf_kappa() -> f64 {
    2.4e5
}
fn d_sf_k() -> f64 {
    1.2e5
}
fn d_mass() -> f64 {
    75.0
}
fn d_stock_block() -> f64 {
    2.0
}

/// All tunable simulation constants. Field names carry units.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    /// Continuous-model time step.
    #[serde(default = "d_dt_cont")]
    pub dt_cont_s: f64,
    /// Discrete-model time step (one frame).
    #[serde(default = "d_dt_disc")]
    pub dt_disc_s: f64,
    /// Upper speed bound for both models.
    #[serde(default = "d_v_max")]
    pub v_max_mps: f64,
    /// Mean of the desired-speed distribution.
    #[serde(default = "d_v_desired_mean")]
    pub v_desired_mean_mps: f64,
    /// Std-dev of the desired-speed distribution (truncated to
    /// [0.5, v_max]).
    #[serde(default = "d_v_desired_std")]
    pub v_desired_std_mps: f64,
    /// Torso radius of a continuous pedestrian.
    #[serde(default = "d_torso_radius")]
    pub torso_radius_m: f64,
    /// Edge length of the quadratic grid cells.
    #[serde(default = "d_cell_edge")]
    pub cell_edge_m: f64,
    /// Density threshold triggering zoom-in, ped/m^2.
    #[serde(default = "d_rho_thr")]
    pub rho_thr_ped_m2: f64,
    /// Zone ring radius R; zones have radius k*R.
    #[serde(default = "d_zoom_radius")]
    pub zoom_radius_m: f64,
    /// Maximum zone size multiplier k.
    #[serde(default = "d_k_max")]
    pub k_max: u32,
    /// Sliding window of the density estimator.
    #[serde(default = "d_density_window")]
    pub density_window_s: f64,
    /// Cadence of zoom-in/zoom-out checks.
    #[serde(default = "d_zoom_interval")]
    pub zoom_check_interval_s: f64,
    /// Relaxation time of the driving force.
    #[serde(default = "d_relaxation")]
    pub relaxation_time_s: f64,
    /// Repulsion strength per unit mass, m/s^2.
    #[serde(default = "d_sf_a")]
    pub sf_a_mps2: f64,
    /// Repulsion range, m.
    #[serde(default = "d_sf_b")]
    pub sf_b_m: f64,
    /// Body-compression coefficient, kg/s^2 (assigned by unit).
    #[serde(default = "d_sf_kappa")]
    pub sf_kappa_kg_s2: f64,
    /// Sliding-friction coefficient, kg/(m s) (assigned by unit).
    #[serde(default = "d_sf_k")]
    pub sf_k_kg_ms: f64,
    /// Pedestrian mass.
    #[serde(default = "d_mass")]
    pub mass_kg: f64,
    /// Blocked-agent sidestep factor of the stock model (> 1).
    #[serde(default = "d_stock_block")]
    pub stock_block_factor: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl SimParams {
    /// Check every parameter invariant; returns the first violation as a
    /// validation error naming the invariant.
    pub fn validate(&self) -> Result<()> {
        let v = |inv: &str, detail: String| Err(Error::validation(inv, detail));
        seconds_to_micros("dt_cont_s", self.dt_cont_s)?;
        seconds_to_micros("dt_disc_s", self.dt_disc_s)?;
        if self.dt_cont_s > self.dt_disc_s {
            return v(
                "dt_cont <= dt_disc",
                format!("dt_cont = {}, dt_disc = {}", self.dt_cont_s, self.dt_disc_s),
            );
        }
        if self.dt_cont_s < 0.01 - 1e-12 {
            return v("dt_cont >= 0.01 s", format!("dt_cont = {}", self.dt_cont_s));
        }
        if !(self.torso_radius_m > 0.0) {
            return v("torso_radius > 0", format!("{}", self.torso_radius_m));
        }
        if self.cell_edge_m < 2.0 * self.torso_radius_m - 1e-12 {
            return v(
                "cell_edge >= 2*torso_radius",
                format!(
                    "cell_edge = {}, torso_radius = {}",
                    self.cell_edge_m, self.torso_radius_m
                ),
            );
        }
        if !(self.v_max_mps > 0.0) {
            return v("v_max > 0", format!("{}", self.v_max_mps));
        }
        if self.zoom_radius_m > self.v_max_mps * self.dt_disc_s + 1e-12 {
            return v(
                "R <= v_max*dt_disc",
                format!(
                    "R = {}, v_max*dt_disc = {}",
                    self.zoom_radius_m,
                    self.v_max_mps * self.dt_disc_s
                ),
            );
        }
        if !(self.zoom_radius_m > 0.0) {
            return v("R > 0", format!("{}", self.zoom_radius_m));
        }
        if !(self.rho_thr_ped_m2 > 0.0) {
            return v("rho_thr > 0", format!("{}", self.rho_thr_ped_m2));
        }
        if self.k_max < 1 {
            return v("k_max >= 1", format!("{}", self.k_max));
        }
        if !(self.density_window_s > 0.0) {
            return v("density_window > 0", format!("{}", self.density_window_s));
        }
        if !(self.zoom_check_interval_s > 0.0) {
            return v(
                "zoom_check_interval > 0",
                format!("{}", self.zoom_check_interval_s),
            );
        }
        if !(self.relaxation_time_s > 0.0) {
            return v("relaxation_time > 0", format!("{}", self.relaxation_time_s));
        }
        if !(self.stock_block_factor > 1.0) {
            return v(
                "stock_block_factor > 1",
                format!("{}", self.stock_block_factor),
            );
        }
        if !(self.v_desired_mean_mps > 0.0) || self.v_desired_mean_mps > self.v_max_mps {
            return v(
                "0 < v_desired_mean <= v_max",
                format!("{}", self.v_desired_mean_mps),
            );
        }
        if !(self.mass_kg > 0.0) {
            return v("mass > 0", format!("{}", self.mass_kg));
        }
        Ok(())
    }

    /// Transit annulus width: strictly wider than the longest distance any
    /// agent can cover in one discrete frame. The discrete model may finish
    /// one quantized move past the v_max*dt budget (at most sqrt(2) cell
    /// edges), so the annulus is padded by two cell edges.
    pub fn transit_width_m(&self) -> f64 {
        self.v_max_mps * self.dt_disc_s + 2.0 * self.cell_edge_m
    }

    /// Maximum demotion displacement r_place = v_max * dt_disc.
    pub fn r_place_m(&self) -> f64 {
        self.v_max_mps * self.dt_disc_s
    }
}

/// A named spawn/exit region.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NamedRegion {
    pub name: String,
    pub polygon_m: Polygon,
}

/// One spawn stream: `count` agents released from `origin` at `rate_per_s`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpawnEntry {
    pub origin: String,
    pub rate_per_s: f64,
    pub count: u64,
}

/// Static world description.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub bounds_m: Polygon,
    #[serde(default)]
    pub obstacles_m: Vec<Polygon>,
    pub origins: Vec<NamedRegion>,
    pub destinations: Vec<NamedRegion>,
    /// Row-stochastic origin -> destination probabilities.
    pub od_matrix: Vec<Vec<f64>>,
    #[serde(default)]
    pub spawn_schedule: Vec<SpawnEntry>,
}

impl Scenario {
    pub fn origin_index(&self, name: &str) -> Option<usize> {
        self.origins.iter().position(|o| o.name == name)
    }

    pub fn destination_index(&self, name: &str) -> Option<usize> {
        self.destinations.iter().position(|d| d.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.od_matrix.len() != self.origins.len() {
            return Err(Error::validation(
                "od_matrix rows == origins",
                format!(
                    "{} rows for {} origins",
                    self.od_matrix.len(),
                    self.origins.len()
                ),
            ));
        }
        for (i, row) in self.od_matrix.iter().enumerate() {
            if row.len() != self.destinations.len() {
                return Err(Error::validation(
                    "od_matrix cols == destinations",
                    format!("row {} has {} entries", i, row.len()),
                ));
            }
            if row.iter().any(|&p| p < 0.0) {
                return Err(Error::validation(
                    "od probabilities >= 0",
                    format!("row {i}"),
                ));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::validation(
                    "od row sums to 1",
                    format!("row {i} sums to {sum}"),
                ));
            }
        }
        for (i, ob) in self.obstacles_m.iter().enumerate() {
            if ob
                .vertices()
                .iter()
                .any(|&p| !self.bounds_m.contains(p))
            {
                return Err(Error::validation(
                    "obstacles lie within bounds",
                    format!("obstacle {i} has a vertex outside the bounds"),
                ));
            }
        }
        for region in self.origins.iter().chain(self.destinations.iter()) {
            for (i, ob) in self.obstacles_m.iter().enumerate() {
                if polygons_interior_intersect(&region.polygon_m, ob) {
                    return Err(Error::validation(
                        "origins/destinations do not intersect obstacles",
                        format!("region '{}' intersects obstacle {}", region.name, i),
                    ));
                }
            }
        }
        for entry in &self.spawn_schedule {
            if self.origin_index(&entry.origin).is_none() {
                return Err(Error::validation(
                    "spawn origin exists",
                    format!("unknown origin '{}'", entry.origin),
                ));
            }
            if !(entry.rate_per_s > 0.0) {
                return Err(Error::validation(
                    "spawn rate > 0",
                    format!("origin '{}': rate {}", entry.origin, entry.rate_per_s),
                ));
            }
        }
        Ok(())
    }
}

/// On-disk document: scenario plus optional parameter block.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(flatten)]
    pub scenario: Scenario,
    #[serde(default)]
    pub params: SimParams,
}

/// Load a scenario document and validate every invariant. Violations are
/// reported as validation errors naming the failed invariant.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<(Scenario, SimParams)> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_scenario_str(&text)
}

pub fn parse_scenario_str(text: &str) -> Result<(Scenario, SimParams)> {
    let file: ScenarioFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.scenario.validate()?;
    file.params.validate()?;
    Ok((file.scenario, file.params))
}

pub fn scenario_to_string(scenario: &Scenario, params: &SimParams) -> String {
    serde_json::to_string_pretty(&ScenarioFile {
        scenario: scenario.clone(),
        params: params.clone(),
    })
    .expect("scenario serialization")
}

/// Cell shapes a discrete lattice may use. The engine runs quadratic cells;
/// the other shapes exist for the density bound bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellShape {
    Triangular,
    Quadratic,
    Hexagonal,
}

/// Maximum density representable on a lattice of the given unit-cell shape
/// and edge length: one pedestrian per cell, so 1/A of the unit cell.
pub fn max_discrete_density(shape: CellShape, edge_m: f64) -> f64 {
    assert!(edge_m > 0.0, "cell edge must be positive");
    let a2 = edge_m * edge_m;
    match shape {
        // A = sqrt(3)/4 a^2  ->  1/A = 4 sqrt(3) / (3 a^2)
        CellShape::Triangular => 4.0 * 3.0_f64.sqrt() / (3.0 * a2),
        CellShape::Quadratic => 1.0 / a2,
        // A = 3 sqrt(3)/2 a^2  ->  1/A = 2 sqrt(3) / (9 a^2)
        CellShape::Hexagonal => 2.0 * 3.0_f64.sqrt() / (9.0 * a2),
    }
}

// Documented constants, not computed: circular torsos of r = 0.23 m pack to
// about 5.46 ped/m^2 and 0.23 x 0.115 m elliptical torsos to about
// 10.47 ped/m^2. The packing factors behind them are carried as literature
// values only; no experiment here depends on them.
pub const MAX_DENSITY_CIRCULAR_TORSO: f64 = 5.46;
pub const MAX_DENSITY_ELLIPTICAL_TORSO: f64 = 10.47;

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn minimal_corridor_json() -> String {
        r#"{
            "name": "corridor",
            "bounds_m": [[0,0],[10,0],[10,4],[0,4]],
            "obstacles_m": [
                [[0,0],[10,0],[10,0.2],[0,0.2]],
                [[0,3.8],[10,3.8],[10,4],[0,4]]
            ],
            "origins": [{"name":"west","polygon_m":[[0.3,1],[1.3,1],[1.3,3],[0.3,3]]}],
            "destinations": [{"name":"east","polygon_m":[[9,1],[9.7,1],[9.7,3],[9,3]]}],
            "od_matrix": [[1.0]],
            "spawn_schedule": [{"origin":"west","rate_per_s":2.0,"count":10}]
        }"#
        .to_string()
    }

    #[test]
    fn loads_minimal_corridor() {
        let (scenario, params) = parse_scenario_str(&minimal_corridor_json()).unwrap();
        assert_eq!(scenario.obstacles_m.len(), 2);
        assert_eq!(params.v_desired_mean_mps, 1.34);
    }

    #[test]
    fn rejects_dt_ordering_violation() {
        let mut text = minimal_corridor_json();
        text = text.replace(
            "\"spawn_schedule\"",
            "\"params\": {\"dt_cont_s\": 0.4, \"dt_disc_s\": 0.3}, \"spawn_schedule\"",
        );
        let err = parse_scenario_str(&text).unwrap_err();
        match err {
            Error::Validation { invariant, .. } => {
                assert_eq!(invariant, "dt_cont <= dt_disc")
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn event_defaults_load_verbatim() {
        let (_, p) = parse_scenario_str(&minimal_corridor_json()).unwrap();
        assert_eq!(p.v_desired_mean_mps, 1.34);
        assert_eq!(p.cell_edge_m, 0.46);
        assert_eq!(p.rho_thr_ped_m2, 1.5);
        assert_eq!(p.relaxation_time_s, 0.5);
        assert_eq!(p.sf_a_mps2, 26.67);
        assert_eq!(p.sf_b_m, 0.06);
        assert_eq!(p.sf_kappa_kg_s2, 2.4e5);
        assert_eq!(p.sf_k_kg_ms, 1.2e5);
        assert_eq!(p.v_max_mps, 2.16);
        p.validate().unwrap();
    }

    #[test]
    fn max_density_values() {
        // quadratic 0.46 m cells: about 4.73 ped/m^2
        let q = max_discrete_density(CellShape::Quadratic, 0.46);
        assert!((q - 4.73).abs() < 0.01, "got {q}");
        assert!((max_discrete_density(CellShape::Quadratic, 1.0) - 1.0).abs() < 1e-12);
        // triangular at the minimal cell size 2*sqrt(3)*r: about 3.64
        let a_t = 2.0 * 3.0_f64.sqrt() * 0.23;
        let t = max_discrete_density(CellShape::Triangular, a_t);
        assert!((t - 3.64).abs() < 0.01, "got {t}");
        // hexagonal at 2*sqrt(3)/3*r: about 5.46
        let a_h = 2.0 * 3.0_f64.sqrt() / 3.0 * 0.23;
        let h = max_discrete_density(CellShape::Hexagonal, a_h);
        assert!((h - 5.46).abs() < 0.01, "got {h}");
    }

    #[test]
    fn round_trip_preserves_scenario() {
        let (scenario, params) = parse_scenario_str(&minimal_corridor_json()).unwrap();
        let text = scenario_to_string(&scenario, &params);
        let (again, params2) = parse_scenario_str(&text).unwrap();
        assert_eq!(params, params2);
        assert_eq!(scenario.bounds_m, again.bounds_m);
        assert_eq!(scenario.obstacles_m, again.obstacles_m);
        assert_eq!(scenario.od_matrix, again.od_matrix);
    }

    #[test]
    fn rejects_bad_od_rows() {
        let text = minimal_corridor_json().replace("[[1.0]]", "[[0.7]]");
        assert!(matches!(
            parse_scenario_str(&text),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn rejects_obstacle_outside_bounds() {
        let text = minimal_corridor_json().replace(
            "[[0,3.8],[10,3.8],[10,4],[0,4]]",
            "[[0,3.8],[12,3.8],[12,4],[0,4]]",
        );
        assert!(matches!(
            parse_scenario_str(&text),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn rejects_zoom_radius_exceeding_rplace() {
        let mut p = SimParams::default();
        p.zoom_radius_m = 2.0; // needs dt_disc >= 0.926 s at v_max 2.16
        p.dt_disc_s = 0.4;
        let err = p.validate().unwrap_err();
        match err {
            Error::Validation { invariant, .. } => assert_eq!(invariant, "R <= v_max*dt_disc"),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest::proptest! {
        /// The loader never returns invariant-violating parameters: either a
        /// fuzzed params block is rejected, or everything it returns
        /// validates.
        #[test]
        fn loader_output_always_validates(
            dt_cont in 0.005f64..0.6,
            dt_disc in 0.05f64..1.6,
            cell in 0.1f64..1.2,
            torso in 0.05f64..0.5,
            zoom_r in 0.1f64..4.0,
        ) {
            let json = format!(
                r#"{{
                    "bounds_m": [[0,0],[10,0],[10,4],[0,4]],
                    "origins": [{{"name":"w","polygon_m":[[1,1],[2,1],[2,3],[1,3]]}}],
                    "destinations": [{{"name":"e","polygon_m":[[8,1],[9,1],[9,3],[8,3]]}}],
                    "od_matrix": [[1.0]],
                    "params": {{
                        "dt_cont_s": {dt_cont:.4},
                        "dt_disc_s": {dt_disc:.4},
                        "cell_edge_m": {cell},
                        "torso_radius_m": {torso},
                        "zoom_radius_m": {zoom_r}
                    }}
                }}"#
            );
            if let Ok((_, p)) = parse_scenario_str(&json) {
                proptest::prop_assert!(p.validate().is_ok());
                proptest::prop_assert!(p.dt_cont_s <= p.dt_disc_s);
                proptest::prop_assert!(p.cell_edge_m >= 2.0 * p.torso_radius_m - 1e-12);
            }
        }
    }
}
