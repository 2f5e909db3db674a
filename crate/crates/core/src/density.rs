//! Sliding-window XT-density field over the grid.
//!
//! Both models report every executed step: for each agent, the cell owning
//! its position at that step. The density of a cell is the accumulated
//! presence time inside the window divided by cell area and window length,
//! so a single stationary occupant saturates at exactly 1/A.
//!
//! The window is half-open, (t - dT, t]: with a closed window an exact
//! multiple of the discrete step would count both endpoints and push a
//! stationary occupant above the 1/A bound. Rather than juggling step-index
//! boundary formulas, every record carries its exact microsecond timestamp
//! and queries filter on the window directly, which is equivalent and has
//! no index edge cases. Before one full window has elapsed the field is
//! "warming" and densities are taken over the elapsed time instead.

use crate::clock::micros_to_seconds;
use crate::grid::{CellIndex, Grid};
use crate::{Error, Result};
use std::collections::VecDeque;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ModelKind {
    Continuous,
    Discrete,
}

#[derive(Clone, Debug)]
struct StepRecord {
    t_us: u64,
    /// Flat cell index per agent present at this step.
    cells: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct DensityField {
    window_us: u64,
    dt_cont_us: u64,
    dt_disc_us: u64,
    cell_area: f64,
    cell_count: usize,
    cont: VecDeque<StepRecord>,
    disc: VecDeque<StepRecord>,
}

impl DensityField {
    pub fn new(grid: &Grid, window_us: u64, dt_cont_us: u64, dt_disc_us: u64) -> Self {
        DensityField {
            window_us,
            dt_cont_us,
            dt_disc_us,
            cell_area: grid.cell_area(),
            cell_count: grid.cell_count(),
            cont: VecDeque::new(),
            disc: VecDeque::new(),
        }
    }

    pub fn window_us(&self) -> u64 {
        self.window_us
    }

    pub fn is_warm(&self, t_us: u64) -> bool {
        t_us >= self.window_us
    }

    /// Record one executed model step: the owning cell of every agent at
    /// time `t_us`. Re-recording a step time is an error.
    pub fn record_step(
        &mut self,
        model: ModelKind,
        t_us: u64,
        cells: impl IntoIterator<Item = u32>,
    ) -> Result<()> {
        let buffer = match model {
            ModelKind::Continuous => &mut self.cont,
            ModelKind::Discrete => &mut self.disc,
        };
        if let Some(last) = buffer.back() {
            if t_us <= last.t_us {
                return Err(Error::runtime(
                    0,
                    format!("step at {t_us} us recorded twice or out of order"),
                ));
            }
        }
        buffer.push_back(StepRecord {
            t_us,
            cells: cells.into_iter().collect(),
        });
        // evict records that can never appear in a window again; keep one
        // extra step of slack since queries may be slightly older than the
        // newest record (model steps inside a frame interleave)
        let slack = self.dt_cont_us + self.dt_disc_us;
        let horizon = t_us.saturating_sub(self.window_us + slack);
        while buffer.front().is_some_and(|r| r.t_us <= horizon) {
            buffer.pop_front();
        }
        Ok(())
    }

    /// Effective window length at query time `t_us` (shorter while warming).
    fn effective_window_us(&self, t_us: u64) -> u64 {
        self.window_us.min(t_us)
    }

    /// XT-density of one cell at time t:
    /// (sum of continuous presences * dt_cont + discrete presences * dt_disc)
    /// / (A * window).
    pub fn density_at(&self, cell: CellIndex, grid: &Grid, t_us: u64) -> f64 {
        let flat = grid.flat(cell) as u32;
        let w = self.effective_window_us(t_us);
        if w == 0 {
            return 0.0;
        }
        let lo = t_us - w; // window is (lo, t]
        let count = |buf: &VecDeque<StepRecord>| -> u64 {
            buf.iter()
                .filter(|r| r.t_us > lo && r.t_us <= t_us)
                .map(|r| r.cells.iter().filter(|&&c| c == flat).count() as u64)
                .sum()
        };
        let presence_us = count(&self.cont) * self.dt_cont_us + count(&self.disc) * self.dt_disc_us;
        micros_to_seconds(presence_us) / (self.cell_area * micros_to_seconds(w))
    }

    /// Densities of every cell in one pass (flat indexing).
    pub fn densities(&self, t_us: u64) -> Vec<f64> {
        let mut presence_us = vec![0u64; self.cell_count];
        let w = self.effective_window_us(t_us);
        if w == 0 {
            return vec![0.0; self.cell_count];
        }
        let lo = t_us - w;
        for (buf, dt) in [(&self.cont, self.dt_cont_us), (&self.disc, self.dt_disc_us)] {
            for rec in buf.iter().filter(|r| r.t_us > lo && r.t_us <= t_us) {
                for &c in &rec.cells {
                    presence_us[c as usize] += dt;
                }
            }
        }
        let denom = self.cell_area * micros_to_seconds(w);
        presence_us
            .into_iter()
            .map(|us| micros_to_seconds(us) / denom)
            .collect()
    }

    /// All cells ordered by descending density; ties by lower flat index
    /// (stable).
    pub fn ordered_hotspots(&self, grid: &Grid, t_us: u64) -> Vec<(CellIndex, f64)> {
        let mut cells: Vec<(usize, f64)> = self.densities(t_us).into_iter().enumerate().collect();
        cells.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        cells
            .into_iter()
            .map(|(flat, rho)| (grid.unflat(flat), rho))
            .collect()
    }

    /// Plain-text matrix snapshot: one line per grid row (row 0 first),
    /// space-separated densities in ped/m^2.
    pub fn snapshot_text(&self, grid: &Grid, t_us: u64) -> String {
        let rho = self.densities(t_us);
        let mut out = String::new();
        for m in 0..grid.rows() {
            let row: Vec<String> = (0..grid.cols())
                .map(|n| format!("{:.4}", rho[m * grid.cols() + n]))
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Polygon, Vec2};

    fn grid_5x5() -> Grid {
        let bounds = Polygon::axis_aligned_rect(Vec2::ZERO, Vec2::new(5.0 * 0.46, 5.0 * 0.46));
        Grid::new(&bounds, &[], 0.46).unwrap()
    }

    #[test]
    fn empty_field_is_zero() {
        let grid = grid_5x5();
        let f = DensityField::new(&grid, 2_000_000, 50_000, 400_000);
        assert_eq!(f.density_at(CellIndex::new(2, 2), &grid, 2_000_000), 0.0);
    }

    #[test]
    fn stationary_discrete_occupant_saturates_at_inverse_area() {
        // A = 0.2116 m^2, window 2 s, dt_disc 0.4 s: exactly 5 in-window
        // steps -> 5*0.4/(0.2116*2) = 1/A = 4.73 ped/m^2
        let grid = grid_5x5();
        let mut f = DensityField::new(&grid, 2_000_000, 50_000, 400_000);
        let cell = CellIndex::new(2, 2);
        let flat = grid.flat(cell) as u32;
        for k in 1..=25u64 {
            f.record_step(ModelKind::Discrete, k * 400_000, [flat]).unwrap();
        }
        let rho = f.density_at(cell, &grid, 10_000_000);
        let expect = 1.0 / grid.cell_area();
        assert!((rho - expect).abs() < 1e-9, "rho {rho} vs 1/A {expect}");
        assert!((rho - 4.73).abs() < 0.01);
    }

    #[test]
    fn window_is_half_open() {
        let grid = grid_5x5();
        let mut f = DensityField::new(&grid, 2_000_000, 50_000, 400_000);
        let flat = grid.flat(CellIndex::new(1, 1)) as u32;
        // one record exactly at the lower window edge: excluded
        f.record_step(ModelKind::Discrete, 400_000, [flat]).unwrap();
        let t = 2_400_000; // window (0.4 s, 2.4 s]
        assert_eq!(f.density_at(CellIndex::new(1, 1), &grid, t), 0.0);
        // one exactly at the upper edge: included
        let mut f2 = DensityField::new(&grid, 2_000_000, 50_000, 400_000);
        f2.record_step(ModelKind::Discrete, t, [flat]).unwrap();
        assert!(f2.density_at(CellIndex::new(1, 1), &grid, t) > 0.0);
    }

    #[test]
    fn continuous_presence_counts_per_step() {
        // one continuous agent for 20 steps in one cell: k_i = 20
        let grid = grid_5x5();
        let mut f = DensityField::new(&grid, 2_000_000, 50_000, 1_000_000);
        let cell = CellIndex::new(0, 3);
        let flat = grid.flat(cell) as u32;
        for l in 1..=20u64 {
            f.record_step(ModelKind::Continuous, l * 50_000, [flat]).unwrap();
        }
        let rho = f.density_at(cell, &grid, 2_000_000);
        // 20 * 0.05 s presence over a 2 s window
        let expect = (20.0 * 0.05) / (grid.cell_area() * 2.0);
        assert!((rho - expect).abs() < 1e-12);
    }

    #[test]
    fn half_window_presence_is_half_saturation() {
        let grid = grid_5x5();
        let mut f = DensityField::new(&grid, 2_000_000, 50_000, 400_000);
        let cell = CellIndex::new(2, 2);
        let flat = grid.flat(cell) as u32;
        // agent present only during the second half of the window
        for l in 21..=40u64 {
            f.record_step(ModelKind::Continuous, l * 50_000, [flat]).unwrap();
        }
        let rho = f.density_at(cell, &grid, 2_000_000);
        let expect = 1.0 / (2.0 * grid.cell_area());
        // within one-step quantization
        let quantum = 0.05 / (grid.cell_area() * 2.0);
        assert!((rho - expect).abs() <= quantum + 1e-12, "rho {rho} vs {expect}");
    }

    #[test]
    fn double_recording_is_an_error() {
        let grid = grid_5x5();
        let mut f = DensityField::new(&grid, 2_000_000, 50_000, 400_000);
        f.record_step(ModelKind::Discrete, 400_000, []).unwrap();
        assert!(f.record_step(ModelKind::Discrete, 400_000, []).is_err());
    }

    #[test]
    fn warming_field_uses_elapsed_time() {
        let grid = grid_5x5();
        let mut f = DensityField::new(&grid, 2_000_000, 50_000, 400_000);
        let cell = CellIndex::new(2, 2);
        let flat = grid.flat(cell) as u32;
        f.record_step(ModelKind::Discrete, 400_000, [flat]).unwrap();
        assert!(!f.is_warm(400_000));
        // elapsed 0.4 s, presence 0.4 s: saturated already during warm-up
        let rho = f.density_at(cell, &grid, 400_000);
        assert!((rho - 1.0 / grid.cell_area()).abs() < 1e-9);
    }

    #[test]
    fn hotspot_ordering_with_ties() {
        let grid = grid_5x5();
        let mut f = DensityField::new(&grid, 2_000_000, 50_000, 400_000);
        // uniform zero field: all ties, flat-index order
        let spots = f.ordered_hotspots(&grid, 2_000_000);
        assert_eq!(spots[0].0, CellIndex::new(0, 0));
        assert_eq!(spots.len(), 25);

        // single occupied cell comes first; denser beats less dense
        let hot = grid.flat(CellIndex::new(3, 3)) as u32;
        let warm = grid.flat(CellIndex::new(1, 4)) as u32;
        for k in 1..=5u64 {
            let cells = if k <= 2 { vec![hot, warm] } else { vec![hot] };
            f.record_step(ModelKind::Discrete, k * 400_000, cells).unwrap();
        }
        let spots = f.ordered_hotspots(&grid, 2_000_000);
        assert_eq!(spots[0].0, CellIndex::new(3, 3));
        assert_eq!(spots[1].0, CellIndex::new(1, 4));
        assert!(spots[0].1 > spots[1].1);
    }

    #[test]
    fn saturation_bound_holds() {
        // an occupant recorded at every step of both models never exceeds
        // 1/A by more than one boundary step per model
        let grid = grid_5x5();
        let mut f = DensityField::new(&grid, 2_000_000, 50_000, 400_000);
        let cell = CellIndex::new(2, 2);
        let flat = grid.flat(cell) as u32;
        for l in 1..=60u64 {
            f.record_step(ModelKind::Continuous, l * 50_000, [flat]).unwrap();
        }
        let rho = f.density_at(cell, &grid, 3_000_000);
        let bound = 1.0 / grid.cell_area() * (1.0 + 0.05 / 2.0);
        assert!(rho <= bound, "rho {rho} above saturation bound {bound}");
    }

    #[test]
    fn matches_brute_force_recount_on_random_runs() {
        use rand::{Rng, SeedableRng};
        let grid = grid_5x5();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let window: u64 = rng.random_range(3..10) * 200_000;
            let mut f = DensityField::new(&grid, window, 50_000, 400_000);
            // independent log of everything recorded
            let mut log: Vec<(ModelKind, u64, Vec<u32>)> = Vec::new();
            let steps = rng.random_range(5..40);
            for k in 1..=steps {
                let t = k * 50_000;
                let n_agents = rng.random_range(0..6);
                let cells: Vec<u32> = (0..n_agents)
                    .map(|_| rng.random_range(0..25u32))
                    .collect();
                f.record_step(ModelKind::Continuous, t, cells.clone()).unwrap();
                log.push((ModelKind::Continuous, t, cells));
                if k % 8 == 0 {
                    let t_d = t + 1; // distinct timestamp for the discrete step
                    let cells: Vec<u32> =
                        (0..rng.random_range(0..4)).map(|_| rng.random_range(0..25u32)).collect();
                    f.record_step(ModelKind::Discrete, t_d, cells.clone()).unwrap();
                    log.push((ModelKind::Discrete, t_d, cells));
                }
            }
            let t_query = steps * 50_000;
            // brute-force recount from the log
            for flat in 0..25u32 {
                let w = window.min(t_query);
                let lo = t_query - w;
                let mut presence = 0u64;
                for (kind, t, cells) in &log {
                    if *t > lo && *t <= t_query {
                        let dt = match kind {
                            ModelKind::Continuous => 50_000,
                            ModelKind::Discrete => 400_000,
                        };
                        presence += cells.iter().filter(|&&c| c == flat).count() as u64 * dt;
                    }
                }
                let expect = micros_to_seconds(presence)
                    / (grid.cell_area() * micros_to_seconds(w));
                let got = f.density_at(grid.unflat(flat as usize), &grid, t_query);
                assert!((got - expect).abs() < 1e-12, "cell {flat}: {got} vs {expect}");
            }
        }
    }
}
