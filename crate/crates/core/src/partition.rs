//! The current spatial decomposition: continuous zones, their transit
//! annuli, and the discrete remainder.
//!
//! A zone is a disk of radius k*R wrapped by a transit annulus of width
//! w_Tr > v_max * dt_disc, so nothing can cross the annulus in one frame
//! without being seen by the transformation machinery. Zones never overlap
//! each other's annuli; the zoom controller merges would-be overlappers.

use crate::geometry::{Circle, Vec2};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ZoneId(pub u32);

impl std::fmt::Display for ZoneId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "z{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Zone {
    pub id: ZoneId,
    /// Density center-of-mass the zone was sized around.
    pub center: Vec2,
    /// Size multiplier: the core disk has radius k * ring_radius.
    pub k: u32,
    /// Ring unit R.
    pub ring_radius: f64,
    /// Transit annulus width w_Tr.
    pub transit_width: f64,
    pub created_frame: u64,
}

impl Zone {
    pub fn core_radius(&self) -> f64 {
        self.k as f64 * self.ring_radius
    }

    pub fn outer_radius(&self) -> f64 {
        self.core_radius() + self.transit_width
    }

    pub fn core_circle(&self) -> Circle {
        Circle::new(self.center, self.core_radius())
    }

    pub fn outer_circle(&self) -> Circle {
        Circle::new(self.center, self.outer_radius())
    }

    pub fn contains_core(&self, p: Vec2) -> bool {
        self.center.distance(p) < self.core_radius()
    }

    pub fn contains_outer(&self, p: Vec2) -> bool {
        self.center.distance(p) <= self.outer_radius()
    }
}

/// Which model owns a point.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Region {
    /// Inside a zone core: continuous model only.
    Core(ZoneId),
    /// Inside a transit annulus: both models, transformations happen here.
    Transit(ZoneId),
    /// Discrete remainder.
    Remainder,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PartitionMode {
    Hybrid,
    PureContinuous,
    PureDiscrete,
}

#[derive(Clone, Debug)]
pub struct Partition {
    pub mode: PartitionMode,
    zones: Vec<Zone>,
}

impl Partition {
    pub fn new(mode: PartitionMode) -> Self {
        Partition {
            mode,
            zones: Vec::new(),
        }
    }

    pub fn zones(&self) -> &[Zone] {
        &self.zones
    }

    pub fn zone(&self, id: ZoneId) -> Option<&Zone> {
        self.zones.iter().find(|z| z.id == id)
    }

    pub fn set_zones(&mut self, zones: Vec<Zone>) {
        self.zones = zones;
    }

    /// Region owning a point. In overlapping transit annuli (cores never
    /// overlap annuli) the point belongs to the zone whose core it is
    /// closest to, deterministically.
    pub fn region_of(&self, p: Vec2) -> Region {
        match self.mode {
            PartitionMode::PureContinuous => return Region::Core(ZoneId(0)),
            PartitionMode::PureDiscrete => return Region::Remainder,
            PartitionMode::Hybrid => {}
        }
        let mut best_transit: Option<(f64, ZoneId)> = None;
        for z in &self.zones {
            let d = z.center.distance(p);
            if d < z.core_radius() {
                return Region::Core(z.id);
            }
            if d <= z.outer_radius() {
                let depth = d - z.core_radius();
                if best_transit.map_or(true, |(bd, bid)| {
                    depth < bd || (depth == bd && z.id < bid)
                }) {
                    best_transit = Some((depth, z.id));
                }
            }
        }
        match best_transit {
            Some((_, id)) => Region::Transit(id),
            None => Region::Remainder,
        }
    }

    /// True when the point lies in any transit annulus.
    pub fn in_transit(&self, p: Vec2) -> bool {
        matches!(self.region_of(p), Region::Transit(_))
    }

    /// True when the point lies in any zone core.
    pub fn in_core(&self, p: Vec2) -> bool {
        matches!(self.region_of(p), Region::Core(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zone(id: u32, center: Vec2, k: u32) -> Zone {
        Zone {
            id: ZoneId(id),
            center,
            k,
            ring_radius: 2.0,
            transit_width: 1.5,
            created_frame: 0,
        }
    }

    #[test]
    fn region_classification() {
        let mut p = Partition::new(PartitionMode::Hybrid);
        p.set_zones(vec![zone(1, Vec2::ZERO, 2)]); // core 4.0, outer 5.5
        assert_eq!(p.region_of(Vec2::new(1.0, 0.0)), Region::Core(ZoneId(1)));
        assert_eq!(p.region_of(Vec2::new(4.5, 0.0)), Region::Transit(ZoneId(1)));
        assert_eq!(p.region_of(Vec2::new(7.0, 0.0)), Region::Remainder);
        // boundary: core edge belongs to transit (core is open)
        assert_eq!(p.region_of(Vec2::new(4.0, 0.0)), Region::Transit(ZoneId(1)));
        // outer edge still transit (closed)
        assert_eq!(p.region_of(Vec2::new(5.5, 0.0)), Region::Transit(ZoneId(1)));
    }

    #[test]
    fn pure_modes_ignore_zones() {
        let p = Partition::new(PartitionMode::PureContinuous);
        assert!(matches!(p.region_of(Vec2::new(100.0, 3.0)), Region::Core(_)));
        let p = Partition::new(PartitionMode::PureDiscrete);
        assert_eq!(p.region_of(Vec2::ZERO), Region::Remainder);
    }

    #[test]
    fn overlapping_annuli_pick_nearest_core() {
        let mut p = Partition::new(PartitionMode::Hybrid);
        // cores at distance 9: cores (r=4) don't overlap the other's
        // annulus (outer 5.5) but the annuli overlap each other
        p.set_zones(vec![
            zone(1, Vec2::ZERO, 2),
            zone(2, Vec2::new(9.0, 0.0), 2),
        ]);
        assert_eq!(p.region_of(Vec2::new(4.4, 0.0)), Region::Transit(ZoneId(1)));
        assert_eq!(p.region_of(Vec2::new(4.6, 0.0)), Region::Transit(ZoneId(2)));
    }
}
