//! Random-waypoint mobility in a square field and the geometric graph it induces.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, TopologyError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaypointModel {
    /// Side of the square field, meters.
    pub field_size: f64,
    /// Two nodes are neighbors when strictly closer than this, meters.
    pub comm_range: f64,
    /// Speed range in m/s; `speed_min > 0`.
    pub speed_min: f64,
    pub speed_max: f64,
}

impl Default for WaypointModel {
    fn default() -> Self {
        Self {
            field_size: 10.0,
            comm_range: 5.0,
            speed_min: 0.1,
            speed_max: 1.0,
        }
    }
}

impl WaypointModel {
    pub fn validate(&self) -> Result<(), TopologyError> {
        if !(self.field_size > 0.0) {
            return Err(TopologyError::InvalidMobility("field_size must be positive".to_string()));
        }
        if !(self.comm_range > 0.0) {
            return Err(TopologyError::InvalidMobility("comm_range must be positive".to_string()));
        }
        if !(self.speed_min > 0.0 && self.speed_min <= self.speed_max) {
            return Err(TopologyError::InvalidMobility(
                "need 0 < speed_min <= speed_max".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Walker {
    pos: [f64; 2],
    target: [f64; 2],
    speed: f64,
}

/// Node positions evolving under the waypoint model. Zero pause time.
#[derive(Debug, Clone)]
pub struct WaypointMotion {
    model: WaypointModel,
    walkers: Vec<Walker>,
}

impl WaypointMotion {
    pub fn new<R: Rng + ?Sized>(model: WaypointModel, n: usize, rng: &mut R) -> Self {
        let walkers = (0..n)
            .map(|_| {
                let pos = random_point(&model, rng);
                let target = random_point(&model, rng);
                let speed = random_speed(&model, rng);
                Walker { pos, target, speed }
            })
            .collect();
        Self { model, walkers }
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.walkers.iter().map(|w| w.pos).collect()
    }

    /// Move every node for `dt` seconds.
    pub fn advance<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) {
        let model = self.model;
        for w in &mut self.walkers {
            let mut left = dt;
            while left > 0.0 {
                let dx = w.target[0] - w.pos[0];
                let dy = w.target[1] - w.pos[1];
                let dist = dx.hypot(dy);
                let reach = w.speed * left;
                if reach < dist {
                    let f = reach / dist;
                    w.pos[0] += f * dx;
                    w.pos[1] += f * dy;
                    left = 0.0;
                } else {
                    w.pos = w.target;
                    left -= dist / w.speed;
                    w.target = random_point(&model, rng);
                    w.speed = random_speed(&model, rng);
                }
            }
        }
    }

    pub fn graph(&self, n_ref: usize) -> Result<Graph, TopologyError> {
        geometric_graph(&self.positions(), n_ref, self.model.comm_range)
    }
}

fn random_point<R: Rng + ?Sized>(model: &WaypointModel, rng: &mut R) -> [f64; 2] {
    [
        model.field_size * rng.random::<f64>(),
        model.field_size * rng.random::<f64>(),
    ]
}

fn random_speed<R: Rng + ?Sized>(model: &WaypointModel, rng: &mut R) -> f64 {
    model.speed_min + (model.speed_max - model.speed_min) * rng.random::<f64>()
}

/// Edge between every pair strictly closer than `range`.
pub fn geometric_graph(positions: &[[f64; 2]], n_ref: usize, range: f64) -> Result<Graph, TopologyError> {
    let n = positions.len();
    let mut g = Graph::empty(n, n_ref)?;
    for u in 0..n {
        for v in (u + 1)..n {
            let d = (positions[u][0] - positions[v][0]).hypot(positions[u][1] - positions[v][1]);
            if d < range {
                g.add_edge(u, v)?;
            }
        }
    }
    Ok(g)
}
