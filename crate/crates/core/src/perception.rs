//! Point-cloud clustering, click-to-target snapping and the straight grasp
//! approach.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::{Point2, Point3};
use crate::sim::{retime_constant_speed, Scene, SimError, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DbscanParams {
    pub eps: f64,
    /// Minimum neighborhood size for a core point, the point itself included.
    pub min_pts: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self { eps: 0.02, min_pts: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PerceptionError {
    #[error("no clusters to select from")]
    NoClusters,
    #[error("eps must be positive and min_pts at least 1")]
    InvalidParams,
    #[error("no object lies under the selected cluster")]
    NoObject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    /// Indices into the clustered cloud, ascending.
    pub members: Vec<usize>,
    pub centroid: Point3,
}

/// What the UI needs to draw a cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub id: usize,
    pub centroid: Point3,
    pub point_count: usize,
}

impl From<&Cluster> for ClusterSummary {
    fn from(c: &Cluster) -> Self {
        Self { id: c.id, centroid: c.centroid, point_count: c.members.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub clusters: Vec<Cluster>,
    pub noise: Vec<usize>,
    /// Cluster id per point, `None` for noise.
    pub labels: Vec<Option<usize>>,
}

type Cell = (i64, i64, i64);

/// Uniform grid with cells of side `eps`: every neighbor of a point lies in
/// the 27 cells around it.
struct Grid<'a> {
    points: &'a [Point3],
    eps: f64,
    cells: BTreeMap<Cell, Vec<usize>>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [Point3], eps: f64) -> Self {
        let mut cells: BTreeMap<Cell, Vec<usize>> = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::cell(p, eps)).or_default().push(i);
        }
        Self { points, eps, cells }
    }

    fn cell(p: &Point3, eps: f64) -> Cell {
        let f = |v: f64| libm::floor(v / eps) as i64;
        (f(p.x), f(p.y), f(p.z))
    }

    /// Indices within `eps` of point `i` (itself included), ascending.
    fn neighbors(&self, i: usize, out: &mut Vec<usize>) {
        out.clear();
        let p = self.points[i];
        let (cx, cy, cz) = Self::cell(&p, self.eps);
        let eps_sq = self.eps * self.eps;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        out.extend(bucket.iter().copied().filter(|&j| self.points[j].distance_sq(p) <= eps_sq));
                    }
                }
            }
        }
        out.sort_unstable();
    }
}

/// Density-based clustering. Points are visited in index order; each
/// unvisited core point starts a cluster that absorbs everything density
/// reachable from it, so a border point shared by two clusters goes to the
/// one created first.
pub fn dbscan(points: &[Point3], params: &DbscanParams) -> Result<Clustering, PerceptionError> {
    if !(params.eps > 0.0 && params.eps.is_finite()) || params.min_pts == 0 {
        return Err(PerceptionError::InvalidParams);
    }
    let grid = Grid::new(points, params.eps);
    let mut labels: Vec<Option<usize>> = vec![None; points.len()];
    let mut visited = vec![false; points.len()];
    let mut next_id = 0usize;
    let mut hood = Vec::new();
    let mut inner = Vec::new();
    let mut queue = Vec::new();

    for i in 0..points.len() {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        grid.neighbors(i, &mut hood);
        if hood.len() < params.min_pts {
            continue;
        }
        let id = next_id;
        next_id += 1;
        labels[i] = Some(id);
        queue.clear();
        queue.extend(hood.iter().copied().filter(|&j| j != i));
        while let Some(j) = queue.pop() {
            if labels[j].is_none() {
                labels[j] = Some(id);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            grid.neighbors(j, &mut inner);
            if inner.len() >= params.min_pts {
                queue.extend(inner.iter().copied().filter(|&k| labels[k].is_none() || !visited[k]));
            }
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); next_id];
    let mut noise = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match l {
            Some(c) => members[*c].push(i),
            None => noise.push(i),
        }
    }
    let clusters = members
        .into_iter()
        .enumerate()
        .map(|(id, members)| {
            let n = members.len() as f64;
            let sum = members.iter().fold(Point3::default(), |s, &m| {
                let p = points[m];
                Point3::new(s.x + p.x, s.y + p.y, s.z + p.z)
            });
            Cluster { id, centroid: Point3::new(sum.x / n, sum.y / n, sum.z / n), members }
        })
        .collect();
    Ok(Clustering { clusters, noise, labels })
}

/// The cluster whose planar centroid is nearest the click; the lowest id
/// wins ties. Returns that cluster's id and centroid, never the click.
pub fn select_target(clusters: &[Cluster], click: Point2) -> Result<(usize, Point3), PerceptionError> {
    let mut best: Option<(f64, &Cluster)> = None;
    for c in clusters {
        let d = c.centroid.planar().distance(click);
        let better = match best {
            None => true,
            Some((bd, bc)) => d < bd || (d == bd && c.id < bc.id),
        };
        if better {
            best = Some((d, c));
        }
    }
    best.map(|(_, c)| (c.id, c.centroid)).ok_or(PerceptionError::NoClusters)
}

/// Id of the standing scene object whose center is nearest `p` in the plane;
/// the lowest id wins ties.
pub fn object_near(scene: &Scene, p: Point2) -> Option<u32> {
    scene
        .objects
        .iter()
        .filter(|o| o.standing)
        .min_by(|a, b| a.center.distance(p).total_cmp(&b.center.distance(p)).then(a.id.cmp(&b.id)))
        .map(|o| o.id)
}

/// Straight segment from `start` to `target` at constant speed.
pub fn plan_grasp_approach(start: Point2, target: Point2, speed: f64, rate: f64) -> Result<Trajectory, SimError> {
    if start == target {
        return retime_constant_speed(&[start], speed, rate);
    }
    retime_constant_speed(&[start, target], speed, rate)
}
