//! Slab decomposition of a point cloud with ghost margins, and the merge that
//! deduplicates per-partition models by final position.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::SplatModel;
use crate::iso::{knn_mean_distances, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    /// Euclidean distance from `p` to the closed box, 0 inside.
    pub fn distance(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|a| {
                let d = (self.min[a] - p[a]).max(p[a] - self.max[a]).max(0.0);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub id: usize,
    /// Axis the slabs are cut along.
    pub axis: usize,
    pub owned_box: Aabb,
    /// Faces whose max side is inclusive (those on the global max).
    pub closed_max: [bool; 3],
    /// Slab position: first and last slabs extend to infinity along `axis`
    /// when merging.
    pub first: bool,
    pub last: bool,
    pub ghost_margin: f64,
    /// Indices into the source cloud.
    pub owned_indices: Vec<usize>,
    pub ghost_indices: Vec<usize>,
    pub owned_points: PointCloud,
    pub ghost_points: PointCloud,
}

impl Partition {
    /// Owned points followed by ghost points.
    pub fn training_cloud(&self) -> PointCloud {
        let mut points = self.owned_points.points.clone();
        points.extend_from_slice(&self.ghost_points.points);
        PointCloud { points }
    }

    /// Membership in the slab along the cut axis only, with the outer slabs
    /// unbounded. Every point of space belongs to exactly one partition.
    pub fn owns_region(&self, p: [f64; 3]) -> bool {
        let a = self.axis;
        (self.first || p[a] >= self.owned_box.min[a]) && (self.last || p[a] < self.owned_box.max[a])
    }
}

/// Half-open box membership: min faces inclusive, max faces exclusive except
/// on the global max.
pub fn owns(p: &Partition, position: [f64; 3]) -> bool {
    (0..3).all(|a| {
        let (lo, hi) = (p.owned_box.min[a], p.owned_box.max[a]);
        position[a] >= lo && (position[a] < hi || (p.closed_max[a] && position[a] == hi))
    })
}

/// Three times the median nearest-neighbor spacing of the cloud.
pub fn default_ghost_margin(pc: &PointCloud) -> f64 {
    if pc.len() < 2 {
        return 0.0;
    }
    let mut d = knn_mean_distances(&pc.positions(), 1);
    d.sort_by(f64::total_cmp);
    3.0 * d[d.len() / 2]
}

/// Cuts the global bounding box into `n` slabs along its longest axis at
/// point-count quantiles.
pub fn partition_cloud(pc: &PointCloud, n: usize, ghost_margin: f64) -> Result<Vec<Partition>> {
    if pc.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if n == 0 || n > pc.len() {
        return Err(Error::TooManyPartitions { partitions: n, points: pc.len() });
    }
    if !(ghost_margin >= 0.0) {
        return Err(Error::InvalidConfig(format!("ghost margin {ghost_margin} must be non-negative")));
    }
    let (lo, hi) = pc.bounds().expect("non-empty");
    let axis = (0..3).fold(0, |best, a| if hi[a] - lo[a] > hi[best] - lo[best] { a } else { best });
    let coord = |i: usize| pc.points[i].position[axis];

    let mut sorted: Vec<usize> = (0..pc.len()).collect();
    sorted.sort_by(|&a, &b| coord(a).total_cmp(&coord(b)).then(a.cmp(&b)));
    let total = pc.len();
    let cuts: Vec<f64> = (1..n)
        .map(|k| {
            let i = k * total / n;
            0.5 * (coord(sorted[i - 1]) + coord(sorted[i]))
        })
        .collect();

    let mut parts: Vec<Partition> = (0..n)
        .map(|k| {
            let mut min = lo;
            let mut max = hi;
            if k > 0 {
                min[axis] = cuts[k - 1];
            }
            if k + 1 < n {
                max[axis] = cuts[k];
            }
            let mut closed_max = [true; 3];
            closed_max[axis] = k + 1 == n;
            Partition {
                id: k,
                axis,
                owned_box: Aabb { min, max },
                closed_max,
                first: k == 0,
                last: k + 1 == n,
                ghost_margin,
                owned_indices: Vec::new(),
                ghost_indices: Vec::new(),
                owned_points: PointCloud::default(),
                ghost_points: PointCloud::default(),
            }
        })
        .collect();

    for i in 0..total {
        let c = coord(i);
        // number of cuts at or below c gives the slab
        let slab = cuts.partition_point(|&cut| cut <= c);
        parts[slab].owned_indices.push(i);
    }
    if ghost_margin > 0.0 {
        for part in &mut parts {
            for i in 0..total {
                let p = pc.points[i].position;
                if !owns(part, p) && part.owned_box.distance(p) <= ghost_margin {
                    part.ghost_indices.push(i);
                }
            }
        }
    }
    for part in &mut parts {
        part.owned_points = pc.subset(&part.owned_indices);
        part.ghost_points = pc.subset(&part.ghost_indices);
    }
    Ok(parts)
}

/// Keeps, from each partition's model, the Gaussians whose final position
/// lies in that partition's region. Output is ordered by partition id and
/// then by index within the model.
pub fn merge_models(models: &[SplatModel], partitions: &[Partition]) -> Result<SplatModel> {
    if models.len() != partitions.len() {
        return Err(Error::MismatchedCounts { models: models.len(), partitions: partitions.len() });
    }
    let mut by_id: Vec<&Partition> = partitions.iter().collect();
    by_id.sort_by_key(|p| p.id);
    let mut merged = SplatModel::default();
    for part in by_id {
        let mut matching = models.iter().filter(|m| m.origin_partition == Some(part.id));
        let model = matching
            .next()
            .ok_or_else(|| Error::ManifestMismatch(format!("no model for partition {}", part.id)))?;
        if matching.next().is_some() {
            return Err(Error::ManifestMismatch(format!("several models claim partition {}", part.id)));
        }
        merged.iteration = merged.iteration.max(model.iteration);
        merged.gaussians.extend(model.gaussians.iter().filter(|g| part.owns_region(g.mu)).copied());
    }
    Ok(merged)
}

/// Serializable description of a partition; point membership is stored as
/// ranges of indices into the source cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub id: usize,
    pub axis: usize,
    pub owned_box: Aabb,
    pub closed_max: [bool; 3],
    pub first: bool,
    pub last: bool,
    pub ghost_margin: f64,
    pub owned_ranges: Vec<[usize; 2]>,
    pub ghost_ranges: Vec<[usize; 2]>,
}

fn to_ranges(indices: &[usize]) -> Vec<[usize; 2]> {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<[usize; 2]> = Vec::new();
    for i in sorted {
        match out.last_mut() {
            Some(r) if r[1] == i => r[1] = i + 1,
            _ => out.push([i, i + 1]),
        }
    }
    out
}

fn from_ranges(ranges: &[[usize; 2]]) -> Vec<usize> {
    ranges.iter().flat_map(|r| r[0]..r[1]).collect()
}

impl PartitionManifest {
    pub fn from_partition(p: &Partition) -> Self {
        Self {
            id: p.id,
            axis: p.axis,
            owned_box: p.owned_box,
            closed_max: p.closed_max,
            first: p.first,
            last: p.last,
            ghost_margin: p.ghost_margin,
            owned_ranges: to_ranges(&p.owned_indices),
            ghost_ranges: to_ranges(&p.ghost_indices),
        }
    }

    /// The partition's region without any points, enough to merge.
    pub fn to_region(&self) -> Partition {
        Partition {
            id: self.id,
            axis: self.axis,
            owned_box: self.owned_box,
            closed_max: self.closed_max,
            first: self.first,
            last: self.last,
            ghost_margin: self.ghost_margin,
            owned_indices: Vec::new(),
            ghost_indices: Vec::new(),
            owned_points: PointCloud::default(),
            ghost_points: PointCloud::default(),
        }
    }

    /// Rebuilds the partition against the cloud it was cut from.
    pub fn to_partition(&self, cloud: &PointCloud) -> Result<Partition> {
        let owned_indices = from_ranges(&self.owned_ranges);
        let ghost_indices = from_ranges(&self.ghost_ranges);
        if let Some(&bad) = owned_indices.iter().chain(&ghost_indices).find(|&&i| i >= cloud.len()) {
            return Err(Error::ManifestMismatch(format!(
                "partition {} references point {bad} of a {}-point cloud",
                self.id,
                cloud.len()
            )));
        }
        Ok(Partition {
            id: self.id,
            axis: self.axis,
            owned_box: self.owned_box,
            closed_max: self.closed_max,
            first: self.first,
            last: self.last,
            ghost_margin: self.ghost_margin,
            owned_points: cloud.subset(&owned_indices),
            ghost_points: cloud.subset(&ghost_indices),
            owned_indices,
            ghost_indices,
        })
    }
}
