//! Occupancy mapping and robot-centric signed distance fields.
//!
//! Point clouds are fused into a globally consistent occupancy grid by
//! counting per-voxel hits and misses along sensor rays. Signed-distance
//! windows are derived from the grid with an exact separable squared
//! Euclidean distance transform and queried with trilinear interpolation.

mod esdf;

pub use esdf::{compute_esdf, DistanceSample, EsdfWindow};

use nalgebra::Vector3;

use crate::model::Pose;

/// Depth points in the sensor frame together with the sensor pose.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub sensor_pose: Pose,
}

/// Derived per-voxel occupancy state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoxelState {
    Unknown,
    Free,
    Occupied,
}

/// Fixed-extent voxel grid accumulating hit/miss counters per voxel.
///
/// A voxel is occupied iff `hits >= hit_threshold` and `hits > misses`;
/// it is unknown iff it was never observed. Rays reaching outside the
/// grid are clamped to the grid bounds.
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    resolution: f64,
    /// World position of the low corner of voxel (0, 0, 0).
    origin: Vector3<f64>,
    dims: [usize; 3],
    hits: Vec<u32>,
    misses: Vec<u32>,
    hit_threshold: u32,
    /// Endpoints below this height register as free-space rays rather
    /// than hits (ground plane filtering). `None` disables the filter.
    pub ground_filter_z: Option<f64>,
}

impl OccupancyGrid {
    pub fn new(origin: Vector3<f64>, dims: [usize; 3], resolution: f64) -> Self {
        assert!(resolution > 0.0);
        let n = dims[0] * dims[1] * dims[2];
        Self {
            resolution,
            origin,
            dims,
            hits: vec![0; n],
            misses: vec![0; n],
            hit_threshold: 1,
            ground_filter_z: None,
        }
    }

    /// Grid spanning `[min, max]`, expanded to whole voxels.
    pub fn from_bounds(min: Vector3<f64>, max: Vector3<f64>, resolution: f64) -> Self {
        let dims = [
            ((max[0] - min[0]) / resolution).ceil().max(1.0) as usize,
            ((max[1] - min[1]) / resolution).ceil().max(1.0) as usize,
            ((max[2] - min[2]) / resolution).ceil().max(1.0) as usize,
        ];
        Self::new(min, dims, resolution)
    }

    /// Grid with the given voxels pre-marked occupied (ground-truth maps
    /// and tests).
    pub fn with_occupied(
        origin: Vector3<f64>,
        dims: [usize; 3],
        resolution: f64,
        occupied: impl IntoIterator<Item = [usize; 3]>,
    ) -> Self {
        let mut grid = Self::new(origin, dims, resolution);
        for v in occupied {
            let idx = grid.index(v);
            grid.hits[idx] = 1;
        }
        grid
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    fn index(&self, v: [usize; 3]) -> usize {
        v[0] + self.dims[0] * (v[1] + self.dims[1] * v[2])
    }

    /// Voxel containing a world point, if inside the grid.
    ///
    /// Indices come from multiplying by the precomputed inverse
    /// resolution, which keeps points lying exactly on decimal voxel
    /// boundaries in the upper voxel.
    pub fn voxel_of(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let inv = 1.0 / self.resolution;
        let mut v = [0usize; 3];
        for i in 0..3 {
            let t = ((p[i] - self.origin[i]) * inv).floor();
            if t < 0.0 || t >= self.dims[i] as f64 {
                return None;
            }
            v[i] = t as usize;
        }
        Some(v)
    }

    pub fn voxel_center(&self, v: [usize; 3]) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + (v[0] as f64 + 0.5) * self.resolution,
            self.origin[1] + (v[1] as f64 + 0.5) * self.resolution,
            self.origin[2] + (v[2] as f64 + 0.5) * self.resolution,
        )
    }

    pub fn state(&self, v: [usize; 3]) -> VoxelState {
        let idx = self.index(v);
        let (h, m) = (self.hits[idx], self.misses[idx]);
        if h >= self.hit_threshold && h > m {
            VoxelState::Occupied
        } else if h + m > 0 {
            VoxelState::Free
        } else {
            VoxelState::Unknown
        }
    }

    #[inline]
    pub fn is_occupied(&self, v: [usize; 3]) -> bool {
        let idx = self.index(v);
        self.hits[idx] >= self.hit_threshold && self.hits[idx] > self.misses[idx]
    }

    /// Occupancy lookup in signed global voxel coordinates; everything
    /// outside the stored grid counts as not occupied.
    #[inline]
    pub fn is_occupied_signed(&self, v: [i64; 3]) -> bool {
        if v[0] < 0
            || v[1] < 0
            || v[2] < 0
            || v[0] >= self.dims[0] as i64
            || v[1] >= self.dims[1] as i64
            || v[2] >= self.dims[2] as i64
        {
            return false;
        }
        self.is_occupied([v[0] as usize, v[1] as usize, v[2] as usize])
    }

    fn mark_hit(&mut self, v: [usize; 3]) {
        let idx = self.index(v);
        self.hits[idx] = self.hits[idx].saturating_add(1);
    }

    fn mark_miss(&mut self, v: [usize; 3]) {
        let idx = self.index(v);
        self.misses[idx] = self.misses[idx].saturating_add(1);
    }

    /// Fuses one cloud: each endpoint voxel receives a hit, each voxel
    /// traversed on the sensor-to-endpoint ray receives a miss.
    pub fn integrate_pointcloud(&mut self, cloud: &PointCloud) {
        let sensor = cloud.sensor_pose.to_isometry();
        let start = sensor.translation.vector;
        for p in &cloud.points {
            let end = (sensor * nalgebra::Point3::from(*p)).coords;
            let filtered = self.ground_filter_z.map(|z| end[2] < z).unwrap_or(false);
            self.integrate_ray(&start, &end, !filtered);
        }
    }

    /// Marks misses along `start -> end`; when `hit` the endpoint voxel
    /// receives a hit, otherwise it is treated as free space too.
    fn integrate_ray(&mut self, start: &Vector3<f64>, end: &Vector3<f64>, hit: bool) {
        let end_voxel = self.voxel_of(end);
        for v in self.traverse(start, end) {
            if Some(v) != end_voxel {
                self.mark_miss(v);
            }
        }
        // The endpoint is marked directly: traversal may stop one step
        // short when the endpoint lies exactly on a voxel boundary.
        if let Some(v) = end_voxel {
            if hit {
                self.mark_hit(v);
            } else {
                self.mark_miss(v);
            }
        }
    }

    /// Amanatides–Woo voxel traversal of the segment clipped to the grid,
    /// endpoint voxel included.
    fn traverse(&self, start: &Vector3<f64>, end: &Vector3<f64>) -> Vec<[usize; 3]> {
        let dir = end - start;
        let len = dir.norm();
        if len == 0.0 {
            return self.voxel_of(start).into_iter().collect();
        }

        // Clip the segment to the grid bounds (slab method).
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for i in 0..3 {
            let lo = self.origin[i];
            let hi = self.origin[i] + self.dims[i] as f64 * self.resolution;
            if dir[i] == 0.0 {
                if start[i] < lo || start[i] >= hi {
                    return Vec::new();
                }
            } else {
                let mut ta = (lo - start[i]) / dir[i];
                let mut tb = (hi - start[i]) / dir[i];
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 > t1 {
                    return Vec::new();
                }
            }
        }
        // Nudge inside the boundary to get a well-defined starting voxel.
        let eps = 1e-9;
        let t_enter = (t0 + eps * (t1 - t0)).min(1.0);
        let p0 = start + dir * t_enter;
        let Some(mut voxel) = self.voxel_of(&p0) else {
            return Vec::new();
        };

        let mut out = Vec::new();
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for i in 0..3 {
            if dir[i] > 0.0 {
                step[i] = 1;
                let next = self.origin[i] + (voxel[i] as f64 + 1.0) * self.resolution;
                t_max[i] = (next - start[i]) / dir[i];
                t_delta[i] = self.resolution / dir[i];
            } else if dir[i] < 0.0 {
                step[i] = -1;
                let next = self.origin[i] + voxel[i] as f64 * self.resolution;
                t_max[i] = (next - start[i]) / dir[i];
                t_delta[i] = self.resolution / -dir[i];
            }
        }

        loop {
            out.push(voxel);
            // Advance along the axis whose boundary comes first.
            let mut axis = 0;
            if t_max[1] < t_max[axis] {
                axis = 1;
            }
            if t_max[2] < t_max[axis] {
                axis = 2;
            }
            if t_max[axis] > t1 {
                break;
            }
            let next = voxel[axis] as i64 + step[axis];
            if next < 0 || next >= self.dims[axis] as i64 {
                break;
            }
            voxel[axis] = next as usize;
            t_max[axis] += t_delta[axis];
        }
        out
    }

    /// 2D occupancy slice over a height band: a cell is occupied if any
    /// voxel within the band is occupied.
    pub fn slice_2d(&self, z_min: f64, z_max: f64) -> Slice2d {
        let k0 = (((z_min - self.origin[2]) / self.resolution).floor().max(0.0) as usize)
            .min(self.dims[2].saturating_sub(1));
        let k1 = (((z_max - self.origin[2]) / self.resolution).ceil().max(0.0) as usize)
            .min(self.dims[2]);
        let mut occupied = vec![false; self.dims[0] * self.dims[1]];
        for k in k0..k1 {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    if self.is_occupied([i, j, k]) {
                        occupied[i + self.dims[0] * j] = true;
                    }
                }
            }
        }
        Slice2d {
            origin: [self.origin[0], self.origin[1]],
            resolution: self.resolution,
            dims: [self.dims[0], self.dims[1]],
            occupied,
        }
    }

    /// Debug dump `(x, y, z, state)` rows for plotting.
    pub fn dump_csv(&self, out: &mut dyn std::io::Write) -> std::io::Result<()> {
        writeln!(out, "x,y,z,state")?;
        for k in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    let s = match self.state([i, j, k]) {
                        VoxelState::Unknown => 0,
                        VoxelState::Free => 1,
                        VoxelState::Occupied => 2,
                    };
                    if s != 0 {
                        let c = self.voxel_center([i, j, k]);
                        writeln!(out, "{},{},{},{}", c[0], c[1], c[2], s)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Planar occupancy extracted from the grid, with a clearance transform
/// for footprint checks.
#[derive(Debug, Clone)]
pub struct Slice2d {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub dims: [usize; 2],
    pub occupied: Vec<bool>,
}

impl Slice2d {
    pub fn is_occupied_cell(&self, i: usize, j: usize) -> bool {
        self.occupied[i + self.dims[0] * j]
    }

    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        (
            self.origin,
            [
                self.origin[0] + self.dims[0] as f64 * self.resolution,
                self.origin[1] + self.dims[1] as f64 * self.resolution,
            ],
        )
    }

    /// Distance from every cell center to the nearest occupied cell
    /// center (meters), exact via the separable squared EDT.
    pub fn clearance_map(&self) -> Vec<f64> {
        let (nx, ny) = (self.dims[0], self.dims[1]);
        let mut field = vec![f64::INFINITY; nx * ny];
        for (i, occ) in self.occupied.iter().enumerate() {
            if *occ {
                field[i] = 0.0;
            }
        }
        esdf::squared_edt_2d(&mut field, nx, ny);
        field
            .into_iter()
            .map(|sq| self.resolution * sq.sqrt())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    fn cloud(points: Vec<Vector3<f64>>, sensor_at: Vector3<f64>) -> PointCloud {
        PointCloud {
            points,
            sensor_pose: Pose::new(sensor_at, UnitQuaternion::identity()),
        }
    }

    /// Step-march oracle: sample the segment densely and collect voxels.
    fn march_oracle(grid: &OccupancyGrid, a: Vector3<f64>, b: Vector3<f64>) -> Vec<[usize; 3]> {
        let mut seen = Vec::new();
        let n = 20_000;
        for s in 0..=n {
            let p = a + (b - a) * (s as f64 / n as f64);
            if let Some(v) = grid.voxel_of(&p) {
                if !seen.contains(&v) {
                    seen.push(v);
                }
            }
        }
        seen
    }

    #[test]
    fn empty_cloud_leaves_grid_unchanged() {
        let mut grid = OccupancyGrid::new(Vector3::zeros(), [10, 10, 10], 0.1);
        let before = grid.clone();
        grid.integrate_pointcloud(&cloud(vec![], Vector3::new(0.05, 0.05, 0.05)));
        assert_eq!(grid.hits, before.hits);
        assert_eq!(grid.misses, before.misses);
    }

    #[test]
    fn single_ray_marks_traversed_voxels() {
        let mut grid = OccupancyGrid::new(Vector3::new(0.0, -0.5, -0.5), [20, 10, 10], 0.1);
        let sensor = Vector3::new(0.001, 0.05, 0.05);
        let end_local = Vector3::new(1.05 - sensor[0], 0.0, 0.0);
        grid.integrate_pointcloud(&cloud(vec![end_local], sensor));

        let end_world = Vector3::new(1.05, 0.05, 0.05);
        assert_eq!(
            grid.state(grid.voxel_of(&end_world).unwrap()),
            VoxelState::Occupied
        );

        let oracle = march_oracle(&grid, sensor, end_world);
        // Every voxel before the endpoint is free; there are 10 of them.
        let endpoint = grid.voxel_of(&end_world).unwrap();
        let mut free_count = 0;
        for v in &oracle {
            if *v != endpoint {
                assert_eq!(grid.state(*v), VoxelState::Free, "voxel {v:?}");
                free_count += 1;
            }
        }
        assert_eq!(free_count, 10);
    }

    #[test]
    fn traversal_matches_march_oracle() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let grid = OccupancyGrid::new(Vector3::new(-1.0, -1.0, -1.0), [20, 20, 20], 0.1);
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..50 {
            let a = Vector3::new(
                rng.random_range(-0.95..0.95),
                rng.random_range(-0.95..0.95),
                rng.random_range(-0.95..0.95),
            );
            let b = Vector3::new(
                rng.random_range(-0.95..0.95),
                rng.random_range(-0.95..0.95),
                rng.random_range(-0.95..0.95),
            );
            let traversed = grid.traverse(&a, &b);
            let oracle = march_oracle(&grid, a, b);
            assert_eq!(traversed, oracle, "a={a:?} b={b:?}");
        }
    }

    #[test]
    fn wall_occupies_expected_slab() {
        let mut grid = OccupancyGrid::new(Vector3::zeros(), [30, 10, 10], 0.1);
        let sensor = Vector3::new(0.05, 0.05, 0.05);
        let mut pts = Vec::new();
        for j in 0..10 {
            for k in 0..10 {
                let target = Vector3::new(2.0, j as f64 * 0.1 + 0.05, k as f64 * 0.1 + 0.05);
                pts.push(target - sensor);
            }
        }
        grid.integrate_pointcloud(&cloud(pts, sensor));
        for j in 0..10 {
            for k in 0..10 {
                for i in 0..30 {
                    if grid.is_occupied([i, j, k]) {
                        assert_eq!(i, 20, "occupied voxel outside the x-index-20 slab");
                    }
                }
            }
        }
        // And the slab itself is fully hit.
        for j in 0..10 {
            for k in 0..10 {
                assert!(grid.is_occupied([20, j, k]));
            }
        }
    }

    #[test]
    fn fusion_is_monotone_and_deterministic() {
        let make = || {
            let mut grid = OccupancyGrid::new(Vector3::zeros(), [15, 15, 5], 0.1);
            let sensor = Vector3::new(0.05, 0.75, 0.25);
            for step in 0..10 {
                let x = 1.0 + 0.02 * step as f64;
                let pts = vec![Vector3::new(x - 0.05, 0.0, 0.0)];
                grid.integrate_pointcloud(&cloud(pts, sensor));
                // A voxel is never unknown once observed.
                for j in 0..15 {
                    for i in 0..15 {
                        let s = grid.state([i, j, 2]);
                        let idx = i + 15 * (j + 15 * 2);
                        let observed = grid.hits[idx] + grid.misses[idx] > 0;
                        assert_eq!(observed, s != VoxelState::Unknown);
                    }
                }
            }
            grid
        };
        let a = make();
        let b = make();
        assert_eq!(a.hits, b.hits);
        assert_eq!(a.misses, b.misses);
    }

    #[test]
    fn slice_collects_band() {
        let grid = OccupancyGrid::with_occupied(
            Vector3::zeros(),
            [5, 5, 5],
            0.1,
            vec![[2, 3, 1], [4, 0, 4]],
        );
        let slice = grid.slice_2d(0.05, 0.25);
        assert!(slice.is_occupied_cell(2, 3));
        assert!(!slice.is_occupied_cell(4, 0)); // above the band
        let clearance = slice.clearance_map();
        assert_eq!(clearance[2 + 5 * 3], 0.0);
        assert!((clearance[3 + 5 * 3] - 0.1).abs() < 1e-12);
    }
}
