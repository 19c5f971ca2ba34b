//! Euclidean signed distance windows over the occupancy grid.
//!
//! Distances are exact at voxel centers: the transform is the separable
//! squared-distance lower-envelope algorithm, so free voxels carry the
//! exact Euclidean distance to the nearest occupied voxel center and
//! occupied voxels the negated distance to the nearest free center, both
//! truncated at `d_max`. Occupied voxels outside the window but within
//! `d_max` of it participate as distance sources.

use nalgebra::Vector3;

use super::OccupancyGrid;

/// Interpolated distance query result.
#[derive(Debug, Clone, Copy)]
pub struct DistanceSample {
    pub distance: f64,
    pub gradient: Vector3<f64>,
    /// False when the query fell outside the window interior; the sample
    /// then holds `d_max` with a zero gradient.
    pub in_window: bool,
}

/// Robot-centric signed-distance window aligned to the global grid.
#[derive(Debug, Clone)]
pub struct EsdfWindow {
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
    resolution: f64,
    /// Global voxel index of this window's (0, 0, 0) voxel.
    index_origin: [i64; 3],
    /// World position of the center of voxel (0, 0, 0).
    center0: Vector3<f64>,
    dims: [usize; 3],
    data: Vec<f64>,
    pub d_max: f64,
}

impl EsdfWindow {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// Global voxel index of the window's first voxel.
    pub fn index_origin(&self) -> [i64; 3] {
        self.index_origin
    }

    #[inline]
    fn idx(&self, v: [usize; 3]) -> usize {
        v[0] + self.dims[0] * (v[1] + self.dims[1] * v[2])
    }

    /// Stored signed distance at a window voxel.
    pub fn voxel_distance(&self, v: [usize; 3]) -> f64 {
        self.data[self.idx(v)]
    }

    pub fn voxel_center(&self, v: [usize; 3]) -> Vector3<f64> {
        self.center0
            + Vector3::new(
                v[0] as f64 * self.resolution,
                v[1] as f64 * self.resolution,
                v[2] as f64 * self.resolution,
            )
    }

    /// Trilinear interpolation of the stored field at continuous
    /// voxel-center coordinates `t` (no bounds checking beyond clamping
    /// the base cell).
    fn trilinear(&self, t: &Vector3<f64>) -> f64 {
        let mut i0 = [0usize; 3];
        let mut f = [0.0f64; 3];
        for a in 0..3 {
            let base = t[a].floor().clamp(0.0, (self.dims[a] - 2) as f64);
            i0[a] = base as usize;
            f[a] = t[a] - base;
        }
        let mut acc = 0.0;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let w = (if dx == 1 { f[0] } else { 1.0 - f[0] })
                        * (if dy == 1 { f[1] } else { 1.0 - f[1] })
                        * (if dz == 1 { f[2] } else { 1.0 - f[2] });
                    acc += w * self.data[self.idx([i0[0] + dx, i0[1] + dy, i0[2] + dz])];
                }
            }
        }
        acc
    }

    /// Continuous voxel-center coordinates of a world point.
    fn to_voxel_coords(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.center0) * (1.0 / self.resolution)
    }

    /// Interpolated distance and finite-difference gradient at `p`.
    ///
    /// The gradient uses central differences of the interpolated field
    /// with step `resolution / 4`; queries must keep a one-voxel margin
    /// from the window boundary, otherwise the out-of-window sample
    /// (`d_max`, zero gradient) is returned.
    pub fn sample_distance(&self, p: &Vector3<f64>) -> DistanceSample {
        let t = self.to_voxel_coords(p);
        for a in 0..3 {
            if self.dims[a] < 4 || t[a] < 1.0 || t[a] > (self.dims[a] - 2) as f64 {
                return DistanceSample {
                    distance: self.d_max,
                    gradient: Vector3::zeros(),
                    in_window: false,
                };
            }
        }
        let distance = self.trilinear(&t);
        let h = 0.25; // resolution / 4 in voxel units
        let mut gradient = Vector3::zeros();
        for a in 0..3 {
            let mut tp = t;
            let mut tm = t;
            tp[a] += h;
            tm[a] -= h;
            gradient[a] = (self.trilinear(&tp) - self.trilinear(&tm)) / (2.0 * h * self.resolution);
        }
        DistanceSample {
            distance,
            gradient,
            in_window: true,
        }
    }

    /// Debug dump `(x, y, z, distance)` rows for plotting.
    pub fn dump_csv(&self, out: &mut dyn std::io::Write) -> std::io::Result<()> {
        writeln!(out, "x,y,z,distance")?;
        for k in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    let c = self.voxel_center([i, j, k]);
                    writeln!(out, "{},{},{},{}", c[0], c[1], c[2], self.data[self.idx([i, j, k])])?;
                }
            }
        }
        Ok(())
    }
}

/// One-dimensional squared distance transform (lower envelope of
/// parabolas). `f` holds squared source offsets or infinity; the result
/// is written to `d`. `v` and `z` are scratch.
fn dt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    let mut any = false;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        if !any {
            any = true;
            k = 0;
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64))
                / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    if !any {
        d.fill(f64::INFINITY);
        return;
    }
    let mut kq = 0usize;
    for q in 0..n {
        while z[kq + 1] < q as f64 {
            kq += 1;
        }
        let p = v[kq];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
}

/// In-place 3D squared EDT over a row-major `[nx, ny, nz]` field holding
/// 0 at sources and infinity elsewhere.
fn squared_edt_3d(field: &mut [f64], nx: usize, ny: usize, nz: usize) {
    let nmax = nx.max(ny).max(nz);
    let mut f = vec![0.0f64; nmax];
    let mut d = vec![0.0f64; nmax];
    let mut v = vec![0usize; nmax];
    let mut z = vec![0.0f64; nmax + 1];

    // Along x.
    for kz in 0..nz {
        for ky in 0..ny {
            let row = ky * nx + kz * nx * ny;
            f[..nx].copy_from_slice(&field[row..row + nx]);
            dt_1d(&f[..nx], &mut d[..nx], &mut v, &mut z);
            field[row..row + nx].copy_from_slice(&d[..nx]);
        }
    }
    // Along y.
    for kz in 0..nz {
        for kx in 0..nx {
            for ky in 0..ny {
                f[ky] = field[kx + ky * nx + kz * nx * ny];
            }
            dt_1d(&f[..ny], &mut d[..ny], &mut v, &mut z);
            for ky in 0..ny {
                field[kx + ky * nx + kz * nx * ny] = d[ky];
            }
        }
    }
    // Along z.
    for ky in 0..ny {
        for kx in 0..nx {
            for kz in 0..nz {
                f[kz] = field[kx + ky * nx + kz * nx * ny];
            }
            dt_1d(&f[..nz], &mut d[..nz], &mut v, &mut z);
            for kz in 0..nz {
                field[kx + ky * nx + kz * nx * ny] = d[kz];
            }
        }
    }
}

/// 2D variant used for planar clearance maps.
pub(super) fn squared_edt_2d(field: &mut [f64], nx: usize, ny: usize) {
    squared_edt_3d(field, nx, ny, 1);
}

/// Computes the signed-distance window of the grid around `center`.
///
/// Window voxels are aligned to the global grid, so overlapping windows
/// from the same grid agree voxel-for-voxel.
pub fn compute_esdf(
    grid: &OccupancyGrid,
    center: Vector3<f64>,
    half_extents: Vector3<f64>,
    d_max: f64,
) -> EsdfWindow {
    let res = grid.resolution();
    let inv = 1.0 / res;
    let origin = grid.origin();
    let mut lo = [0i64; 3];
    let mut dims = [0usize; 3];
    for a in 0..3 {
        let l = ((center[a] - half_extents[a] - origin[a]) * inv).floor() as i64;
        let h = ((center[a] + half_extents[a] - origin[a]) * inv).ceil() as i64;
        lo[a] = l;
        dims[a] = (h - l).max(1) as usize;
    }

    let margin = (d_max / res).ceil() as i64;
    let rlo = [lo[0] - margin, lo[1] - margin, lo[2] - margin];
    let rdims = [
        dims[0] + 2 * margin as usize,
        dims[1] + 2 * margin as usize,
        dims[2] + 2 * margin as usize,
    ];
    let rn = rdims[0] * rdims[1] * rdims[2];

    // Occupancy over the expanded region; outside the stored grid counts
    // as free.
    let mut occupied = vec![false; rn];
    for kz in 0..rdims[2] {
        for ky in 0..rdims[1] {
            for kx in 0..rdims[0] {
                let g = [rlo[0] + kx as i64, rlo[1] + ky as i64, rlo[2] + kz as i64];
                occupied[kx + rdims[0] * (ky + rdims[1] * kz)] = grid.is_occupied_signed(g);
            }
        }
    }

    // Distance to nearest occupied center, and to nearest free center.
    let mut to_occ = vec![f64::INFINITY; rn];
    let mut to_free = vec![f64::INFINITY; rn];
    for i in 0..rn {
        if occupied[i] {
            to_occ[i] = 0.0;
        } else {
            to_free[i] = 0.0;
        }
    }
    squared_edt_3d(&mut to_occ, rdims[0], rdims[1], rdims[2]);
    squared_edt_3d(&mut to_free, rdims[0], rdims[1], rdims[2]);

    let mut data = vec![0.0f64; dims[0] * dims[1] * dims[2]];
    for kz in 0..dims[2] {
        for ky in 0..dims[1] {
            for kx in 0..dims[0] {
                let r = (kx + margin as usize)
                    + rdims[0] * ((ky + margin as usize) + rdims[1] * (kz + margin as usize));
                let w = kx + dims[0] * (ky + dims[1] * kz);
                data[w] = if occupied[r] {
                    -(res * to_free[r].sqrt()).min(d_max)
                } else {
                    (res * to_occ[r].sqrt()).min(d_max)
                };
            }
        }
    }

    let center0 = Vector3::new(
        origin[0] + (lo[0] as f64 + 0.5) * res,
        origin[1] + (lo[1] as f64 + 0.5) * res,
        origin[2] + (lo[2] as f64 + 0.5) * res,
    );
    EsdfWindow {
        center,
        half_extents,
        resolution: res,
        index_origin: lo,
        center0,
        dims,
        data,
        d_max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn brute_force_window(
        grid: &OccupancyGrid,
        window: &EsdfWindow,
        d_max: f64,
    ) -> Vec<f64> {
        // Collect sources over the same margin region the transform uses.
        let res = grid.resolution();
        let margin = (d_max / res).ceil() as i64;
        let lo = window.index_origin();
        let dims = window.dims();
        let mut occ_sources = Vec::new();
        let mut free_sources = Vec::new();
        for kz in (lo[2] - margin)..(lo[2] + dims[2] as i64 + margin) {
            for ky in (lo[1] - margin)..(lo[1] + dims[1] as i64 + margin) {
                for kx in (lo[0] - margin)..(lo[0] + dims[0] as i64 + margin) {
                    if grid.is_occupied_signed([kx, ky, kz]) {
                        occ_sources.push([kx, ky, kz]);
                    } else {
                        free_sources.push([kx, ky, kz]);
                    }
                }
            }
        }
        let mut out = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for kz in 0..dims[2] {
            for ky in 0..dims[1] {
                for kx in 0..dims[0] {
                    let g = [lo[0] + kx as i64, lo[1] + ky as i64, lo[2] + kz as i64];
                    let occupied = grid.is_occupied_signed(g);
                    let sources = if occupied { &free_sources } else { &occ_sources };
                    let mut best = f64::INFINITY;
                    for s in sources {
                        let dx = (g[0] - s[0]) as f64;
                        let dy = (g[1] - s[1]) as f64;
                        let dz = (g[2] - s[2]) as f64;
                        let sq = dx * dx + dy * dy + dz * dz;
                        if sq < best {
                            best = sq;
                        }
                    }
                    let d = (res * best.sqrt()).min(d_max);
                    out.push(if occupied { -d } else { d });
                }
            }
        }
        out
    }

    #[test]
    fn empty_scene_is_all_truncated() {
        let grid = OccupancyGrid::new(Vector3::zeros(), [16, 16, 16], 0.1, );
        let w = compute_esdf(&grid, Vector3::new(0.8, 0.8, 0.8), Vector3::new(0.5, 0.5, 0.5), 2.0);
        for k in 0..w.dims()[2] {
            for j in 0..w.dims()[1] {
                for i in 0..w.dims()[0] {
                    assert_eq!(w.voxel_distance([i, j, k]), 2.0);
                }
            }
        }
    }

    #[test]
    fn single_voxel_axis_distances_exact() {
        let grid =
            OccupancyGrid::with_occupied(Vector3::zeros(), [21, 21, 21], 0.1, vec![[10, 10, 10]]);
        let w = compute_esdf(
            &grid,
            Vector3::new(1.05, 1.05, 1.05),
            Vector3::new(1.0, 1.0, 1.0),
            2.0,
        );
        let lo = w.index_origin();
        let at = |g: [i64; 3]| -> f64 {
            w.voxel_distance([
                (g[0] - lo[0]) as usize,
                (g[1] - lo[1]) as usize,
                (g[2] - lo[2]) as usize,
            ])
        };
        for k in 1..8i64 {
            assert_eq!(at([10 + k, 10, 10]), k as f64 * 0.1);
            assert_eq!(at([10, 10 - k, 10]), k as f64 * 0.1);
        }
        assert_eq!(at([10, 10, 10]), -0.1);
    }

    #[test]
    fn random_grids_match_brute_force_exactly() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..3 {
            let mut occ = Vec::new();
            for k in 0..16 {
                for j in 0..16 {
                    for i in 0..16 {
                        if rng.random_range(0.0..1.0) < 0.1 {
                            occ.push([i, j, k]);
                        }
                    }
                }
            }
            let grid = OccupancyGrid::with_occupied(Vector3::zeros(), [16, 16, 16], 0.1, occ);
            let w = compute_esdf(
                &grid,
                Vector3::new(0.8, 0.8, 0.8),
                Vector3::new(0.8, 0.8, 0.8),
                2.0,
            );
            let brute = brute_force_window(&grid, &w, 2.0);
            let dims = w.dims();
            let mut idx = 0;
            for k in 0..dims[2] {
                for j in 0..dims[1] {
                    for i in 0..dims[0] {
                        assert_eq!(
                            w.voxel_distance([i, j, k]),
                            brute[idx],
                            "voxel ({i},{j},{k})"
                        );
                        idx += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn windows_agree_on_overlap() {
        let mut rng = StdRng::seed_from_u64(9);
        let mut occ = Vec::new();
        for k in 0..20 {
            for j in 0..20 {
                for i in 0..20 {
                    if rng.random_range(0.0..1.0) < 0.08 {
                        occ.push([i, j, k]);
                    }
                }
            }
        }
        let grid = OccupancyGrid::with_occupied(Vector3::zeros(), [20, 20, 20], 0.1, occ);
        let wa = compute_esdf(
            &grid,
            Vector3::new(0.7, 1.0, 1.0),
            Vector3::new(0.6, 0.6, 0.6),
            1.0,
        );
        let wb = compute_esdf(
            &grid,
            Vector3::new(1.3, 1.0, 1.0),
            Vector3::new(0.6, 0.6, 0.6),
            1.0,
        );
        let (la, lb) = (wa.index_origin(), wb.index_origin());
        let mut checked = 0;
        for kz in 0..wa.dims()[2] {
            for ky in 0..wa.dims()[1] {
                for kx in 0..wa.dims()[0] {
                    let g = [
                        la[0] + kx as i64,
                        la[1] + ky as i64,
                        la[2] + kz as i64,
                    ];
                    let bx = g[0] - lb[0];
                    let by = g[1] - lb[1];
                    let bz = g[2] - lb[2];
                    if bx >= 0
                        && by >= 0
                        && bz >= 0
                        && (bx as usize) < wb.dims()[0]
                        && (by as usize) < wb.dims()[1]
                        && (bz as usize) < wb.dims()[2]
                    {
                        assert_eq!(
                            wa.voxel_distance([kx, ky, kz]),
                            wb.voxel_distance([bx as usize, by as usize, bz as usize])
                        );
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 0, "windows must overlap");
    }

    #[test]
    fn lipschitz_within_sign_regions() {
        let mut rng = StdRng::seed_from_u64(33);
        let mut occ = Vec::new();
        for k in 0..12 {
            for j in 0..12 {
                for i in 0..12 {
                    if rng.random_range(0.0..1.0) < 0.1 {
                        occ.push([i, j, k]);
                    }
                }
            }
        }
        let grid = OccupancyGrid::with_occupied(Vector3::zeros(), [12, 12, 12], 0.1, occ);
        let w = compute_esdf(
            &grid,
            Vector3::new(0.6, 0.6, 0.6),
            Vector3::new(0.6, 0.6, 0.6),
            2.0,
        );
        let dims = w.dims();
        // Check the Lipschitz bound on same-sign pairs below truncation.
        for _ in 0..2000 {
            let a = [
                rng.random_range(0..dims[0]),
                rng.random_range(0..dims[1]),
                rng.random_range(0..dims[2]),
            ];
            let b = [
                rng.random_range(0..dims[0]),
                rng.random_range(0..dims[1]),
                rng.random_range(0..dims[2]),
            ];
            let da = w.voxel_distance(a);
            let db = w.voxel_distance(b);
            if da.signum() != db.signum() || da.abs() >= 2.0 || db.abs() >= 2.0 {
                continue;
            }
            let dist = (w.voxel_center(a) - w.voxel_center(b)).norm();
            assert!(
                (da - db).abs() <= dist + 1e-9,
                "|{da} - {db}| > {dist}"
            );
        }
    }

    #[test]
    fn sample_identity_and_midpoint() {
        let grid =
            OccupancyGrid::with_occupied(Vector3::zeros(), [16, 16, 16], 0.1, vec![[8, 8, 8]]);
        let w = compute_esdf(
            &grid,
            Vector3::new(0.8, 0.8, 0.8),
            Vector3::new(0.7, 0.7, 0.7),
            2.0,
        );
        // Exactly at a voxel center: the stored value.
        let lo = w.index_origin();
        let v = [
            (11 - lo[0]) as usize,
            (8 - lo[1]) as usize,
            (8 - lo[2]) as usize,
        ];
        let c = w.voxel_center(v);
        let s = w.sample_distance(&c);
        assert!(s.in_window);
        assert!((s.distance - w.voxel_distance(v)).abs() < 1e-12);

        // Midpoint of two axis-adjacent centers blends linearly.
        let v2 = [v[0] + 1, v[1], v[2]];
        let mid = (w.voxel_center(v) + w.voxel_center(v2)) * 0.5;
        let s = w.sample_distance(&mid);
        let expect = 0.5 * (w.voxel_distance(v) + w.voxel_distance(v2));
        assert!((s.distance - expect).abs() < 1e-12);

        // Out-of-window query.
        let far = w.sample_distance(&Vector3::new(10.0, 10.0, 10.0));
        assert!(!far.in_window);
        assert_eq!(far.distance, 2.0);
        assert_eq!(far.gradient, Vector3::zeros());
    }

    #[test]
    fn gradient_points_away_from_single_obstacle() {
        let grid =
            OccupancyGrid::with_occupied(Vector3::zeros(), [20, 20, 20], 0.1, vec![[10, 10, 10]]);
        let w = compute_esdf(
            &grid,
            Vector3::new(1.05, 1.05, 1.05),
            Vector3::new(0.9, 0.9, 0.9),
            5.0,
        );
        let obstacle = grid.voxel_center([10, 10, 10]);
        let mut rng = StdRng::seed_from_u64(4);
        let mut checked = 0;
        for _ in 0..300 {
            let p = Vector3::new(
                rng.random_range(0.35..1.75),
                rng.random_range(0.35..1.75),
                rng.random_range(0.35..1.75),
            );
            let away = p - obstacle;
            // Stay off the obstacle itself and away from voxel-size scale.
            if away.norm() < 0.3 {
                continue;
            }
            let s = w.sample_distance(&p);
            if !s.in_window {
                continue;
            }
            let g = s.gradient;
            assert!(
                g.dot(&away.normalize()) > 0.5,
                "gradient {g:?} not aligned with {away:?}"
            );
            let n = g.norm();
            assert!((0.9..=1.1).contains(&n), "gradient norm {n}");
            checked += 1;
        }
        assert!(checked > 100);
    }
}
