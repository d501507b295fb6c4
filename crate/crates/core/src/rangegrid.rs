//! Range-image projection of LiDAR scans and patch bookkeeping.
//!
//! A scan is projected onto an (elevation row, azimuth column) grid, one
//! point per cell, keeping the nearest return on collisions. The grid is
//! split into equal-sized patches; empty cells inside an occupied patch are
//! filled with randomly chosen valid points from the same patch, marked by a
//! flag bit so downstream aggregation can ignore them.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::util::patch_stream_seed;

pub type Point = [f64; 3];

/// Sensor geometry of the range image. Angles in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub fov_up: f64,
    pub fov_down: f64,
    pub azimuth_origin: f64,
}

impl GridSpec {
    /// 64-beam KITTI-style geometry: 64x2048, +2 deg to -24.8 deg.
    pub fn kitti_64() -> Self {
        GridSpec {
            rows: 64,
            cols: 2048,
            fov_up: 2.0_f64.to_radians(),
            fov_down: (-24.8_f64).to_radians(),
            azimuth_origin: -std::f64::consts::PI,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProjectError {
    #[error("point is outside the elevation field of view")]
    OutOfField,
    #[error("zero-norm point has no direction")]
    DegeneratePoint,
}

#[derive(Debug, Error)]
pub enum AssembleError {
    #[error("expected {expected} reconstructed patches, got {got}")]
    PatchCountMismatch { expected: usize, got: usize },
    #[error("patch {index:?} does not match the layout occupancy order")]
    PatchOrderMismatch { index: (usize, usize) },
    #[error("patch {index:?} has {got} slots, layout expects {expected}")]
    SlotCountMismatch {
        index: (usize, usize),
        expected: usize,
        got: usize,
    },
}

/// Grid cell: a 3D point and whether it holds a real return.
#[derive(Clone, Copy, Debug)]
pub struct Cell {
    pub point: Point,
    pub valid: bool,
}

/// Range image with per-cell validity.
#[derive(Clone, Debug)]
pub struct ScanGrid {
    pub spec: GridSpec,
    cells: Vec<Cell>,
}

impl ScanGrid {
    pub fn empty(spec: GridSpec) -> Self {
        let cells = vec![
            Cell {
                point: [0.0; 3],
                valid: false
            };
            spec.rows * spec.cols
        ];
        ScanGrid { spec, cells }
    }

    pub fn rows(&self) -> usize {
        self.spec.rows
    }

    pub fn cols(&self) -> usize {
        self.spec.cols
    }

    pub fn cell(&self, row: usize, col: usize) -> &Cell {
        &self.cells[row * self.spec.cols + col]
    }

    fn cell_mut(&mut self, row: usize, col: usize) -> &mut Cell {
        &mut self.cells[row * self.spec.cols + col]
    }

    pub fn valid_count(&self) -> usize {
        self.cells.iter().filter(|c| c.valid).count()
    }

    /// All valid points in row-major cell order.
    pub fn valid_points(&self) -> Vec<Point> {
        self.cells
            .iter()
            .filter(|c| c.valid)
            .map(|c| c.point)
            .collect()
    }
}

/// Patch grid metadata. `grid_rows`/`grid_cols` are the padded dimensions,
/// always divisible by the patch dimensions.
#[derive(Clone, Debug)]
pub struct PatchLayout {
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Row-major over patches; true when the patch holds >= 1 valid point.
    pub occupancy: Vec<bool>,
}

impl PatchLayout {
    pub fn patches_per_row(&self) -> usize {
        self.grid_cols / self.patch_cols
    }

    pub fn patches_per_col(&self) -> usize {
        self.grid_rows / self.patch_rows
    }

    pub fn patch_count(&self) -> usize {
        self.patches_per_row() * self.patches_per_col()
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&b| b).count()
    }

    pub fn slots_per_patch(&self) -> usize {
        self.patch_rows * self.patch_cols
    }

    pub fn linear_index(&self, index: (usize, usize)) -> usize {
        (index.0 / self.patch_rows) * self.patches_per_row() + index.1 / self.patch_cols
    }

    /// Patch origins (grid row, grid col) of occupied patches in row-major order.
    pub fn occupied_indices(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.occupied_count());
        for pr in 0..self.patches_per_col() {
            for pc in 0..self.patches_per_row() {
                if self.occupancy[pr * self.patches_per_row() + pc] {
                    out.push((pr * self.patch_rows, pc * self.patch_cols));
                }
            }
        }
        out
    }
}

/// Fixed-size point set cut from the grid. Slot order is row-major over the
/// patch cells. `flags[i] = false` marks a duplicate filling an empty cell.
#[derive(Clone, Debug)]
pub struct Patch {
    pub points: Vec<Point>,
    pub flags: Vec<bool>,
    /// (grid row, grid col) of the patch origin.
    pub patch_index: (usize, usize),
    pub valid_count: usize,
}

impl Patch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn valid_points(&self) -> Vec<Point> {
        self.valid_indices().iter().map(|&i| self.points[i]).collect()
    }
}

/// Reconstructed patch as fed to `assemble`: N slot points plus the
/// transmitted valid-slot mask.
#[derive(Clone, Debug)]
pub struct ReconstructedPatch {
    pub patch_index: (usize, usize),
    pub valid: Vec<bool>,
    pub points: Vec<Point>,
}

/// Projection outcome counters from `build_grid`.
#[derive(Clone, Copy, Debug, Default)]
pub struct GridStats {
    pub projected: usize,
    pub out_of_field: usize,
    pub degenerate: usize,
    /// Points that lost a same-cell collision to a nearer return.
    pub collision_dropped: usize,
}

pub fn azimuth(p: Point) -> f64 {
    p[1].atan2(p[0])
}

pub fn elevation(p: Point) -> f64 {
    p[2].atan2((p[0] * p[0] + p[1] * p[1]).sqrt())
}

pub fn range(p: Point) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Cell of a 3D point: column from the azimuth, row from the elevation.
/// Points outside [fov_down, fov_up] are rejected as out-of-field.
pub fn project_point(p: Point, spec: &GridSpec) -> Result<(usize, usize), ProjectError> {
    if p[0] == 0.0 && p[1] == 0.0 && p[2] == 0.0 {
        return Err(ProjectError::DegeneratePoint);
    }
    let el = elevation(p);
    if el < spec.fov_down || el > spec.fov_up {
        return Err(ProjectError::OutOfField);
    }
    let tau = 2.0 * std::f64::consts::PI;
    let az = (azimuth(p) - spec.azimuth_origin).rem_euclid(tau);
    let col = ((spec.cols as f64 * az / tau).floor() as usize).min(spec.cols - 1);
    let row_f = spec.rows as f64 * (spec.fov_up - el) / (spec.fov_up - spec.fov_down);
    let row = (row_f.floor() as usize).min(spec.rows - 1);
    Ok((row, col))
}

/// Unit direction of the center of cell (row, col).
pub fn cell_direction(spec: &GridSpec, row: f64, col: f64) -> Point {
    let tau = 2.0 * std::f64::consts::PI;
    let az = spec.azimuth_origin + tau * (col + 0.5) / spec.cols as f64;
    let el = spec.fov_up - (row + 0.5) * (spec.fov_up - spec.fov_down) / spec.rows as f64;
    [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
}

/// Unit-range 3D point along the central ray of the patch at `patch_index`.
/// Both codec sides derive it from the header alone, so quantized positions
/// can be coded relative to it.
pub fn patch_anchor(spec: &GridSpec, patch_rows: usize, patch_cols: usize, patch_index: (usize, usize)) -> Point {
    let row_center = patch_index.0 as f64 + patch_rows as f64 / 2.0 - 0.5;
    let col_center = patch_index.1 as f64 + patch_cols as f64 / 2.0 - 0.5;
    cell_direction(spec, row_center, col_center)
}

/// Projects `points` onto the grid. Collisions keep the nearer return;
/// out-of-field and degenerate points are counted, not fatal.
pub fn build_grid(points: &[Point], spec: &GridSpec) -> (ScanGrid, GridStats) {
    assert!(spec.rows >= 1 && spec.cols >= 1, "grid must be at least 1x1");
    assert!(spec.fov_up > spec.fov_down, "fov_up must exceed fov_down");
    let mut grid = ScanGrid::empty(*spec);
    let mut stats = GridStats::default();
    for &p in points {
        match project_point(p, spec) {
            Ok((row, col)) => {
                let cell = grid.cell_mut(row, col);
                if cell.valid {
                    stats.collision_dropped += 1;
                    if range(p) < range(cell.point) {
                        cell.point = p;
                    }
                } else {
                    *cell = Cell { point: p, valid: true };
                    stats.projected += 1;
                }
            }
            Err(ProjectError::OutOfField) => stats.out_of_field += 1,
            Err(ProjectError::DegeneratePoint) => stats.degenerate += 1,
        }
    }
    (grid, stats)
}

/// Splits the grid into patch_rows x patch_cols patches (padding with
/// invalid cells as needed). Empty cells of occupied patches are filled with
/// uniformly chosen valid points from the same patch, flagged false; the
/// fill is reproducible from `seed` and independent per patch.
pub fn partition(
    grid: &ScanGrid,
    patch_rows: usize,
    patch_cols: usize,
    seed: u64,
) -> (PatchLayout, Vec<Patch>) {
    assert!(patch_rows >= 1 && patch_cols >= 1, "patch dims must be >= 1");
    let grid_rows = grid.rows().div_ceil(patch_rows) * patch_rows;
    let grid_cols = grid.cols().div_ceil(patch_cols) * patch_cols;
    let per_row = grid_cols / patch_cols;
    let per_col = grid_rows / patch_rows;

    let mut occupancy = vec![false; per_row * per_col];
    let mut patches = Vec::new();

    for pr in 0..per_col {
        for pc in 0..per_row {
            let origin = (pr * patch_rows, pc * patch_cols);
            let linear = pr * per_row + pc;
            let n = patch_rows * patch_cols;
            let mut points = vec![[0.0; 3]; n];
            let mut flags = vec![false; n];
            let mut valid = Vec::new();
            for rr in 0..patch_rows {
                for cc in 0..patch_cols {
                    let (gr, gc) = (origin.0 + rr, origin.1 + cc);
                    if gr >= grid.rows() || gc >= grid.cols() {
                        continue;
                    }
                    let cell = grid.cell(gr, gc);
                    if cell.valid {
                        let slot = rr * patch_cols + cc;
                        points[slot] = cell.point;
                        flags[slot] = true;
                        valid.push(slot);
                    }
                }
            }
            if valid.is_empty() {
                continue;
            }
            occupancy[linear] = true;
            let mut rng = ChaCha8Rng::seed_from_u64(patch_stream_seed(seed, linear));
            for slot in 0..n {
                if !flags[slot] {
                    let donor = valid[rng.gen_range(0..valid.len())];
                    points[slot] = points[donor];
                }
            }
            patches.push(Patch {
                points,
                flags,
                patch_index: origin,
                valid_count: valid.len(),
            });
        }
    }

    let layout = PatchLayout {
        patch_rows,
        patch_cols,
        grid_rows,
        grid_cols,
        occupancy,
    };
    (layout, patches)
}

/// Concatenates reconstructed points at valid slots only, in occupancy
/// order. Output length equals the transmitted valid-point count.
pub fn assemble(
    layout: &PatchLayout,
    patches: &[ReconstructedPatch],
) -> Result<Vec<Point>, AssembleError> {
    let expected = layout.occupied_indices();
    if expected.len() != patches.len() {
        return Err(AssembleError::PatchCountMismatch {
            expected: expected.len(),
            got: patches.len(),
        });
    }
    let mut out = Vec::new();
    for (want, patch) in expected.iter().zip(patches) {
        if patch.patch_index != *want {
            return Err(AssembleError::PatchOrderMismatch {
                index: patch.patch_index,
            });
        }
        let n = layout.slots_per_patch();
        if patch.valid.len() != n || patch.points.len() != n {
            return Err(AssembleError::SlotCountMismatch {
                index: patch.patch_index,
                expected: n,
                got: patch.valid.len().min(patch.points.len()),
            });
        }
        for (i, &v) in patch.valid.iter().enumerate() {
            if v {
                out.push(patch.points[i]);
            }
        }
    }
    Ok(out)
}
