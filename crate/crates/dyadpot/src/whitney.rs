//! Decomposition of open sets (unions of finest cells) into maximal
//! dyadic cubes and into Whitney cubes.
//!
//! The maximal-dyadic flavor tiles G by cubes whose dyadic parent is not
//! contained in G.  The Whitney flavor accepts a cube Q contained in G
//! when diam(Q) <= dist(Q, complement of G), recursing otherwise; the
//! complement includes the region outside the root cube, and finest-level
//! cells inside G are accepted unconditionally since the distance window
//! cannot hold at unit scale against an adjacent boundary.  Distances are
//! compared as exact integers (squared).

use serde::Serialize;

use crate::grid::{children_of, Cell, CellSet, DyadicCube, Grid};
use crate::weight::for_cells_of_double;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DecompositionFlavor {
    DyadicMaximal,
    Whitney,
}

#[derive(Clone)]
pub struct LevelSetDecomposition {
    pub cubes: Vec<DyadicCube>,
    pub flavor: DecompositionFlavor,
    pub source: CellSet,
}

impl LevelSetDecomposition {
    /// CSV rows `level,coords...`.
    pub fn to_csv(&self, dim: usize) -> String {
        let mut out = String::from("level,coords\n");
        for c in &self.cubes {
            out.push_str(&format!("{}", c.level));
            for i in 0..dim {
                out.push_str(&format!(",{}", c.coords[i]));
            }
            out.push('\n');
        }
        out
    }
}

/// Per-level counts of G-cells per cube, for O(1) "cube inside G" tests.
struct ContainmentIndex {
    grid: Grid,
    counts: Vec<Vec<u64>>,
}

impl ContainmentIndex {
    fn build(g: &CellSet) -> ContainmentIndex {
        let grid = *g.grid();
        let nlevels = grid.root_level() as usize + 1;
        let mut counts: Vec<Vec<u64>> = (0..nlevels)
            .map(|k| vec![0; grid.cubes_at_level(k as u32) as usize])
            .collect();
        for idx in 0..grid.num_cells() {
            if g.contains_index(idx) {
                let cell = grid.cell_from_index(idx);
                for (k, level) in counts.iter_mut().enumerate() {
                    let cube = grid.ancestor_of_cell(&cell, k as u32);
                    level[grid.cube_index(&cube) as usize] += 1;
                }
            }
        }
        ContainmentIndex { grid, counts }
    }

    fn cells_in(&self, cube: &DyadicCube) -> u64 {
        self.counts[cube.level as usize][self.grid.cube_index(cube) as usize]
    }

    fn full(&self, cube: &DyadicCube) -> bool {
        self.cells_in(cube) == 1u64 << (cube.level as usize * self.grid.dim())
    }
}

/// Tile G by maximal dyadic cubes: each returned cube is contained in G
/// while its dyadic parent is not.
pub fn dyadic_maximal_decomposition(g: &CellSet) -> LevelSetDecomposition {
    let grid = *g.grid();
    let index = ContainmentIndex::build(g);
    let mut cubes = Vec::new();
    let root = DyadicCube { level: grid.root_level(), coords: [0, 0, 0] };
    let mut stack = vec![root];
    while let Some(cube) = stack.pop() {
        let inside = index.cells_in(&cube);
        if inside == 0 {
            continue;
        }
        if index.full(&cube) {
            cubes.push(cube);
        } else if cube.level > 0 {
            stack.extend(children_of(grid.dim(), &cube));
        }
    }
    cubes.sort();
    LevelSetDecomposition { cubes, flavor: DecompositionFlavor::DyadicMaximal, source: g.clone() }
}

/// Exact squared Euclidean distance from a cube to the complement of G
/// (complement cells plus the region outside the root cube), in cell
/// units.  Returns `u64::MAX` when the complement is empty and the cube
/// touches no boundary (cannot happen inside a finite root cube).
fn dist2_to_complement(grid: &Grid, cube: &DyadicCube, complement: &[Cell]) -> u64 {
    let dim = grid.dim();
    let side = grid.side();
    // Distance to the exterior of the root cube: nearest face.
    let mut best: u64 = u64::MAX;
    for i in 0..dim {
        let (lo, hi) = cube.axis_range(i);
        let d = lo.min(side - hi);
        best = best.min(d * d);
    }
    for cell in complement {
        let mut d2: u64 = 0;
        for i in 0..dim {
            let (lo, hi) = cube.axis_range(i);
            let (clo, chi) = (cell[i], cell[i] + 1);
            let gap = if chi <= lo {
                lo - chi
            } else if clo >= hi {
                clo - hi
            } else {
                0
            };
            d2 += gap * gap;
        }
        best = best.min(d2);
        if best == 0 {
            break;
        }
    }
    best
}

/// Whitney decomposition: accept a cube contained in G when
/// `diam(Q)^2 = n * 4^level <= dist(Q, G^c)^2`, else recurse; unit cells
/// inside G are accepted unconditionally.
pub fn whitney_decomposition(g: &CellSet) -> LevelSetDecomposition {
    let grid = *g.grid();
    let index = ContainmentIndex::build(g);
    let complement: Vec<Cell> = g.complement().iter_cells().collect();
    let mut cubes = Vec::new();
    let root = DyadicCube { level: grid.root_level(), coords: [0, 0, 0] };
    let mut stack = vec![root];
    while let Some(cube) = stack.pop() {
        let inside = index.cells_in(&cube);
        if inside == 0 {
            continue;
        }
        if index.full(&cube) {
            if cube.level == 0 {
                cubes.push(cube);
                continue;
            }
            let diam2 = (grid.dim() as u64) << (2 * cube.level);
            let d2 = dist2_to_complement(&grid, &cube, &complement);
            if diam2 <= d2 {
                cubes.push(cube);
                continue;
            }
        }
        if cube.level > 0 {
            stack.extend(children_of(grid.dim(), &cube));
        }
    }
    cubes.sort();
    LevelSetDecomposition { cubes, flavor: DecompositionFlavor::Whitney, source: g.clone() }
}

#[derive(Clone, Debug, Serialize)]
pub struct DecompositionReport {
    pub tiles_exactly: bool,
    pub pairwise_disjoint: bool,
    pub parent_maximality: bool,
    pub max_overlap_of_doubles: u64,
    /// (min, max) of dist(Q, G^c)/diam(Q) over cubes of level >= 1.
    pub dist_ratio_range: Option<(f64, f64)>,
    pub unit_cells: usize,
    pub cube_count: usize,
}

/// Cell-exact verification of the decomposition properties.
pub fn verify_decomposition(d: &LevelSetDecomposition) -> DecompositionReport {
    let grid = *d.source.grid();
    let dim = grid.dim();

    let mut covered = CellSet::empty(grid);
    let mut disjoint = true;
    let mut cell_total: u64 = 0;
    for cube in &d.cubes {
        crate::weight::for_cells_of_cube(&grid, cube, |idx| {
            if covered.contains_index(idx) {
                disjoint = false;
            }
            cell_total += 1;
            let cell = grid.cell_from_index(idx);
            covered.insert(&cell);
        });
    }
    let tiles_exactly =
        disjoint && cell_total == d.source.count() && covered == d.source;

    let index = ContainmentIndex::build(&d.source);
    let parent_maximality = d.cubes.iter().all(|c| {
        index.full(c)
            && (c.level == grid.root_level() || !index.full(&c.parent()))
    });

    let mut overlap = vec![0u64; grid.num_cells() as usize];
    for cube in &d.cubes {
        for_cells_of_double(&grid, cube, |idx| overlap[idx as usize] += 1);
    }
    let max_overlap_of_doubles = overlap.into_iter().max().unwrap_or(0);

    let complement: Vec<Cell> = d.source.complement().iter_cells().collect();
    let mut ratio_range: Option<(f64, f64)> = None;
    let mut unit_cells = 0usize;
    for cube in &d.cubes {
        if cube.level == 0 {
            unit_cells += 1;
            continue;
        }
        let d2 = dist2_to_complement(&grid, cube, &complement);
        let diam2 = (dim as u64) << (2 * cube.level);
        let r = (d2 as f64 / diam2 as f64).sqrt();
        ratio_range = Some(match ratio_range {
            None => (r, r),
            Some((lo, hi)) => (lo.min(r), hi.max(r)),
        });
    }

    DecompositionReport {
        tiles_exactly,
        pairwise_disjoint: disjoint,
        parent_maximality,
        max_overlap_of_doubles,
        dist_ratio_range: ratio_range,
        unit_cells,
        cube_count: d.cubes.len(),
    }
}
