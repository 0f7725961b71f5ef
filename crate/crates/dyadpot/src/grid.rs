//! Dyadic cube lattice, discrete measures, and bottom-up mass aggregation.
//!
//! The ambient space is a single root cube `[0, 2^J)^n` with unit finest
//! cells at level 0.  A `MeasureTree` stores per-level cube masses so that
//! any cube mass is a single lookup after the O(cells) build pass.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Finest-level cell, identified by its integer corner coordinates.
/// Unused trailing axes are zero.
pub type Cell = [u64; 3];

/// Cube masses are kept in a flat array per level while the cell count
/// stays below this bound; larger lattices fall back to a hash map.
pub const DENSE_CELL_LIMIT: u64 = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    dim: usize,
    root_level: u32,
}

impl Grid {
    pub fn new(dim: usize, root_level: u32) -> Result<Grid> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidParams(format!("dimension {dim} not in 1..=3")));
        }
        if root_level as usize * dim > 60 {
            return Err(Error::InvalidParams(format!(
                "grid too large: J={root_level}, n={dim}"
            )));
        }
        Ok(Grid { dim, root_level })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root_level(&self) -> u32 {
        self.root_level
    }

    /// Side length of the root cube in finest cells.
    pub fn side(&self) -> u64 {
        1u64 << self.root_level
    }

    pub fn num_cells(&self) -> u64 {
        1u64 << (self.root_level as usize * self.dim)
    }

    /// Number of cubes at a given level.
    pub fn cubes_at_level(&self, level: u32) -> u64 {
        1u64 << ((self.root_level - level) as usize * self.dim)
    }

    pub fn contains_cell(&self, cell: &Cell) -> bool {
        (0..self.dim).all(|i| cell[i] < self.side())
            && (self.dim..3).all(|i| cell[i] == 0)
    }

    pub fn check_cell(&self, cell: &Cell) -> Result<()> {
        if self.contains_cell(cell) {
            Ok(())
        } else {
            Err(Error::OutOfRange(format!("cell {cell:?} outside root cube")))
        }
    }

    pub fn contains_cube(&self, cube: &DyadicCube) -> bool {
        if cube.level > self.root_level {
            return false;
        }
        let side = 1u64 << (self.root_level - cube.level);
        (0..self.dim).all(|i| cube.coords[i] < side)
            && (self.dim..3).all(|i| cube.coords[i] == 0)
    }

    /// Row-major linear index of a cell.
    pub fn cell_index(&self, cell: &Cell) -> u64 {
        let mut idx = 0u64;
        for i in (0..self.dim).rev() {
            idx = (idx << self.root_level) | cell[i];
        }
        idx
    }

    pub fn cell_from_index(&self, mut idx: u64) -> Cell {
        let mut cell = [0u64; 3];
        let mask = self.side() - 1;
        for i in 0..self.dim {
            cell[i] = idx & mask;
            idx >>= self.root_level;
        }
        cell
    }

    /// Row-major linear index of a cube within its level.
    pub fn cube_index(&self, cube: &DyadicCube) -> u64 {
        let bits = self.root_level - cube.level;
        let mut idx = 0u64;
        for i in (0..self.dim).rev() {
            idx = (idx << bits) | cube.coords[i];
        }
        idx
    }

    /// The unique level-`level` cube containing a cell.
    pub fn ancestor_of_cell(&self, cell: &Cell, level: u32) -> DyadicCube {
        let mut coords = [0u64; 3];
        for i in 0..self.dim {
            coords[i] = cell[i] >> level;
        }
        DyadicCube { level, coords }
    }

    /// Iterate all cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.num_cells()).map(move |i| self.cell_from_index(i))
    }
}

/// A cube in the dyadic lattice: side `2^level`, corner `coords * 2^level`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadicCube {
    pub level: u32,
    pub coords: [u64; 3],
}

impl DyadicCube {
    pub fn cell(cell: Cell) -> DyadicCube {
        DyadicCube { level: 0, coords: cell }
    }

    pub fn parent(&self) -> DyadicCube {
        DyadicCube {
            level: self.level + 1,
            coords: [self.coords[0] >> 1, self.coords[1] >> 1, self.coords[2] >> 1],
        }
    }

    pub fn side(&self) -> u64 {
        1u64 << self.level
    }

    /// Cell-coordinate range `[min, max)` on one axis.
    pub fn axis_range(&self, axis: usize) -> (u64, u64) {
        let lo = self.coords[axis] << self.level;
        (lo, lo + self.side())
    }

    pub fn contains_cell(&self, cell: &Cell, dim: usize) -> bool {
        (0..dim).all(|i| cell[i] >> self.level == self.coords[i])
    }
}

/// Level of the smallest dyadic cube containing both `cube` and the cell
/// of `x`.
pub fn common_ancestor_level(grid: &Grid, cube: &DyadicCube, x: &Cell) -> Result<u32> {
    if !grid.contains_cube(cube) {
        return Err(Error::OutOfRange(format!("cube {cube:?} outside lattice")));
    }
    grid.check_cell(x)?;
    let mut level = cube.level;
    for i in 0..grid.dim() {
        let diff = (cube.coords[i] << cube.level) ^ x[i];
        let need = 64 - diff.leading_zeros();
        level = level.max(need);
    }
    Ok(level)
}

#[derive(Debug)]
enum Storage {
    Dense(Vec<Vec<f64>>),
    Sparse(Vec<HashMap<u64, f64>>),
}

/// Nonnegative measure on the dyadic grid with cube masses aggregated at
/// every level.  Immutable after construction.
#[derive(Debug)]
pub struct MeasureTree {
    grid: Grid,
    levels: Storage,
    atoms: Vec<(Cell, f64)>,
    total: f64,
}

impl MeasureTree {
    /// Build from a list of `(cell, mass)` atoms.  Duplicate cells are
    /// summed.  Negative or non-finite masses and out-of-range cells are
    /// rejected.
    pub fn build(grid: Grid, atoms: &[(Cell, f64)]) -> Result<MeasureTree> {
        for (cell, mass) in atoms {
            grid.check_cell(cell)?;
            if !mass.is_finite() || *mass < 0.0 {
                return Err(Error::InvalidParams(format!(
                    "mass {mass} at cell {cell:?} must be finite and >= 0"
                )));
            }
        }
        let nlevels = grid.root_level() as usize + 1;
        let mut levels = if grid.num_cells() <= DENSE_CELL_LIMIT {
            Storage::Dense(
                (0..nlevels)
                    .map(|k| vec![0.0; grid.cubes_at_level(k as u32) as usize])
                    .collect(),
            )
        } else {
            Storage::Sparse(vec![HashMap::new(); nlevels])
        };

        // Finest level, then parent sums bottom-up.
        match &mut levels {
            Storage::Dense(vs) => {
                for (cell, mass) in atoms {
                    vs[0][grid.cell_index(cell) as usize] += mass;
                }
                for k in 1..nlevels {
                    let (lo, hi) = vs.split_at_mut(k);
                    let child = &lo[k - 1];
                    let parent = &mut hi[0];
                    for idx in 0..child.len() {
                        let cube = DyadicCube {
                            level: k as u32 - 1,
                            coords: index_to_coords(&grid, idx as u64, k as u32 - 1),
                        };
                        let p = grid.cube_index(&cube.parent());
                        parent[p as usize] += child[idx];
                    }
                }
            }
            Storage::Sparse(vs) => {
                for (cell, mass) in atoms {
                    *vs[0].entry(grid.cell_index(cell)).or_insert(0.0) += mass;
                }
                for k in 1..nlevels {
                    let entries: Vec<(u64, f64)> =
                        vs[k - 1].iter().map(|(&i, &m)| (i, m)).collect();
                    for (idx, mass) in entries {
                        let cube = DyadicCube {
                            level: k as u32 - 1,
                            coords: index_to_coords(&grid, idx, k as u32 - 1),
                        };
                        let p = grid.cube_index(&cube.parent());
                        *vs[k].entry(p).or_insert(0.0) += mass;
                    }
                }
            }
        }

        let mut kept: Vec<(Cell, f64)> = Vec::new();
        match &levels {
            Storage::Dense(vs) => {
                for (idx, &m) in vs[0].iter().enumerate() {
                    if m > 0.0 {
                        kept.push((grid.cell_from_index(idx as u64), m));
                    }
                }
            }
            Storage::Sparse(vs) => {
                let mut entries: Vec<_> = vs[0].iter().map(|(&i, &m)| (i, m)).collect();
                entries.sort_unstable_by_key(|e| e.0);
                for (idx, m) in entries {
                    if m > 0.0 {
                        kept.push((grid.cell_from_index(idx), m));
                    }
                }
            }
        }
        let total = match &levels {
            Storage::Dense(vs) => vs[grid.root_level() as usize][0],
            Storage::Sparse(vs) => vs[grid.root_level() as usize]
                .get(&0)
                .copied()
                .unwrap_or(0.0),
        };

        Ok(MeasureTree { grid, levels, atoms: kept, total })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn total_mass(&self) -> f64 {
        self.total
    }

    /// Cells with strictly positive mass, in row-major order.
    pub fn atoms(&self) -> &[(Cell, f64)] {
        &self.atoms
    }

    pub fn cube_mass(&self, cube: &DyadicCube) -> Result<f64> {
        if !self.grid.contains_cube(cube) {
            return Err(Error::OutOfRange(format!("cube {cube:?} outside lattice")));
        }
        Ok(self.cube_mass_unchecked(cube))
    }

    pub(crate) fn cube_mass_unchecked(&self, cube: &DyadicCube) -> f64 {
        let idx = self.grid.cube_index(cube);
        match &self.levels {
            Storage::Dense(vs) => vs[cube.level as usize][idx as usize],
            Storage::Sparse(vs) => vs[cube.level as usize].get(&idx).copied().unwrap_or(0.0),
        }
    }

    /// Mass of the level-`level` cube containing `cell`.
    pub fn ancestor_mass(&self, cell: &Cell, level: u32) -> f64 {
        self.cube_mass_unchecked(&self.grid.ancestor_of_cell(cell, level))
    }

    /// The same measure with every mass multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<MeasureTree> {
        let atoms: Vec<(Cell, f64)> =
            self.atoms.iter().map(|&(cell, m)| (cell, c * m)).collect();
        MeasureTree::build(self.grid, &atoms)
    }

    /// Restriction to the cells of `set`.
    pub fn restricted(&self, set: &CellSet) -> Result<MeasureTree> {
        let atoms: Vec<(Cell, f64)> = self
            .atoms
            .iter()
            .filter(|(cell, _)| set.contains(cell))
            .cloned()
            .collect();
        MeasureTree::build(self.grid, &atoms)
    }

    /// Parse the measure input format: a header `n=<dim> J=<root_level>`
    /// followed by lines of `coord... mass`.
    pub fn parse(text: &str, origin: &str) -> Result<MeasureTree> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or_else(|| Error::Parse {
            path: origin.to_string(),
            msg: "empty measure file".into(),
        })?;
        let mut dim = None;
        let mut root = None;
        for tok in header.split_whitespace() {
            if let Some(v) = tok.strip_prefix("n=") {
                dim = v.parse::<usize>().ok();
            } else if let Some(v) = tok.strip_prefix("J=") {
                root = v.parse::<u32>().ok();
            }
        }
        let (dim, root) = match (dim, root) {
            (Some(d), Some(j)) => (d, j),
            _ => {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    msg: format!("line {hline}: expected header `n=<dim> J=<level>`"),
                })
            }
        };
        let grid = Grid::new(dim, root)?;
        let mut atoms = Vec::new();
        for (lineno, line) in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != dim + 1 {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    msg: format!("line {lineno}: expected {} fields", dim + 1),
                });
            }
            let mut cell = [0u64; 3];
            for i in 0..dim {
                cell[i] = toks[i].parse().map_err(|_| Error::Parse {
                    path: origin.to_string(),
                    msg: format!("line {lineno}: bad coordinate `{}`", toks[i]),
                })?;
            }
            let mass: f64 = toks[dim].parse().map_err(|_| Error::Parse {
                path: origin.to_string(),
                msg: format!("line {lineno}: bad mass `{}`", toks[dim]),
            })?;
            atoms.push((cell, mass));
        }
        MeasureTree::build(grid, &atoms)
    }

    pub fn load(path: &Path) -> Result<MeasureTree> {
        let text = std::fs::read_to_string(path)?;
        MeasureTree::parse(&text, &path.display().to_string())
    }

    pub fn to_file_format(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n={} J={}", self.grid.dim(), self.grid.root_level());
        for (cell, mass) in &self.atoms {
            for i in 0..self.grid.dim() {
                let _ = write!(out, "{} ", cell[i]);
            }
            let _ = writeln!(out, "{mass:e}");
        }
        out
    }
}

fn index_to_coords(grid: &Grid, mut idx: u64, level: u32) -> [u64; 3] {
    let bits = grid.root_level() - level;
    let mask = (1u64 << bits) - 1;
    let mut coords = [0u64; 3];
    for i in 0..grid.dim() {
        coords[i] = idx & mask;
        idx >>= bits;
    }
    coords
}

/// Random sparse measure: `atoms` uniform cells with uniform (0, 1] masses.
pub fn random_sparse_measure(grid: Grid, atoms: usize, seed: u64) -> MeasureTree {
    let mut rng = SplitMix64::new(seed);
    let list: Vec<(Cell, f64)> = (0..atoms)
        .map(|_| {
            let mut cell = [0u64; 3];
            for c in cell.iter_mut().take(grid.dim()) {
                *c = rng.next_below(grid.side());
            }
            (cell, 1.0 - rng.next_f64())
        })
        .collect();
    MeasureTree::build(grid, &list).expect("in-range atoms")
}

/// Set of finest-level cells, stored as a bitmask over the root cube.
#[derive(Clone, PartialEq, Eq)]
pub struct CellSet {
    grid: Grid,
    bits: Vec<u64>,
}

impl CellSet {
    pub fn empty(grid: Grid) -> CellSet {
        let words = (grid.num_cells() as usize + 63) / 64;
        CellSet { grid, bits: vec![0; words] }
    }

    pub fn full(grid: Grid) -> CellSet {
        let mut s = CellSet::empty(grid);
        for i in 0..grid.num_cells() {
            s.insert_index(i);
        }
        s
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn insert(&mut self, cell: &Cell) {
        self.insert_index(self.grid.cell_index(cell));
    }

    fn insert_index(&mut self, idx: u64) {
        self.bits[(idx / 64) as usize] |= 1u64 << (idx % 64);
    }

    pub fn contains(&self, cell: &Cell) -> bool {
        self.contains_index(self.grid.cell_index(cell))
    }

    pub fn contains_index(&self, idx: u64) -> bool {
        self.bits[(idx / 64) as usize] >> (idx % 64) & 1 == 1
    }

    pub fn count(&self) -> u64 {
        self.bits.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    pub fn union(&self, other: &CellSet) -> CellSet {
        assert_eq!(self.grid, other.grid);
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| a | b).collect();
        CellSet { grid: self.grid, bits }
    }

    pub fn intersection(&self, other: &CellSet) -> CellSet {
        assert_eq!(self.grid, other.grid);
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| a & b).collect();
        CellSet { grid: self.grid, bits }
    }

    /// Complement within the root cube.
    pub fn complement(&self) -> CellSet {
        let mut out = CellSet::empty(self.grid);
        for i in 0..self.grid.num_cells() {
            if !self.contains_index(i) {
                out.insert_index(i);
            }
        }
        out
    }

    pub fn iter_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.grid.num_cells())
            .filter(|&i| self.contains_index(i))
            .map(|i| self.grid.cell_from_index(i))
    }

    /// All cells of a dyadic cube.
    pub fn from_cube(grid: Grid, cube: &DyadicCube) -> CellSet {
        let mut s = CellSet::empty(grid);
        let mut stack = vec![*cube];
        while let Some(c) = stack.pop() {
            if c.level == 0 {
                s.insert(&c.coords);
            } else {
                for child in children_of(grid.dim(), &c) {
                    stack.push(child);
                }
            }
        }
        s
    }
}

/// The `2^dim` children of a cube (level must be >= 1).
pub fn children_of(dim: usize, cube: &DyadicCube) -> Vec<DyadicCube> {
    let mut out = Vec::with_capacity(1 << dim);
    for bits in 0..(1u64 << dim) {
        let mut coords = [0u64; 3];
        for i in 0..dim {
            coords[i] = (cube.coords[i] << 1) | (bits >> i & 1);
        }
        out.push(DyadicCube { level: cube.level - 1, coords });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(j: u32) -> Grid {
        Grid::new(1, j).unwrap()
    }

    #[test]
    fn zero_measure() {
        let t = MeasureTree::build(grid1(3), &[]).unwrap();
        assert_eq!(t.total_mass(), 0.0);
        for k in 0..=3 {
            for idx in 0..t.grid().cubes_at_level(k) {
                let cube = DyadicCube { level: k, coords: [idx << 0, 0, 0] };
                assert_eq!(t.cube_mass(&cube).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn single_atom_parent_sum() {
        let t = MeasureTree::build(grid1(3), &[([0, 0, 0], 3.0)]).unwrap();
        assert_eq!(t.cube_mass(&DyadicCube { level: 3, coords: [0, 0, 0] }).unwrap(), 3.0);
        assert_eq!(t.cube_mass(&DyadicCube { level: 0, coords: [0, 0, 0] }).unwrap(), 3.0);
        assert_eq!(t.cube_mass(&DyadicCube { level: 0, coords: [1, 0, 0] }).unwrap(), 0.0);
    }

    #[test]
    fn two_atoms_direct_sums() {
        let t =
            MeasureTree::build(grid1(3), &[([0, 0, 0], 1.0), ([4, 0, 0], 2.0)]).unwrap();
        assert_eq!(t.cube_mass(&DyadicCube { level: 2, coords: [0, 0, 0] }).unwrap(), 1.0);
        assert_eq!(t.cube_mass(&DyadicCube { level: 2, coords: [1, 0, 0] }).unwrap(), 2.0);
        assert_eq!(t.total_mass(), 3.0);
    }

    #[test]
    fn cube_mass_matches_cell_scan() {
        let t =
            MeasureTree::build(grid1(3), &[([0, 0, 0], 1.0), ([1, 0, 0], 2.0)]).unwrap();
        assert_eq!(t.cube_mass(&DyadicCube { level: 1, coords: [0, 0, 0] }).unwrap(), 3.0);
    }

    #[test]
    fn rejects_bad_atoms() {
        assert!(MeasureTree::build(grid1(3), &[([0, 0, 0], -1.0)]).is_err());
        assert!(MeasureTree::build(grid1(3), &[([8, 0, 0], 1.0)]).is_err());
        assert!(MeasureTree::build(grid1(3), &[([0, 0, 0], f64::NAN)]).is_err());
    }

    #[test]
    fn ancestor_levels() {
        let g = grid1(3);
        let a = DyadicCube::cell([0, 0, 0]);
        assert_eq!(common_ancestor_level(&g, &a, &[0, 0, 0]).unwrap(), 0);
        assert_eq!(common_ancestor_level(&g, &a, &[1, 0, 0]).unwrap(), 1);
        assert_eq!(common_ancestor_level(&g, &a, &[2, 0, 0]).unwrap(), 2);
        assert_eq!(common_ancestor_level(&g, &a, &[3, 0, 0]).unwrap(), 2);
        assert_eq!(common_ancestor_level(&g, &a, &[4, 0, 0]).unwrap(), 3);
    }

    #[test]
    fn ancestor_level_matches_exhaustive_walk() {
        let g = Grid::new(2, 4).unwrap();
        for a in g.cells() {
            for x in g.cells() {
                let got = common_ancestor_level(&g, &DyadicCube::cell(a), &x).unwrap();
                let mut walk = 0;
                while !g.ancestor_of_cell(&a, walk).contains_cell(&x, g.dim()) {
                    walk += 1;
                }
                assert_eq!(got, walk);
            }
        }
    }

    #[test]
    fn sparse_storage_round_trip() {
        // J=26 in 1-D exceeds the dense limit.
        let g = Grid::new(1, 26).unwrap();
        let t = MeasureTree::build(g, &[([0, 0, 0], 1.5), ([12_345_678, 0, 0], 2.5)]).unwrap();
        assert_eq!(t.total_mass(), 4.0);
        assert_eq!(t.ancestor_mass(&[0, 0, 0], 0), 1.5);
        assert_eq!(t.ancestor_mass(&[12_345_678, 0, 0], 3), 2.5);
        assert_eq!(t.ancestor_mass(&[0, 0, 0], 26), 4.0);
    }

    #[test]
    fn measure_file_round_trip() {
        let src = "n=2 J=3\n0 0 1.25\n7 7 0.5\n";
        let t = MeasureTree::parse(src, "test").unwrap();
        assert_eq!(t.total_mass(), 1.75);
        let t2 = MeasureTree::parse(&t.to_file_format(), "test2").unwrap();
        assert_eq!(t2.total_mass(), 1.75);
        assert_eq!(t2.atoms(), t.atoms());
    }

    #[test]
    fn cellset_ops() {
        let g = Grid::new(2, 3).unwrap();
        let mut a = CellSet::empty(g);
        a.insert(&[0, 0, 0]);
        a.insert(&[1, 1, 0]);
        let mut b = CellSet::empty(g);
        b.insert(&[1, 1, 0]);
        b.insert(&[2, 2, 0]);
        assert_eq!(a.union(&b).count(), 3);
        assert_eq!(a.intersection(&b).count(), 1);
        assert_eq!(a.complement().count(), g.num_cells() - 2);
    }

    #[test]
    fn parent_sum_random_trees() {
        for seed in 0..100 {
            let g = Grid::new(2, 4).unwrap();
            let t = random_sparse_measure(g, 20, seed);
            for k in 1..=4u32 {
                for idx in 0..g.cubes_at_level(k) {
                    let coords = super::index_to_coords(&g, idx, k);
                    let cube = DyadicCube { level: k, coords };
                    let sum: f64 = children_of(g.dim(), &cube)
                        .iter()
                        .map(|c| t.cube_mass(c).unwrap())
                        .sum();
                    let m = t.cube_mass(&cube).unwrap();
                    assert!((m - sum).abs() <= 1e-12 * m.max(1.0));
                }
            }
        }
    }
}
