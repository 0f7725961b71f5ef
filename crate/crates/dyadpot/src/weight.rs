//! Weight densities, sigma-measures of cell sets, and an empirical
//! falsifier for the weak A-infinity condition
//! `|E|_sigma / |2Q|_sigma <= C * (|E|/|Q|)^theta`.
//!
//! The falsifier samples cubes Q and subsets E of Q and checks the claimed
//! character; absence of violations does not prove membership.  The
//! concentric double 2Q is clipped to the root cube, which only shrinks
//! `|2Q|_sigma` and so keeps the check conservative.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Cell, CellSet, DyadicCube, Grid};
use crate::rng::SplitMix64;

#[derive(Clone, Debug, PartialEq)]
pub enum WeightKind {
    Constant(f64),
    /// `|x - center|^gamma` sampled at cell centers.
    Power { gamma: f64, center: [f64; 3] },
    Custom,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct AinftyCharacter {
    pub theta: f64,
    pub c_sigma: f64,
}

#[derive(Clone)]
pub struct Weight {
    grid: Grid,
    density: Vec<f64>,
    kind: WeightKind,
    pub claimed_character: Option<AinftyCharacter>,
}

impl Weight {
    pub fn constant(grid: Grid, value: f64) -> Result<Weight> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::InvalidParams(format!("weight value {value} must be >= 0")));
        }
        Ok(Weight {
            grid,
            density: vec![value; grid.num_cells() as usize],
            kind: WeightKind::Constant(value),
            claimed_character: None,
        })
    }

    /// Power weight `|x - center|^gamma` evaluated at cell centers; a cell
    /// whose center coincides with the singularity gets the average over
    /// the 2^n quarter-cell corner samples.
    pub fn power(grid: Grid, gamma: f64, center: [f64; 3]) -> Result<Weight> {
        let dim = grid.dim();
        let eval = |p: &[f64; 3]| -> f64 {
            let mut r2 = 0.0;
            for i in 0..dim {
                let d = p[i] - center[i];
                r2 += d * d;
            }
            r2.sqrt().powf(gamma)
        };
        let mut density = Vec::with_capacity(grid.num_cells() as usize);
        for cell in grid.cells() {
            let mut c = [0.0f64; 3];
            for i in 0..dim {
                c[i] = cell[i] as f64 + 0.5;
            }
            let v = eval(&c);
            let v = if v.is_finite() {
                v
            } else {
                let mut acc = 0.0;
                for corner in 0..(1u32 << dim) {
                    let mut p = c;
                    for i in 0..dim {
                        p[i] += if corner >> i & 1 == 1 { 0.25 } else { -0.25 };
                    }
                    acc += eval(&p);
                }
                acc / (1u32 << dim) as f64
            };
            density.push(v);
        }
        Ok(Weight { grid, density, kind: WeightKind::Power { gamma, center }, claimed_character: None })
    }

    pub fn from_density(grid: Grid, density: Vec<f64>) -> Result<Weight> {
        if density.len() as u64 != grid.num_cells() {
            return Err(Error::InvalidParams("density length mismatch".into()));
        }
        if density.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParams("weight density must be finite and >= 0".into()));
        }
        Ok(Weight { grid, density, kind: WeightKind::Custom, claimed_character: None })
    }

    /// Indicator of the half of the root cube with small first coordinate.
    pub fn half_space(grid: Grid) -> Weight {
        let half = grid.side() / 2;
        let density = (0..grid.num_cells())
            .map(|i| if grid.cell_from_index(i)[0] < half { 1.0 } else { 0.0 })
            .collect();
        Weight { grid, density, kind: WeightKind::Custom, claimed_character: None }
    }

    /// Indicator of a single finest cell.
    pub fn single_cell(grid: Grid, cell: &Cell) -> Result<Weight> {
        grid.check_cell(cell)?;
        let mut density = vec![0.0; grid.num_cells() as usize];
        density[grid.cell_index(cell) as usize] = 1.0;
        Ok(Weight { grid, density, kind: WeightKind::Custom, claimed_character: None })
    }

    pub fn with_claim(mut self, theta: f64, c_sigma: f64) -> Weight {
        self.claimed_character = Some(AinftyCharacter { theta, c_sigma });
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kind(&self) -> &WeightKind {
        &self.kind
    }

    pub fn density_at_index(&self, idx: u64) -> f64 {
        self.density[idx as usize]
    }

    pub fn density_at(&self, cell: &Cell) -> f64 {
        self.density[self.grid.cell_index(cell) as usize]
    }

    /// Sigma-measure of a cell set (unit cell volume).
    pub fn sigma_measure(&self, set: &CellSet) -> f64 {
        let mut acc = 0.0;
        for idx in 0..self.grid.num_cells() {
            if set.contains_index(idx) {
                acc += self.density[idx as usize];
            }
        }
        acc
    }

    /// Sigma-measure of the cells of a dyadic cube.
    pub fn sigma_measure_cube(&self, cube: &DyadicCube) -> f64 {
        let mut acc = 0.0;
        for_cells_of_cube(&self.grid, cube, |idx| acc += self.density[idx as usize]);
        acc
    }

    /// Sigma-measure of the concentric double of a cube, clipped to the
    /// root cube.  A cell belongs to 2Q iff its center lies in the closed
    /// double; in cell coordinates the double of a level-k cube spans the
    /// cube expanded by `2^{k-1}` per side (one cell each side when k = 0).
    pub fn sigma_measure_double(&self, cube: &DyadicCube) -> f64 {
        let mut acc = 0.0;
        for_cells_of_double(&self.grid, cube, |idx| acc += self.density[idx as usize]);
        acc
    }
}

/// Visit the row-major cell indices of a cube.
pub fn for_cells_of_cube(grid: &Grid, cube: &DyadicCube, mut f: impl FnMut(u64)) {
    let dim = grid.dim();
    let mut lo = [0u64; 3];
    let mut hi = [1u64; 3];
    for i in 0..dim {
        let (a, b) = cube.axis_range(i);
        lo[i] = a;
        hi[i] = b;
    }
    visit_box(grid, &lo, &hi, dim, &mut f);
}

/// Visit the cells of the clipped concentric double of a cube.
pub fn for_cells_of_double(grid: &Grid, cube: &DyadicCube, mut f: impl FnMut(u64)) {
    let dim = grid.dim();
    let side = grid.side();
    let mut lo = [0u64; 3];
    let mut hi = [1u64; 3];
    for i in 0..dim {
        let (a, b) = cube.axis_range(i);
        let h = if cube.level == 0 { 1 } else { cube.side() / 2 };
        lo[i] = a.saturating_sub(h);
        hi[i] = (b + h).min(side);
    }
    visit_box(grid, &lo, &hi, dim, &mut f);
}

fn visit_box(grid: &Grid, lo: &[u64; 3], hi: &[u64; 3], dim: usize, f: &mut impl FnMut(u64)) {
    match dim {
        1 => {
            for x in lo[0]..hi[0] {
                f(grid.cell_index(&[x, 0, 0]));
            }
        }
        2 => {
            for y in lo[1]..hi[1] {
                for x in lo[0]..hi[0] {
                    f(grid.cell_index(&[x, y, 0]));
                }
            }
        }
        _ => {
            for z in lo[2]..hi[2] {
                for y in lo[1]..hi[1] {
                    for x in lo[0]..hi[0] {
                        f(grid.cell_index(&[x, y, z]));
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AinftySample {
    pub cube_level: u32,
    pub cube_coords: [u64; 3],
    pub e_cells: u64,
    pub q_cells: u64,
    pub e_sigma: f64,
    pub double_q_sigma: f64,
    pub sigma_ratio: f64,
    pub lebesgue_ratio: f64,
    pub violation: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AinftyReport {
    pub samples: usize,
    pub violations: usize,
    pub witness: Option<AinftySample>,
    pub fitted: Option<AinftyCharacter>,
    pub claimed: Option<AinftyCharacter>,
}

/// Empirical weak A-infinity falsifier.  Samples `samples` random pairs
/// (Q, E subset Q) with E a union of random dyadic subcubes of Q, then
/// appends deterministic concentration probes (single positive cells
/// against each of their dyadic ancestors), which catch indicator-type
/// weights whose mass sits on very few cells.
pub fn check_weak_ainfty(w: &Weight, samples: usize, seed: u64) -> Result<AinftyReport> {
    if samples == 0 {
        return Err(Error::InvalidParams("samples must be >= 1".into()));
    }
    let grid = *w.grid();
    let mut rng = SplitMix64::new(seed);
    let mut rows: Vec<AinftySample> = Vec::new();

    for _ in 0..samples {
        let level = rng.next_below(grid.root_level() as u64 + 1) as u32;
        let cside = grid.side() >> level;
        let mut coords = [0u64; 3];
        for c in coords.iter_mut().take(grid.dim()) {
            *c = rng.next_below(cside);
        }
        let cube = DyadicCube { level, coords };
        rows.push(sample_pair(w, &cube, &mut rng));
    }

    // Deterministic probes: each of the first positive-density cells
    // against all of its ancestors, with E = the single cell.
    let mut probes = 0;
    for idx in 0..grid.num_cells() {
        if w.density_at_index(idx) <= 0.0 {
            continue;
        }
        probes += 1;
        if probes > 64 {
            break;
        }
        let cell = grid.cell_from_index(idx);
        for level in 1..=grid.root_level() {
            let cube = grid.ancestor_of_cell(&cell, level);
            rows.push(single_cell_pair(w, &cube, &cell));
        }
    }

    let violations = rows.iter().filter(|r| r.violation).count();
    let witness = rows.iter().find(|r| r.violation).cloned();

    // Tightest character over the samples: least-squares exponent in
    // log-log coordinates, then the smallest constant covering every
    // sample at that exponent.
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.sigma_ratio > 0.0 && r.sigma_ratio.is_finite() && r.lebesgue_ratio > 0.0 && r.lebesgue_ratio < 1.0)
        .map(|r| (r.lebesgue_ratio.ln(), r.sigma_ratio.ln()))
        .collect();
    let fitted = if pts.len() >= 2 {
        let (slope, _) = least_squares(&pts);
        let theta = slope.max(0.0);
        let c_sigma = rows
            .iter()
            .filter(|r| r.sigma_ratio.is_finite() && r.lebesgue_ratio > 0.0)
            .map(|r| r.sigma_ratio / r.lebesgue_ratio.powf(theta))
            .fold(0.0f64, f64::max);
        Some(AinftyCharacter { theta, c_sigma })
    } else {
        None
    };

    Ok(AinftyReport {
        samples: rows.len(),
        violations,
        witness,
        fitted,
        claimed: w.claimed_character,
    })
}

fn sample_pair(w: &Weight, cube: &DyadicCube, rng: &mut SplitMix64) -> AinftySample {
    let grid = *w.grid();
    // E: union of random dyadic subcubes of Q (1 to 4 of them, random levels).
    let mut e = CellSet::empty(grid);
    let picks = 1 + rng.next_below(4);
    for _ in 0..picks {
        let sub_level = if cube.level == 0 { 0 } else { rng.next_below(cube.level as u64 + 1) as u32 };
        let span = 1u64 << (cube.level - sub_level);
        let mut coords = [0u64; 3];
        for (i, c) in coords.iter_mut().enumerate().take(grid.dim()) {
            *c = (cube.coords[i] << (cube.level - sub_level)) + rng.next_below(span);
        }
        let sub = DyadicCube { level: sub_level, coords };
        let mut idxs = Vec::new();
        for_cells_of_cube(&grid, &sub, |idx| idxs.push(idx));
        for idx in idxs {
            let cell = grid.cell_from_index(idx);
            e.insert(&cell);
        }
    }
    evaluate_pair(w, cube, &e)
}

fn single_cell_pair(w: &Weight, cube: &DyadicCube, cell: &Cell) -> AinftySample {
    let mut e = CellSet::empty(*w.grid());
    e.insert(cell);
    evaluate_pair(w, cube, &e)
}

fn evaluate_pair(w: &Weight, cube: &DyadicCube, e: &CellSet) -> AinftySample {
    let dim = w.grid().dim();
    let e_cells = e.count();
    let q_cells = 1u64 << (cube.level as usize * dim);
    let e_sigma = w.sigma_measure(e);
    let dbl = w.sigma_measure_double(cube);
    let sigma_ratio = if dbl > 0.0 {
        e_sigma / dbl
    } else if e_sigma > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let lebesgue_ratio = e_cells as f64 / q_cells as f64;
    let violation = match w.claimed_character {
        Some(c) => {
            if sigma_ratio.is_infinite() {
                true
            } else {
                sigma_ratio > c.c_sigma * lebesgue_ratio.powf(c.theta) * (1.0 + 1e-12)
            }
        }
        None => false,
    };
    AinftySample {
        cube_level: cube.level,
        cube_coords: cube.coords,
        e_cells,
        q_cells,
        e_sigma,
        double_q_sigma: dbl,
        sigma_ratio,
        lebesgue_ratio,
        violation,
    }
}

pub(crate) fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return (0.0, sy / n);
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    (slope, intercept)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_measure_constant_counts_cells() {
        let g = Grid::new(2, 3).unwrap();
        let w = Weight::constant(g, 1.0).unwrap();
        let mut e = CellSet::empty(g);
        e.insert(&[0, 0, 0]);
        assert_eq!(w.sigma_measure(&e), 1.0);
        e.insert(&[3, 5, 0]);
        assert_eq!(w.sigma_measure(&e), 2.0);
    }

    #[test]
    fn sigma_vanishes_off_support() {
        let g = Grid::new(1, 3).unwrap();
        let w = Weight::half_space(g);
        let mut e = CellSet::empty(g);
        e.insert(&[6, 0, 0]);
        assert_eq!(w.sigma_measure(&e), 0.0);
    }

    #[test]
    fn power_weight_midpoint_rule() {
        let g = Grid::new(1, 3).unwrap();
        let w = Weight::power(g, 1.0, [0.0, 0.0, 0.0]).unwrap();
        assert_eq!(w.density_at(&[0, 0, 0]), 0.5);
        assert_eq!(w.density_at(&[3, 0, 0]), 3.5);
    }

    #[test]
    fn power_weight_singularity_averaged() {
        // gamma < 0 with the singularity on a cell center
        let g = Grid::new(1, 2).unwrap();
        let w = Weight::power(g, -1.0, [0.5, 0.0, 0.0]).unwrap();
        let v = w.density_at(&[0, 0, 0]);
        assert!(v.is_finite());
        assert_eq!(v, 4.0); // average of |±0.25|^{-1}
    }

    #[test]
    fn additivity_random_pairs() {
        let g = Grid::new(2, 3).unwrap();
        let w = Weight::power(g, 1.0, [0.0, 0.0, 0.0]).unwrap();
        let mut rng = SplitMix64::new(77);
        for _ in 0..100 {
            let mut a = CellSet::empty(g);
            let mut b = CellSet::empty(g);
            for _ in 0..6 {
                let i = rng.next_below(g.num_cells());
                let j = rng.next_below(g.num_cells());
                if i != j {
                    a.insert(&g.cell_from_index(i));
                    if !a.contains(&g.cell_from_index(j)) {
                        b.insert(&g.cell_from_index(j));
                    }
                }
            }
            let b = b.intersection(&a.complement());
            let u = a.union(&b);
            let lhs = w.sigma_measure(&u);
            let rhs = w.sigma_measure(&a) + w.sigma_measure(&b);
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        }
    }

    #[test]
    fn constant_weight_never_violates() {
        let g = Grid::new(2, 4).unwrap();
        let w = Weight::constant(g, 1.0).unwrap().with_claim(1.0, 1.0);
        for seed in [1, 2, 3] {
            let rep = check_weak_ainfty(&w, 500, seed).unwrap();
            assert_eq!(rep.violations, 0);
        }
    }

    #[test]
    fn half_indicator_with_generous_claim_passes() {
        let g = Grid::new(2, 4).unwrap();
        let w = Weight::half_space(g).with_claim(1.0, 4.0);
        let rep = check_weak_ainfty(&w, 500, 5).unwrap();
        assert_eq!(rep.violations, 0);
    }

    #[test]
    fn single_cell_indicator_falsified() {
        let g = Grid::new(1, 6).unwrap();
        let w = Weight::single_cell(g, &[5, 0, 0]).unwrap().with_claim(1.0, 1.0);
        let rep = check_weak_ainfty(&w, 100, 9).unwrap();
        assert!(rep.violations > 0);
        let wit = rep.witness.unwrap();
        assert!(wit.sigma_ratio > wit.lebesgue_ratio);
    }
}
