//! Dyadic nonlinear potentials, shell functions, and fractional maximal
//! operators, evaluated at finest-cell centers.
//!
//! The dyadic potential at a cell x is the l^q norm of the terms
//! `mass(Q_k(x)) / 2^{k(n-alpha)}` over the levels in range, where Q_k(x)
//! is the unique level-k cube containing x.  The ball variants use dyadic
//! radii `2^j` with the center-in-ball membership rule: a cell belongs to
//! B(x, r) iff its center lies within Euclidean distance r of the center
//! of x.  Cubes strictly containing the root all carry the total mass, so
//! their contribution is a closed-form geometric tail.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Cell, Grid, MeasureTree};

#[derive(Clone, Copy, Debug)]
pub struct PotentialParams {
    pub alpha: f64,
    pub q: f64,
    pub level_min: u32,
    pub level_max: u32,
    pub include_supercube_tail: bool,
}

impl PotentialParams {
    pub fn new(alpha: f64, q: f64, level_min: u32, level_max: u32) -> PotentialParams {
        PotentialParams { alpha, q, level_min, level_max, include_supercube_tail: false }
    }

    pub fn with_tail(mut self) -> PotentialParams {
        self.include_supercube_tail = true;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < dim as f64) {
            return Err(Error::InvalidParams(format!(
                "alpha {} not in (0, {})",
                self.alpha, dim
            )));
        }
        if !(self.q > 0.0 && self.q.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "q {} must be positive and finite; use the maximal operators for q = inf",
                self.q
            )));
        }
        if self.level_min > self.level_max {
            return Err(Error::InvalidParams(format!(
                "level_min {} > level_max {}",
                self.level_min, self.level_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldOp {
    DyadicPotential,
    BallPotential,
    MaximalDyadic,
    MaximalBall,
}

#[inline]
fn pow_q(x: f64, q: f64) -> f64 {
    if q == 1.0 {
        x
    } else if q == 2.0 {
        x * x
    } else {
        x.powf(q)
    }
}

#[inline]
fn root_q(x: f64, q: f64) -> f64 {
    if q == 1.0 {
        x
    } else if q == 2.0 {
        x.sqrt()
    } else {
        x.powf(1.0 / q)
    }
}

/// `2^{-k(n-alpha)}`.
#[inline]
fn level_weight(k: u32, dim: usize, alpha: f64) -> f64 {
    (-(k as f64) * (dim as f64 - alpha)).exp2()
}

/// Closed-form tail over the virtual supercubes of the root: the sum of
/// `(total / 2^{k(n-alpha)})^q` for k > J, which is geometric.
fn supercube_tail_q(tree: &MeasureTree, params: &PotentialParams) -> f64 {
    let total = tree.total_mass();
    if total == 0.0 {
        return 0.0;
    }
    let dim = tree.grid().dim();
    let first = pow_q(
        total * level_weight(tree.grid().root_level() + 1, dim, params.alpha),
        params.q,
    );
    let ratio = (-params.q * (dim as f64 - params.alpha)).exp2();
    first / (1.0 - ratio)
}

/// The largest single supercube term, `total / 2^{(J+1)(n-alpha)}`; this is
/// the q = inf limit of the tail.
fn supercube_tail_sup(tree: &MeasureTree, params: &PotentialParams) -> f64 {
    tree.total_mass() * level_weight(tree.grid().root_level() + 1, tree.grid().dim(), params.alpha)
}

pub fn dyadic_potential(tree: &MeasureTree, params: &PotentialParams, x: &Cell) -> Result<f64> {
    params.validate(tree.grid().dim())?;
    tree.grid().check_cell(x)?;
    Ok(dyadic_potential_unchecked(tree, params, x))
}

pub(crate) fn dyadic_potential_unchecked(
    tree: &MeasureTree,
    params: &PotentialParams,
    x: &Cell,
) -> f64 {
    let dim = tree.grid().dim();
    let top = params.level_max.min(tree.grid().root_level());
    let mut acc = 0.0;
    let mut sup: f64 = 0.0;
    for k in params.level_min..=top {
        let m = tree.ancestor_mass(x, k);
        if m > 0.0 {
            let term = m * level_weight(k, dim, params.alpha);
            acc += pow_q(term, params.q);
            sup = sup.max(term);
        }
    }
    if params.include_supercube_tail {
        acc += supercube_tail_q(tree, params);
        sup = sup.max(supercube_tail_sup(tree, params));
    }
    // the l^q combination can round one ulp below its largest term for
    // irrational powers; clamping keeps the maximal function dominated
    root_q(acc, params.q).max(sup)
}

/// Single-level contribution `mass(Q_k(x)) / 2^{k(n-alpha)}`.
pub fn shell_function(
    tree: &MeasureTree,
    params: &PotentialParams,
    k: u32,
    x: &Cell,
) -> Result<f64> {
    params.validate(tree.grid().dim())?;
    tree.grid().check_cell(x)?;
    if k < params.level_min || k > params.level_max || k > tree.grid().root_level() {
        return Err(Error::OutOfRange(format!("level {k} outside range")));
    }
    Ok(tree.ancestor_mass(x, k) * level_weight(k, tree.grid().dim(), params.alpha))
}

pub fn fractional_maximal_dyadic(
    tree: &MeasureTree,
    params: &PotentialParams,
    x: &Cell,
) -> Result<f64> {
    params.validate(tree.grid().dim())?;
    tree.grid().check_cell(x)?;
    Ok(fractional_maximal_dyadic_unchecked(tree, params, x))
}

pub(crate) fn fractional_maximal_dyadic_unchecked(
    tree: &MeasureTree,
    params: &PotentialParams,
    x: &Cell,
) -> f64 {
    let dim = tree.grid().dim();
    let top = params.level_max.min(tree.grid().root_level());
    let mut sup: f64 = 0.0;
    for k in params.level_min..=top {
        let m = tree.ancestor_mass(x, k);
        if m > 0.0 {
            sup = sup.max(m * level_weight(k, dim, params.alpha));
        }
    }
    if params.include_supercube_tail {
        sup = sup.max(supercube_tail_sup(tree, params));
    }
    sup
}

/// Mass of the dyadic-radius ball B(center of x, 2^j) under the
/// center-in-ball rule; exact integer distance comparison.
pub fn ball_mass(tree: &MeasureTree, x: &Cell, j: u32) -> f64 {
    let dim = tree.grid().dim();
    let r2 = if j >= 32 { u128::MAX } else { 1u128 << (2 * j) };
    let mut acc = 0.0;
    for (cell, mass) in tree.atoms() {
        let mut d2: u128 = 0;
        for i in 0..dim {
            let d = cell[i].abs_diff(x[i]) as u128;
            d2 += d * d;
        }
        if d2 <= r2 {
            acc += mass;
        }
    }
    acc
}

pub fn ball_potential(tree: &MeasureTree, params: &PotentialParams, x: &Cell) -> Result<f64> {
    params.validate(tree.grid().dim())?;
    tree.grid().check_cell(x)?;
    let dim = tree.grid().dim();
    let mut acc = 0.0;
    let mut sup: f64 = 0.0;
    for j in params.level_min..=params.level_max {
        let m = ball_mass(tree, x, j);
        if m > 0.0 {
            let term = m * level_weight(j, dim, params.alpha);
            acc += pow_q(term, params.q);
            sup = sup.max(term);
        }
    }
    Ok(root_q(acc, params.q).max(sup))
}

pub fn fractional_maximal_ball(
    tree: &MeasureTree,
    params: &PotentialParams,
    x: &Cell,
) -> Result<f64> {
    params.validate(tree.grid().dim())?;
    tree.grid().check_cell(x)?;
    let dim = tree.grid().dim();
    let mut sup: f64 = 0.0;
    for j in params.level_min..=params.level_max {
        let m = ball_mass(tree, x, j);
        if m > 0.0 {
            sup = sup.max(m * level_weight(j, dim, params.alpha));
        }
    }
    Ok(sup)
}

/// Pointwise values over all finest-cell centers, in row-major cell order.
#[derive(Clone)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn zero(grid: Grid) -> Field {
        Field { grid, values: vec![0.0; grid.num_cells() as usize] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, cell: &Cell) -> f64 {
        self.values[self.grid.cell_index(cell) as usize]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Field {
        Field { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// CSV rows `coord...,value` with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&match self.grid.dim() {
            1 => "x,value\n".to_string(),
            2 => "x,y,value\n".to_string(),
            _ => "x,y,z,value\n".to_string(),
        });
        for idx in 0..self.grid.num_cells() {
            let cell = self.grid.cell_from_index(idx);
            for i in 0..self.grid.dim() {
                out.push_str(&format!("{},", cell[i]));
            }
            out.push_str(&format!("{:.16e}\n", self.values[idx as usize]));
        }
        out
    }
}

/// Batch evaluation at every finest cell.  Points are independent, so the
/// map runs in parallel; per-point summation order is fixed, making the
/// result identical to sequential evaluation.
pub fn potential_field(tree: &MeasureTree, params: &PotentialParams, op: FieldOp) -> Result<Field> {
    params.validate(tree.grid().dim())?;
    let grid = *tree.grid();
    let n = grid.num_cells();
    if n > crate::grid::DENSE_CELL_LIMIT {
        return Err(Error::InvalidParams(
            "field evaluation requires a dense-size grid".into(),
        ));
    }
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let cell = grid.cell_from_index(idx);
            match op {
                FieldOp::DyadicPotential => dyadic_potential_unchecked(tree, params, &cell),
                FieldOp::MaximalDyadic => {
                    fractional_maximal_dyadic_unchecked(tree, params, &cell)
                }
                FieldOp::BallPotential => ball_potential(tree, params, &cell).unwrap(),
                FieldOp::MaximalBall => fractional_maximal_ball(tree, params, &cell).unwrap(),
            }
        })
        .collect();
    Ok(Field { grid, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::MeasureTree;

    fn unit_atom_1d(j: u32) -> MeasureTree {
        let g = Grid::new(1, j).unwrap();
        MeasureTree::build(g, &[([0, 0, 0], 1.0)]).unwrap()
    }

    #[test]
    fn zero_measure_all_zero() {
        let g = Grid::new(1, 5).unwrap();
        let t = MeasureTree::build(g, &[]).unwrap();
        let p = PotentialParams::new(0.5, 1.0, 0, 5);
        assert_eq!(dyadic_potential(&t, &p, &[0, 0, 0]).unwrap(), 0.0);
        assert_eq!(ball_potential(&t, &p, &[0, 0, 0]).unwrap(), 0.0);
        assert_eq!(fractional_maximal_dyadic(&t, &p, &[0, 0, 0]).unwrap(), 0.0);
        assert_eq!(fractional_maximal_ball(&t, &p, &[0, 0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn unit_atom_geometric_sum_q1() {
        let t = unit_atom_1d(10);
        let p = PotentialParams::new(0.5, 1.0, 0, 10);
        let oracle: f64 = (0..=10).map(|k| (-(k as f64) * 0.5).exp2()).sum();
        let got = dyadic_potential(&t, &p, &[0, 0, 0]).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 3.338769).abs() < 1e-6);
    }

    #[test]
    fn unit_atom_geometric_sum_q2() {
        let t = unit_atom_1d(10);
        let p = PotentialParams::new(0.5, 2.0, 0, 10);
        let oracle = (2.0 - (2.0f64).powi(-10)).sqrt();
        let got = dyadic_potential(&t, &p, &[0, 0, 0]).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 1.413869).abs() < 1e-6);
    }

    #[test]
    fn shell_function_values() {
        let t = unit_atom_1d(4);
        let p = PotentialParams::new(0.5, 1.0, 0, 4);
        // atom inside Q_2(x): mass 1 / 2^{2*0.5} = 0.5
        let g2 = shell_function(&t, &p, 2, &[1, 0, 0]).unwrap();
        assert!((g2 - 0.5).abs() < 1e-15);
        // atom outside the level-1 cube of cell 2
        assert_eq!(shell_function(&t, &p, 1, &[2, 0, 0]).unwrap(), 0.0);
        let zero = MeasureTree::build(*t.grid(), &[]).unwrap();
        assert_eq!(shell_function(&zero, &p, 2, &[1, 0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn ball_potential_matches_dyadic_for_atom_at_center() {
        // Every ball B(x, 2^j) contains the atom sitting in x's own cell.
        let t = unit_atom_1d(10);
        let p = PotentialParams::new(0.5, 1.0, 0, 10);
        let got = ball_potential(&t, &p, &[0, 0, 0]).unwrap();
        assert!((got - 3.338769).abs() < 1e-6);
    }

    #[test]
    fn ball_terms_vanish_below_distance() {
        let g = Grid::new(1, 6).unwrap();
        let t = MeasureTree::build(g, &[([5, 0, 0], 1.0)]).unwrap();
        for j in 0..=2 {
            assert_eq!(ball_mass(&t, &[0, 0, 0], j), 0.0);
        }
        assert_eq!(ball_mass(&t, &[0, 0, 0], 3), 1.0);
    }

    #[test]
    fn maximal_dyadic_unit_atom() {
        let t = unit_atom_1d(10);
        let p = PotentialParams::new(0.5, 1.0, 0, 10);
        // sup_k 2^{-k/2} = 1 at k = 0
        assert_eq!(fractional_maximal_dyadic(&t, &p, &[0, 0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn maximal_dyadic_uniform_density() {
        let g = Grid::new(1, 10).unwrap();
        let atoms: Vec<_> = (0..1024).map(|i| ([i, 0, 0], 1.0)).collect();
        let t = MeasureTree::build(g, &atoms).unwrap();
        let p = PotentialParams::new(0.5, 1.0, 0, 10);
        // sup_k 2^k * 2^{-k/2} attained at k = J: 2^5 = 32
        let got = fractional_maximal_dyadic(&t, &p, &[17, 0, 0]).unwrap();
        assert!((got - 32.0).abs() < 1e-9);
    }

    #[test]
    fn maximal_ball_unit_atom() {
        let t = unit_atom_1d(6);
        let p = PotentialParams::new(0.5, 1.0, 0, 6);
        assert_eq!(fractional_maximal_ball(&t, &p, &[0, 0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn maximal_ball_far_field_decay() {
        // Measure in a small ball, evaluation far outside its double.
        let g = Grid::new(1, 8).unwrap();
        let t = MeasureTree::build(g, &[([0, 0, 0], 1.0), ([1, 0, 0], 1.0)]).unwrap();
        let p = PotentialParams::new(0.5, 1.0, 0, 8);
        let x = [200, 0, 0];
        let got = fractional_maximal_ball(&t, &p, &x).unwrap();
        // enumeration oracle
        let mut oracle: f64 = 0.0;
        for j in 0..=8u32 {
            let m = ball_mass(&t, &x, j);
            oracle = oracle.max(m * (-(j as f64) * 0.5).exp2());
        }
        assert_eq!(got, oracle);
        let dist = 199.0f64;
        assert!(got <= 2.0 / dist.powf(0.5));
    }

    #[test]
    fn tail_matches_brute_force() {
        let g = Grid::new(2, 4).unwrap();
        let t = crate::grid::random_sparse_measure(g, 30, 9);
        for &q in &[0.5, 1.0, 2.0] {
            let p = PotentialParams::new(1.2, q, 0, 4).with_tail();
            let closed = supercube_tail_q(&t, &p);
            let mut brute = 0.0;
            for k in 5..305u32 {
                brute += pow_q(t.total_mass() * level_weight(k, 2, p.alpha), q);
            }
            assert!((closed - brute).abs() <= 1e-12 * closed.max(1e-300));
        }
    }

    #[test]
    fn field_matches_pointwise() {
        let g = Grid::new(2, 5).unwrap();
        let t = crate::grid::random_sparse_measure(g, 25, 3);
        let p = PotentialParams::new(1.0, 1.0, 0, 5).with_tail();
        let f = potential_field(&t, &p, FieldOp::DyadicPotential).unwrap();
        let mut rng = crate::rng::SplitMix64::new(5);
        for _ in 0..100 {
            let idx = rng.next_below(g.num_cells());
            let cell = g.cell_from_index(idx);
            assert_eq!(f.at(&cell), dyadic_potential(&t, &p, &cell).unwrap());
        }
    }

    #[test]
    fn rejects_bad_params() {
        let t = unit_atom_1d(4);
        assert!(dyadic_potential(&t, &PotentialParams::new(0.5, 0.0, 0, 4), &[0, 0, 0]).is_err());
        assert!(dyadic_potential(&t, &PotentialParams::new(1.5, 1.0, 0, 4), &[0, 0, 0]).is_err());
        assert!(dyadic_potential(&t, &PotentialParams::new(0.5, 1.0, 0, 4), &[99, 0, 0]).is_err());
    }

    #[test]
    fn homogeneity_exact_for_binary_scales() {
        let g = Grid::new(2, 5).unwrap();
        let t = crate::grid::random_sparse_measure(g, 25, 11);
        let p = PotentialParams::new(1.0, 1.0, 0, 5).with_tail();
        for &c in &[0.5, 2.0] {
            let tc = t.scaled(c).unwrap();
            for idx in (0..g.num_cells()).step_by(7) {
                let cell = g.cell_from_index(idx);
                let a = dyadic_potential(&t, &p, &cell).unwrap();
                let b = dyadic_potential(&tc, &p, &cell).unwrap();
                assert_eq!(b, c * a);
            }
        }
    }
}
