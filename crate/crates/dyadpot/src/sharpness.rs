//! The exact sharpness construction for the good-lambda inequality at
//! q = 1: a radial step density f on nested cubes Q^j = [0, 2^j)^n whose
//! auxiliary potential A has closed-form values on every annulus
//! Q^k \ Q^{k-1}, together with the containment and size checks that give
//! a level-set ratio bounded below by c1 * exp(-c2 / epsilon).
//!
//! The closed form is validated against the literal double-sum oracle
//! `eval_a_direct`; the annulus formula used here carries the factor
//! `2^n * 2^{-k alpha}` in the own-annulus term and `(N - k)` outer
//! shells, which is what the double sum actually produces.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Cell, Grid, MeasureTree, DENSE_CELL_LIMIT};
use crate::potential::{
    fractional_maximal_ball, potential_field, FieldOp, PotentialParams,
};

pub struct SharpExample {
    pub epsilon: f64,
    pub dim: usize,
    pub alpha: f64,
    /// delta = epsilon * (1 - 2^{alpha - n})
    pub delta: f64,
    /// N = floor(2 / delta); the root cube is Q^N.
    pub shells: u32,
    grid: Grid,
    /// Density of f per cell on annulus j (index 0 is Q^0 itself).
    annulus_density: Vec<f64>,
    /// Cumulative masses mu(Q^l), l = 0..=N.
    cube_mass: Vec<f64>,
    /// Dense grid holding f when the cell count permits; otherwise the
    /// construction stays annulus-implicit.
    tree: Option<MeasureTree>,
}

impl SharpExample {
    pub fn build(epsilon: f64, dim: usize, alpha: f64) -> Result<SharpExample> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::InvalidParams(format!("epsilon {epsilon} not in (0, 1]")));
        }
        if !(alpha > 0.0 && alpha < dim as f64) {
            return Err(Error::InvalidParams(format!("alpha {alpha} not in (0, {dim})")));
        }
        let n_alpha = dim as f64 - alpha;
        let delta = epsilon * (1.0 - (-n_alpha).exp2());
        let shells = (2.0 / delta).floor() as u32;
        let grid = Grid::new(dim, shells)?;

        let faces = (1u64 << dim) - 1; // 2^n - 1
        let mut annulus_density = vec![delta];
        let mut cube_mass = vec![delta];
        for j in 1..=shells {
            let count = (faces as f64) * ((dim as f64) * (j as f64 - 1.0)).exp2();
            let shell_mass = delta * ((j as f64) * n_alpha).exp2();
            annulus_density.push(shell_mass / count);
            cube_mass.push(cube_mass[j as usize - 1] + shell_mass);
        }

        let tree = if grid.num_cells() <= DENSE_CELL_LIMIT {
            let mut atoms = Vec::with_capacity(grid.num_cells() as usize);
            for cell in grid.cells() {
                let j = annulus_index(&grid, &cell);
                atoms.push((cell, annulus_density[j as usize]));
            }
            Some(MeasureTree::build(grid, &atoms)?)
        } else {
            None
        };

        Ok(SharpExample {
            epsilon,
            dim,
            alpha,
            delta,
            shells,
            grid,
            annulus_density,
            cube_mass,
            tree,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn tree(&self) -> Option<&MeasureTree> {
        self.tree.as_ref()
    }

    pub fn annulus_density(&self, j: u32) -> f64 {
        self.annulus_density[j as usize]
    }

    /// mu(Q^l), closed form.
    pub fn nested_cube_mass(&self, l: u32) -> f64 {
        self.cube_mass[l as usize]
    }

    pub fn total_mass(&self) -> f64 {
        self.cube_mass[self.shells as usize]
    }

    /// Closed-form value of A, constant on each annulus.
    pub fn value_on_annulus(&self, k: u32) -> f64 {
        let n_alpha = self.dim as f64 - self.alpha;
        if k == 0 {
            return self.delta * (self.shells as f64 + 1.0);
        }
        let s1: f64 = (1..=k).map(|j| (-(j as f64) * n_alpha).exp2()).sum();
        let s2: f64 = (1..k).map(|j| (-(j as f64) * self.alpha).exp2()).sum();
        let pow_n = (1u64 << self.dim) as f64;
        let own = (pow_n - 2.0 + pow_n * (-(k as f64) * self.alpha).exp2()) / (pow_n - 1.0);
        self.delta * (s1 + s2 + own + (self.shells - k) as f64)
    }

    pub fn eval_a_closed(&self, x: &Cell) -> Result<f64> {
        self.grid.check_cell(x)?;
        Ok(self.value_on_annulus(annulus_index(&self.grid, x)))
    }

    /// Literal double-sum oracle: delta * l(Q^0_x)^{alpha-n} plus, for
    /// each annulus, its density-normalization factor times the sum of
    /// l(P_x)^{alpha-n} over all unit cells P of the annulus, where P_x
    /// is the smallest dyadic cube containing both P and x.  Requires the
    /// dense form.
    pub fn eval_a_direct(&self, x: &Cell) -> Result<f64> {
        self.grid.check_cell(x)?;
        if self.tree.is_none() {
            return Err(Error::InvalidParams(
                "direct evaluation requires the dense form".into(),
            ));
        }
        let n_alpha = self.dim as f64 - self.alpha;
        let nmax = self.shells as usize;
        // 2^{L(alpha-n)} lookup per ancestor level.
        let pow_table: Vec<f64> =
            (0..=nmax as u32).map(|l| (-(l as f64) * n_alpha).exp2()).collect();

        let mut shell_sums = vec![0.0f64; nmax + 1];
        let mut origin_term = 0.0f64;
        for cell in self.grid.cells() {
            let mut level = 0u32;
            for i in 0..self.dim {
                level = level.max(64 - (cell[i] ^ x[i]).leading_zeros());
            }
            let j = annulus_index(&self.grid, &cell);
            if j == 0 {
                origin_term = pow_table[level as usize];
            } else {
                shell_sums[j as usize] += pow_table[level as usize];
            }
        }
        let faces = ((1u64 << self.dim) - 1) as f64;
        let mut acc = self.delta * origin_term;
        for j in 1..=nmax {
            let count = faces * ((self.dim as f64) * (j as f64 - 1.0)).exp2();
            let factor = ((j as f64) * n_alpha).exp2() / count;
            acc += self.delta * factor * shell_sums[j];
        }
        Ok(acc)
    }

    /// Dyadic fractional maximal value of f, constant on each annulus:
    /// the sup over levels 0..=N of mu(Q_l(x)) / 2^{l(n-alpha)}.
    pub fn maximal_on_annulus(&self, k: u32) -> f64 {
        let n_alpha = self.dim as f64 - self.alpha;
        let mut sup: f64 = 0.0;
        // Levels below the annulus: uniform density, mass 2^{ln} per cube.
        if k >= 1 {
            for l in 0..k {
                let m = self.annulus_density[k as usize] * ((self.dim as f64) * l as f64).exp2();
                sup = sup.max(m * (-(l as f64) * n_alpha).exp2());
            }
        }
        for l in k..=self.shells {
            sup = sup.max(self.cube_mass[l as usize] * (-(l as f64) * n_alpha).exp2());
        }
        sup
    }
}

/// Smallest j with x in Q^j: 0 for the origin cell, else the bit length
/// of the largest coordinate.
pub fn annulus_index(grid: &Grid, x: &Cell) -> u32 {
    let mut top = 0u64;
    for i in 0..grid.dim() {
        top = top.max(x[i]);
    }
    64 - top.leading_zeros()
}

#[derive(Clone, Debug, Serialize)]
pub struct SharpnessReport {
    pub epsilon: f64,
    pub dim: usize,
    pub alpha: f64,
    pub delta: f64,
    pub shells: u32,
    /// max over Q^0 of the dyadic fractional maximal of f.
    pub maximal_on_core: f64,
    /// max over Q^0 of the dyadic-radius ball maximal (dense form only).
    pub ball_maximal_on_core: Option<f64>,
    pub maximal_bound_ok: bool,
    pub core_in_numerator_set: bool,
    /// Smallest k0 with {A > 1} contained in Q^{k0}.
    pub k0: u32,
    pub k0_times_epsilon: f64,
    /// |{A > 2, M <= eps}| / |{A > 1}| in cell counts.
    pub ratio: f64,
    pub ratio_lower_bound: f64,
    pub ratio_ok: bool,
    /// Range of (dyadic potential, q = 1) / A over all cells, dense only.
    pub potential_comparability: Option<(f64, f64)>,
    pub per_annulus_value: Vec<f64>,
    pub hard_pass: bool,
}

impl SharpnessReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("annulus,cells,value,maximal\n");
        out
            .push_str(&format!("0,1,{:.16e},{:.16e}\n", self.per_annulus_value[0], self.maximal_on_core));
        out
    }
}

pub fn sharpness_report(ex: &SharpExample) -> Result<SharpnessReport> {
    let eps = ex.epsilon;
    let maximal_core = ex.maximal_on_annulus(0);
    let bound = ex.delta / (1.0 - (-(ex.dim as f64 - ex.alpha)).exp2());
    let maximal_bound_ok = maximal_core <= bound * (1.0 + 1e-9) && bound <= eps * (1.0 + 1e-9);

    let values: Vec<f64> = (0..=ex.shells).map(|k| ex.value_on_annulus(k)).collect();
    let core_in_numerator_set = values[0] > 2.0 && maximal_core <= eps * (1.0 + 1e-9);

    let k0 = (0..=ex.shells).filter(|&k| values[k as usize] > 1.0).max().unwrap_or(0);

    // Cell counts per annulus give the level-set measures exactly.
    let faces = ((1u64 << ex.dim) - 1) as f64;
    let count = |k: u32| -> f64 {
        if k == 0 {
            1.0
        } else {
            faces * ((ex.dim as f64) * (k as f64 - 1.0)).exp2()
        }
    };
    let mut numer = 0.0;
    let mut denom = 0.0;
    for k in 0..=ex.shells {
        let c = count(k);
        if values[k as usize] > 1.0 {
            denom += c;
        }
        if values[k as usize] > 2.0 && ex.maximal_on_annulus(k) <= eps * (1.0 + 1e-9) {
            numer += c;
        }
    }
    let ratio = if denom > 0.0 { numer / denom } else { 0.0 };
    let ratio_lower_bound = (-(ex.dim as f64) * k0 as f64).exp2();
    let ratio_ok = ratio >= ratio_lower_bound * (1.0 - 1e-12);

    let (ball_max, comparability) = match ex.tree() {
        Some(tree) => {
            let params = PotentialParams::new(ex.alpha, 1.0, 0, ex.shells);
            let mut bm: f64 = 0.0;
            // Q^0 is the single origin cell.
            let origin = [0u64; 3];
            bm = bm.max(fractional_maximal_ball(tree, &params, &origin)?);
            let field = potential_field(tree, &params, FieldOp::DyadicPotential)?;
            let grid = *ex.grid();
            let (lo, hi) = (0..grid.num_cells())
                .into_par_iter()
                .map(|idx| {
                    let cell = grid.cell_from_index(idx);
                    let a = ex.value_on_annulus(annulus_index(&grid, &cell));
                    let t = field.values()[idx as usize];
                    let r = t / a;
                    (r, r)
                })
                .reduce(|| (f64::INFINITY, 0.0), |a, b| (a.0.min(b.0), a.1.max(b.1)));
            (Some(bm), Some((lo, hi)))
        }
        None => (None, None),
    };

    let hard_pass = maximal_bound_ok && core_in_numerator_set && ratio_ok;

    Ok(SharpnessReport {
        epsilon: eps,
        dim: ex.dim,
        alpha: ex.alpha,
        delta: ex.delta,
        shells: ex.shells,
        maximal_on_core: maximal_core,
        ball_maximal_on_core: ball_max,
        maximal_bound_ok,
        core_in_numerator_set,
        k0,
        k0_times_epsilon: k0 as f64 * eps,
        ratio,
        ratio_lower_bound,
        ratio_ok,
        potential_comparability: comparability,
        per_annulus_value: values,
        hard_pass,
    })
}

/// Fit `ratio(eps) >= c1 * exp(-c2/eps)` over a battery: least squares on
/// `ln ratio` against `1/eps`, then c1 tightened so every battery point
/// satisfies the bound.
pub fn fit_exponential_lower(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, r)| *r > 0.0)
        .map(|(e, r)| (1.0 / e, r.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (slope, _) = crate::weight::least_squares(&pts);
    let c2 = (-slope).max(0.0);
    let c1 = points
        .iter()
        .filter(|(_, r)| *r > 0.0)
        .map(|(e, r)| r * (c2 / e).exp())
        .fold(f64::INFINITY, f64::min);
    Some((c1, c2))
}
