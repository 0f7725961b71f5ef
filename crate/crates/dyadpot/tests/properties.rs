//! Randomized structural invariants.

use proptest::prelude::*;

use dyadpot::goodlambda::{good_lambda_ratio, GoodLambdaQuery, OperatorFlavor};
use dyadpot::potential::{dyadic_potential, potential_field};
use dyadpot::weight::Weight;
use dyadpot::{FieldOp, Grid, MeasureTree, PotentialParams};

fn arb_tree(dim: usize, root: u32) -> impl Strategy<Value = MeasureTree> {
    let grid = Grid::new(dim, root).unwrap();
    let side = grid.side();
    let atom = (0..side, 0..side, 1u32..1000).prop_map(move |(x, y, m)| {
        let cell = if dim == 1 { [x, 0, 0] } else { [x, y, 0] };
        (cell, m as f64 / 16.0)
    });
    proptest::collection::vec(atom, 0..20)
        .prop_map(move |atoms| MeasureTree::build(grid, &atoms).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn maximal_dominated_by_potential(
        tree in arb_tree(2, 4),
        q in prop_oneof![Just(0.5), Just(1.0), Just(2.0), 0.3f64..4.0],
        alpha in 0.1f64..1.9,
    ) {
        let params = PotentialParams::new(alpha, q, 0, 4);
        let t = potential_field(&tree, &params, FieldOp::DyadicPotential).unwrap();
        let m = potential_field(&tree, &params, FieldOp::MaximalDyadic).unwrap();
        for (tv, mv) in t.values().iter().zip(m.values()) {
            prop_assert!(mv <= tv, "maximal {mv} above potential {tv}");
        }
    }

    #[test]
    fn potential_monotone_in_measure(
        tree in arb_tree(1, 5),
        extra_cell in 0u64..32,
        extra_mass in 0.1f64..4.0,
        x in 0u64..32,
    ) {
        let mut atoms = tree.atoms().to_vec();
        atoms.push(([extra_cell, 0, 0], extra_mass));
        let bigger = MeasureTree::build(*tree.grid(), &atoms).unwrap();
        let params = PotentialParams::new(0.5, 1.0, 0, 5);
        let a = dyadic_potential(&tree, &params, &[x, 0, 0]).unwrap();
        let b = dyadic_potential(&bigger, &params, &[x, 0, 0]).unwrap();
        prop_assert!(b >= a);
    }

    #[test]
    fn numerator_set_monotone(
        tree in arb_tree(2, 4),
        lambda in 0.01f64..4.0,
        eps_lo in 0.05f64..0.45,
        tau in 1.1f64..3.0,
    ) {
        let params = PotentialParams::new(1.0, 1.0, 0, 4);
        let t = potential_field(&tree, &params, FieldOp::DyadicPotential).unwrap();
        let m = potential_field(&tree, &params, FieldOp::MaximalDyadic).unwrap();
        let w = Weight::constant(*tree.grid(), 1.0).unwrap();
        let row = |eps: f64, tau: f64| {
            good_lambda_ratio(&t, &m, &w, &params, &GoodLambdaQuery {
                lambda, epsilon: eps, tau, flavor: OperatorFlavor::Dyadic,
            }).unwrap()
        };
        // shrinks as epsilon decreases
        prop_assert!(row(eps_lo, tau).numerator_sigma <= row(2.0 * eps_lo, tau).numerator_sigma);
        // shrinks as tau increases
        prop_assert!(row(eps_lo, tau + 1.0).numerator_sigma <= row(eps_lo, tau).numerator_sigma);
        // denominator nonincreasing in lambda
        let q2 = GoodLambdaQuery {
            lambda: 2.0 * lambda, epsilon: eps_lo, tau, flavor: OperatorFlavor::Dyadic,
        };
        let den_hi = good_lambda_ratio(&t, &m, &w, &params, &q2).unwrap().denominator_sigma;
        prop_assert!(row(eps_lo, tau).denominator_sigma >= den_hi);
    }

    #[test]
    fn measure_file_round_trip(tree in arb_tree(2, 5)) {
        let text = tree.to_file_format();
        let back = MeasureTree::parse(&text, "round-trip").unwrap();
        prop_assert_eq!(tree.atoms().len(), back.atoms().len());
        for (a, b) in tree.atoms().iter().zip(back.atoms()) {
            prop_assert_eq!(a.0, b.0);
            prop_assert_eq!(a.1, b.1);
        }
        prop_assert_eq!(tree.total_mass(), back.total_mass());
    }

    #[test]
    fn binary_scaling_is_exact(
        tree in arb_tree(2, 4),
        q in prop_oneof![Just(1.0), Just(2.0)],
        x in 0u64..16,
        y in 0u64..16,
    ) {
        let params = PotentialParams::new(1.0, q, 0, 4);
        let doubled = tree.scaled(2.0).unwrap();
        let halved = tree.scaled(0.5).unwrap();
        let base = dyadic_potential(&tree, &params, &[x, y, 0]).unwrap();
        prop_assert_eq!(dyadic_potential(&doubled, &params, &[x, y, 0]).unwrap(), 2.0 * base);
        prop_assert_eq!(dyadic_potential(&halved, &params, &[x, y, 0]).unwrap(), 0.5 * base);
    }
}
