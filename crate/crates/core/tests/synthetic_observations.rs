//! Error orderings of the synthetic testbed under both readings of the coupling scale.

use dyweight::synthlab::{run_grid, CouplingScale, GridSpec, OptimizeSpec, Variant};

fn grid(coupling: CouplingScale, k_values: Vec<usize>, s_values: Vec<usize>, orders: Vec<usize>, runs: usize) -> GridSpec {
    GridSpec {
        k_values,
        s_values,
        orders,
        runs,
        coupling,
        ..GridSpec::default()
    }
}

#[test]
fn orderings_hold_under_both_readings() {
    for coupling in [CouplingScale::StdDev, CouplingScale::Variance] {
        let g = run_grid(&grid(coupling, vec![20], vec![6, 14, 20], vec![1, 2, 3, 4], 20));
        let m = |s, o| g.mean(20, s, o, Variant::Standard).unwrap();
        for o in 1..4 {
            assert!(m(14, o) > m(14, o + 1), "{coupling:?}: order {o} vs {}", o + 1);
        }
        assert!(m(6, 4) > 2.0 * m(20, 4), "{coupling:?}");

        let reference = run_grid(&grid(coupling, vec![5, 20, 40], vec![6, 20, 100], vec![4], 20));
        for k in [5, 20, 40] {
            let t = reference.mean(k, 100, 4, Variant::Standard).unwrap();
            let few = reference.mean(k, 20, 4, Variant::Standard).unwrap();
            assert!(t < few, "{coupling:?} K={k}");
        }
    }
}

#[test]
fn optimized_weights_beat_standard_under_both_readings() {
    for coupling in [CouplingScale::StdDev, CouplingScale::Variance] {
        let spec = GridSpec {
            optimize: Some(OptimizeSpec::default()),
            ..grid(coupling, vec![20], vec![14], vec![1, 2, 3, 4], 5)
        };
        let g = run_grid(&spec);
        for o in 1..=4 {
            let std = g.mean(20, 14, o, Variant::Standard).unwrap();
            let opt = g.mean(20, 14, o, Variant::Optimized).unwrap();
            assert!(opt < std, "{coupling:?} order {o}: {opt} vs {std}");
        }
    }
}

#[test]
fn ab4_reference_bound_where_it_holds() {
    let g = run_grid(&grid(CouplingScale::StdDev, vec![5, 10, 15, 20, 25, 30], vec![100], vec![4], 50));
    for r in &g.rows {
        assert!(r.rel_l2_error < 1e-3, "K={} seed {}: {}", r.k, r.run_seed, r.rel_l2_error);
    }
}

#[test]
#[ignore = "known failure: AB-4 truncation error at S=100 exceeds 1e-3 for K >= 35 (see README)"]
fn ab4_reference_bound_through_k40() {
    let g = run_grid(&grid(CouplingScale::StdDev, vec![35, 40], vec![100], vec![4], 50));
    for r in &g.rows {
        assert!(r.rel_l2_error < 1e-3, "K={} seed {}: {}", r.k, r.run_seed, r.rel_l2_error);
    }
}
