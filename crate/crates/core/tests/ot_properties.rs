use prefsel::ot::{cost_matrix, ot_exact, ot_sinkhorn, PointCloud, SinkhornParams};
use prefsel::testing::brute_force_transport;
use proptest::prelude::*;

/// Masses `i/8` summing to one, zeros allowed.
fn eighths(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0usize..=8, len - 1).prop_map(move |mut cuts| {
        cuts.sort_unstable();
        let mut prev = 0;
        let mut out = Vec::with_capacity(len);
        for c in cuts {
            out.push((c - prev) as f64 / 8.0);
            prev = c;
        }
        out.push((8 - prev) as f64 / 8.0);
        out
    })
}

fn cloud_strategy(dim: usize) -> impl Strategy<Value = PointCloud<f64>> {
    (1usize..=4).prop_flat_map(move |m| {
        (
            proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, dim), m),
            eighths(m),
        )
            .prop_map(|(pts, w)| PointCloud::new(pts, w).unwrap())
    })
}

fn uniform_cloud(dim: usize) -> impl Strategy<Value = PointCloud<f64>> {
    proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, dim), 1..=5)
        .prop_map(|pts| PointCloud::uniform(pts).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn exact_matches_vertex_enumeration(a in cloud_strategy(2), b in cloud_strategy(2)) {
        let plan = ot_exact(&a, &b).unwrap();
        let c = cost_matrix(&a, &b).unwrap();
        let oracle = brute_force_transport(a.masses(), b.masses(), &c.data);
        prop_assert!((plan.total_cost - oracle).abs() < 1e-7, "{} vs {}", plan.total_cost, oracle);
        for (r, w) in plan.row_sums().iter().zip(a.masses()) {
            prop_assert!((r - w).abs() < 1e-7);
        }
        for (s, w) in plan.col_sums().iter().zip(b.masses()) {
            prop_assert!((s - w).abs() < 1e-7);
        }
        prop_assert!(plan.gamma.data.iter().all(|&g| g >= 0.0));
    }

    #[test]
    fn exact_is_symmetric(a in cloud_strategy(3), b in cloud_strategy(3)) {
        let ab = ot_exact(&a, &b).unwrap().total_cost;
        let ba = ot_exact(&b, &a).unwrap().total_cost;
        prop_assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn exact_identity_is_zero(a in uniform_cloud(3)) {
        prop_assert_eq!(ot_exact(&a, &a).unwrap().total_cost, 0.0);
    }

    #[test]
    fn triangle_inequality(a in uniform_cloud(2), b in uniform_cloud(2), c in uniform_cloud(2)) {
        let ab = ot_exact(&a, &b).unwrap().total_cost;
        let bc = ot_exact(&b, &c).unwrap().total_cost;
        let ac = ot_exact(&a, &c).unwrap().total_cost;
        prop_assert!(ac <= ab + bc + 1e-7);
    }

    #[test]
    fn sinkhorn_upper_bounds_exact(a in uniform_cloud(2), b in uniform_cloud(2)) {
        let exact = ot_exact(&a, &b).unwrap().total_cost;
        // Ties in the cost make convergence sublinear at small ε, so the
        // marginal target is loose and the cost bound absorbs the violation.
        let params = SinkhornParams { epsilon: 0.05, tol: 1e-5, ..Default::default() };
        let approx = ot_sinkhorn(&a, &b, params).unwrap().require_converged().unwrap();
        let cmax = 2.0 * 3.0 * 2f64.sqrt();
        prop_assert!(approx.marginal_error <= 1e-5);
        prop_assert!(approx.total_cost >= exact - cmax * approx.marginal_error - 1e-9);
    }
}

#[test]
fn larger_exact_problems_stay_feasible() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let pts = |rng: &mut rand_chacha::ChaCha8Rng, m: usize| {
            (0..m).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect::<Vec<Vec<f64>>>()
        };
        let a = PointCloud::uniform(pts(&mut rng, 40)).unwrap();
        let b = PointCloud::uniform(pts(&mut rng, 33)).unwrap();
        let plan = ot_exact(&a, &b).unwrap();
        assert!(plan.marginal_error < 1e-9);
        let sk = ot_sinkhorn(&a, &b, SinkhornParams { epsilon: 1e-3, ..Default::default() }).unwrap();
        assert!(sk.total_cost >= plan.total_cost - 1e-6);
        assert!((sk.total_cost - plan.total_cost) / plan.total_cost < 0.02);
    }
}
