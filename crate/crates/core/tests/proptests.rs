use polytube_core::chaos::{chaos_term_variances, chaos_terms};
use polytube_core::environment::sample_field;
use polytube_core::intersection::{intersection_sum, relaxed_intersection_sum};
use polytube_core::partition::{partition_exact, second_moment_exact};
use polytube_core::walk_kernel::build_kernel;
use polytube_core::{DisorderLaw, Geometry, ModelParams, NoiseTransform};
use proptest::prelude::*;

fn law() -> impl Strategy<Value = DisorderLaw> {
    prop_oneof![Just(DisorderLaw::Gaussian), Just(DisorderLaw::Rademacher)]
}

fn geometry() -> impl Strategy<Value = Geometry> {
    prop_oneof![Just(Geometry::Tube), Just(Geometry::Cone)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_is_a_symmetric_probability(d in 1usize..=3, n in 1usize..=10, x in prop::collection::vec(-4i64..=4, 3)) {
        let k = build_kernel(d, n).unwrap();
        prop_assert!((k.total_mass(n).unwrap() - 1.0).abs() < 1e-13);
        let x = &x[..d];
        let p = k.prob(n, x).unwrap();
        let flipped: Vec<i64> = x.iter().map(|v| -v).collect();
        let mut rotated = x.to_vec();
        rotated.rotate_left(1);
        prop_assert_eq!(p, k.prob(n, &flipped).unwrap());
        prop_assert_eq!(p, k.prob(n, &rotated).unwrap());
        let parity = x.iter().sum::<i64>().rem_euclid(2) as usize;
        if parity != n % 2 {
            prop_assert_eq!(p, 0.0);
        }
    }

    #[test]
    fn chaos_reconstructs_the_partition_function(
        n in 1usize..=8,
        a in 0.0f64..1.0,
        r in 0.0f64..2.5,
        beta in 0.05f64..1.0,
        seed in any::<u64>(),
        law in law(),
        geometry in geometry(),
    ) {
        let p = ModelParams::new(1, a, r, n).unwrap().with_law(law).with_geometry(geometry);
        let f = sample_field(&p, seed).unwrap();
        let z = partition_exact(&p, &f, beta).unwrap().log_z.exp();
        let c = chaos_terms(&p, &f, beta, n).unwrap();
        prop_assert!((c.reconstruct() - z).abs() <= 1e-10 * z, "{} vs {}", c.reconstruct(), z);
    }

    #[test]
    fn collision_sums_grow_with_length_and_radius(
        d in 1usize..=2,
        a in 0.0f64..1.0,
        r in 0.0f64..2.0,
        n in 1usize..=40,
        geometry in geometry(),
    ) {
        let p = ModelParams::new(d, a, r, n).unwrap().with_geometry(geometry);
        let i = intersection_sum(&p).unwrap();
        prop_assert!(i >= 0.0);
        prop_assert!(intersection_sum(&p.with_length(n + 1)).unwrap() >= i - 1e-14);
        prop_assert!(intersection_sum(&p.with_radius(r + 0.5)).unwrap() >= i - 1e-14);
        prop_assert!(relaxed_intersection_sum(&p).unwrap() >= i - 1e-14);
    }

    #[test]
    fn chaos_variances_obey_the_relaxed_bound(
        n in 1usize..=10,
        a in 0.0f64..1.0,
        r in 0.0f64..2.0,
        beta in 0.0f64..1.0,
        law in law(),
    ) {
        let p = ModelParams::new(1, a, r, n).unwrap().with_law(law);
        let kernel = build_kernel(1, n).unwrap();
        let var = chaos_term_variances(&p, &kernel, beta, n).unwrap();
        let v = NoiseTransform::new(law, beta).variance_xi;
        let q = v * relaxed_intersection_sum(&p).unwrap();
        for (k, &x) in var.iter().enumerate() {
            prop_assert!(x <= q.powi(k as i32 + 1) * (1.0 + 1e-12) + 1e-300, "k = {}: {} > {}", k + 1, x, q.powi(k as i32 + 1));
        }
        let i_n = intersection_sum(&p).unwrap();
        prop_assert!((var[0] - v * i_n).abs() <= 1e-12 * (v * i_n).max(1e-300));
    }

    #[test]
    fn second_moment_increases_with_beta(
        d in 1usize..=2,
        a in 0.0f64..1.0,
        r in 0.0f64..2.0,
        n in 1usize..=12,
        beta in 0.0f64..1.0,
        step in 0.01f64..0.5,
    ) {
        let p = ModelParams::new(d, a, r, n).unwrap();
        let lo = second_moment_exact(&p, beta).unwrap().e_z2;
        let hi = second_moment_exact(&p, beta + step).unwrap().e_z2;
        prop_assert!(lo >= 1.0 - 1e-12);
        prop_assert!(hi >= lo - 1e-12);
    }
}
