use groupdro::datagen::{generate, read_csv_from, write_csv_to, SyntheticSpec};
use groupdro::objectives::RiskReport;
use groupdro::optimizer::eg_update;
use groupdro::{Arch, Example, GroupWeights, ModelParams};
use proptest::prelude::*;

fn simplex(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6f64..1.0, m).prop_map(|raw| {
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    })
}

fn arch() -> impl Strategy<Value = Arch> {
    prop_oneof![
        (1usize..6).prop_map(|d| Arch::LogisticBinary { d }),
        (1usize..6, 2usize..5).prop_map(|(d, k)| Arch::Softmax { d, k }),
        (1usize..6, 1usize..8, 2usize..5).prop_map(|(d, h, k)| Arch::Mlp1 { d, h, k }),
    ]
}

fn case() -> impl Strategy<Value = (ModelParams, Example)> {
    arch().prop_flat_map(|a| {
        (
            prop::collection::vec(-1.5f64..1.5, a.num_params()),
            prop::collection::vec(-2.0f64..2.0, a.input_dim()),
            0..a.num_classes(),
        )
            .prop_map(move |(theta, x, y)| {
                (ModelParams::new(a, theta).unwrap(), Example::new(x, y, 0))
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gradient_matches_central_differences((p, ex) in case()) {
        let g = p.grad(&ex).unwrap();
        let h = 1e-5;
        let mut q = p.clone();
        for i in 0..g.len() {
            q.theta[i] = p.theta[i] + h;
            let up = q.loss(&ex).unwrap();
            q.theta[i] = p.theta[i] - h;
            let down = q.loss(&ex).unwrap();
            q.theta[i] = p.theta[i];
            let fd = (up - down) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0), "coord {}: {} vs {}", i, fd, g[i]);
        }
    }

    #[test]
    fn loss_is_nonnegative_and_probabilities_sum_to_one((p, ex) in case()) {
        prop_assert!(p.loss(&ex).unwrap() >= 0.0);
        let probs = p.probabilities(&ex.features).unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn params_json_is_bit_exact((p, _) in case()) {
        let back = ModelParams::from_json(&p.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn eg_update_stays_on_the_simplex(
        q in (1usize..8).prop_flat_map(simplex),
        pick in any::<prop::sample::Index>(),
        loss in 0.0f64..1e3,
        eta in 0.0f64..10.0,
        adj in 0.0f64..3.0,
    ) {
        let q = GroupWeights::from_vec(q).unwrap();
        let g = pick.index(q.len());
        let next = eg_update(&q, g, loss, eta, adj).unwrap();
        let s: f64 = next.as_slice().iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-12);
        prop_assert!(next.as_slice().iter().all(|v| v.is_finite() && *v >= 0.0));
        // only the updated group can gain weight
        for (h, (&a, &b)) in q.as_slice().iter().zip(next.as_slice()).enumerate() {
            if h != g {
                prop_assert!(b <= a * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn worst_group_dominates_every_mixture(
        (losses, q) in (1usize..8).prop_flat_map(|m| (prop::collection::vec(0.0f64..10.0, m), simplex(m))),
    ) {
        let worst = RiskReport::worst_of(losses.clone()).unwrap();
        let mix: f64 = losses.iter().zip(&q).map(|(l, w)| l * w).sum();
        prop_assert!(worst.value >= mix - 1e-12);
        prop_assert_eq!(worst.value, losses[worst.argmax_group.unwrap()]);
    }

    #[test]
    fn equal_sizes_keep_the_argmax(
        losses in prop::collection::vec(0u8..5, 1..8),
        n in 1usize..1000,
        c in 0.0f64..10.0,
    ) {
        let losses: Vec<f64> = losses.into_iter().map(f64::from).collect();
        let plain = RiskReport::worst_of(losses.clone()).unwrap();
        let adj = RiskReport::adjusted_worst_of(losses.clone(), &vec![n; losses.len()], c).unwrap();
        prop_assert_eq!(plain.argmax_group, adj.argmax_group);
    }

    #[test]
    fn generated_csv_round_trips(seed in any::<u64>(), n in 8usize..60, p in 0.5f64..0.99) {
        let spec = SyntheticSpec {
            d_core: 2,
            d_spu: 1,
            d_noise: 1,
            mu_core: 1.0,
            mu_spu: 1.0,
            sigma: 0.7,
            n_total: n,
            p_align: p,
            seed,
            classes: 2,
            group_mu_core: None,
        };
        let ds = generate(&spec).unwrap();
        prop_assert!(ds.group_sizes().iter().all(|&c| c > 0));
        let mut buf = Vec::new();
        write_csv_to(&ds, &mut buf).unwrap();
        let back = read_csv_from(buf.as_slice(), Some(4), Some(2)).unwrap();
        prop_assert_eq!(back, ds);
    }
}
