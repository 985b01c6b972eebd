use gatekeep_core::fep::{
    boltzmann_prior, calibrate_beta, cumulative_risk, efe, efe_observation_space, entropy, fef,
    fef_observation_space, kl_divergence, vfe, DiscreteDistribution, JointModel,
};
use proptest::prelude::*;

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n)
}

fn distribution(n: usize) -> impl Strategy<Value = DiscreteDistribution> {
    weights(n).prop_map(|w| DiscreteDistribution::from_weights(&w).unwrap())
}

fn joint(n_states: usize, n_obs: usize) -> impl Strategy<Value = JointModel> {
    weights(n_states * n_obs).prop_map(move |w| {
        let total: f64 = w.iter().sum();
        let rows = w.chunks(n_obs).map(|r| r.iter().map(|x| x / total).collect()).collect();
        JointModel::new(rows).unwrap()
    })
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=6, 1usize..=6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn evidence_identity(
        (model, q, o) in dims().prop_flat_map(|(s, n)| (joint(s, n), distribution(s), 0..n))
    ) {
        let ln_evidence = model.observation_marginal().get(o).ln();
        let rhs = -vfe(&q, &model, o).unwrap() + kl_divergence(&q, &model.posterior(o).unwrap()).unwrap();
        prop_assert!((ln_evidence - rhs).abs() < 1e-10, "{ln_evidence} vs {rhs}");
        // The bound: free energy never undercuts surprisal.
        prop_assert!(vfe(&q, &model, o).unwrap() >= -ln_evidence - 1e-12);
    }

    #[test]
    fn efe_decompositions_agree(
        (pred, pref_o) in dims().prop_flat_map(|(s, n)| (joint(s, n), distribution(n)))
    ) {
        let posteriors: Vec<_> = (0..pred.n_observations()).map(|o| pred.posterior(o).unwrap()).collect();
        let pref = JointModel::from_observation_marginal_and_posteriors(&pref_o, &posteriors).unwrap();
        let state = efe(&pred, &pref).unwrap();
        let obs = efe_observation_space(&pred, &pref_o).unwrap();
        prop_assert!((state.total - state.recombined()).abs() < 1e-10);
        prop_assert!(state.approximation_gap.abs() < 1e-10);
        prop_assert!((state.total - obs.total).abs() < 1e-10);
        prop_assert!((state.extrinsic - obs.extrinsic).abs() < 1e-10);
        prop_assert!((state.epistemic - obs.epistemic).abs() < 1e-10);
    }

    #[test]
    fn fef_decompositions_agree(
        (pred, channel) in dims().prop_flat_map(|(s, n)| (joint(s, n), prop::collection::vec(distribution(n), s)))
    ) {
        let pref = JointModel::from_prior_and_channel(&pred.state_marginal(), &channel).unwrap();
        let state = fef(&pred, &pref).unwrap();
        let obs = fef_observation_space(&pred, &channel).unwrap();
        prop_assert!((state.total - state.recombined()).abs() < 1e-10);
        prop_assert!((state.total - obs.total).abs() < 1e-10);
        prop_assert!((state.extrinsic - obs.extrinsic).abs() < 1e-10);
    }

    #[test]
    fn epistemic_terms_match_and_are_mutual_information(
        (pred, pref) in dims().prop_flat_map(|(s, n)| (joint(s, n), joint(s, n)))
    ) {
        let e = efe(&pred, &pref).unwrap();
        let f = fef(&pred, &pref).unwrap();
        prop_assert!((e.epistemic - f.epistemic).abs() < 1e-12);
        let mi = entropy(&pred.state_marginal()) + entropy(&pred.observation_marginal())
            - entropy(&DiscreteDistribution::new(
                (0..pred.n_states())
                    .flat_map(|x| (0..pred.n_observations()).map(move |o| (x, o)))
                    .map(|(x, o)| pred.get(x, o))
                    .collect(),
            ).unwrap());
        prop_assert!((e.epistemic - mi).abs() < 1e-10);
        prop_assert!(e.epistemic >= 0.0);
    }

    #[test]
    fn boltzmann_ratio_law(
        losses in prop::collection::vec(-5.0f64..5.0, 1..8),
        beta in 0.0f64..5.0,
    ) {
        let prior = boltzmann_prior(&losses, beta).unwrap();
        let p = prior.probabilities().probs();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let z: f64 = losses.iter().map(|l| (-beta * l).exp()).sum();
        for i in 0..losses.len() {
            prop_assert!((p[i] - (-beta * losses[i]).exp() / z).abs() < 1e-10);
            for j in 0..losses.len() {
                let expected = (-beta * (losses[i] - losses[j])).exp();
                prop_assert!((p[i] / p[j] - expected).abs() <= 1e-10 * expected.max(1.0));
            }
        }
        prop_assert!((prior.log_partition() - z.ln()).abs() < 1e-10);
    }

    #[test]
    fn beta_round_trip(
        beta in 0.0f64..10.0,
        loss_min in -3.0f64..1.0,
        span in 0.1f64..4.0,
    ) {
        let loss_max = loss_min + span;
        let prior = boltzmann_prior(&[loss_min, loss_max], beta).unwrap();
        let p = prior.probabilities().probs();
        let back = calibrate_beta(p[1], p[0], loss_min, loss_max).unwrap();
        prop_assert!((back - beta).abs() < 1e-10 * beta.max(1.0), "{back} vs {beta}");
    }

    #[test]
    fn kl_is_non_negative_and_zero_on_self(
        (q, p) in (1usize..=6).prop_flat_map(|n| (distribution(n), distribution(n)))
    ) {
        prop_assert!(kl_divergence(&q, &p).unwrap() >= 0.0);
        prop_assert_eq!(kl_divergence(&q, &q).unwrap(), 0.0);
        prop_assert!(entropy(&q) <= (q.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn constant_risk_discounts_in_closed_form(
        risk in -5.0f64..5.0,
        gamma in 0.05f64..1.0,
        n in 1usize..40,
    ) {
        let got = cumulative_risk(&vec![risk; n], gamma).unwrap();
        let closed = risk * (1.0 - gamma.powi(n as i32)) / (1.0 - gamma);
        prop_assert!((got - closed).abs() < 1e-10 * closed.abs().max(1.0));
    }
}
