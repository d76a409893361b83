use glauber::incompatibility::{
    exhaustive_max_abs_delta, rectangle_delta, run_rectangle_campaign, CampaignOptions,
    DELTA_NOISE_FLOOR,
};
use glauber::rng::replica_rng;
use glauber::scorers::{PerturbationMode, PerturbedScorer, PottsGibbsScorer};
use glauber::stats::spearman;
use glauber::{Scorer, SeqState, TokenId};
use proptest::prelude::*;
use rand::Rng;

fn random_states(n: usize, v: usize, count: usize, seed: u64) -> Vec<SeqState> {
    let mut rng = replica_rng(seed, 1);
    (0..count)
        .map(|_| {
            SeqState::new(
                (0..n).map(|_| rng.random_range(0..v as TokenId)).collect(),
                v,
            )
            .unwrap()
        })
        .collect()
}

/// `ln p(a | x_{-pos})` by a plain log-sum-exp without any shift.
fn naive_log_prob(scorer: &dyn Scorer, x: &SeqState, pos: usize, a: TokenId, tau: f64) -> f64 {
    let s = scorer.local_scores(x, pos).unwrap();
    let z: f64 = s.iter().map(|v| (v / tau).exp()).sum();
    s[a as usize] / tau - z.ln()
}

/// Log-probability ratio around the rectangle x → y → z minus x → w → z.
fn oracle_delta(
    scorer: &dyn Scorer,
    x: &SeqState,
    i: usize,
    j: usize,
    a2: TokenId,
    b2: TokenId,
    tau: f64,
) -> f64 {
    let (a, b) = (x.get(i), x.get(j));
    let y = x.replaced(i, a2);
    let w = x.replaced(j, b2);
    let lp = |s: &SeqState, pos, t| naive_log_prob(scorer, s, pos, t, tau);
    let via_y = (lp(x, i, a2) - lp(x, i, a)) + (lp(&y, j, b2) - lp(&y, j, b));
    let via_w = (lp(x, j, b2) - lp(x, j, b)) + (lp(&w, i, a2) - lp(&w, i, a));
    via_y - via_w
}

fn base_model() -> PottsGibbsScorer {
    PottsGibbsScorer::random(8, 6, 0.7, 0.5, &mut replica_rng(21, 0)).unwrap()
}

#[test]
fn mean_abs_delta_grows_with_perturbation() {
    let states = random_states(8, 6, 50, 4);
    let options = CampaignOptions {
        count: 1000,
        k: 6,
        tau: 1.0,
        seed: 12,
    };
    let mut means = Vec::new();
    for eps in [0.0, 0.1, 0.5, 1.0] {
        let s = PerturbedScorer::new(base_model(), eps, 77).unwrap();
        let campaign = run_rectangle_campaign(&s, &states, options).unwrap();
        for rec in &campaign.records {
            let r = &rec.rectangle;
            let x = &states[r.state_id];
            let oracle = oracle_delta(&s, x, r.i, r.j, r.a_prime, r.b_prime, options.tau);
            assert!(
                (r.delta - oracle).abs() <= 1e-10,
                "δ {} vs oracle {oracle}",
                r.delta
            );
        }
        means.push(campaign.summary.mean_abs_delta);
        if eps == 0.0 {
            assert!(campaign.summary.max <= 1e-10);
            assert!(campaign.summary.p_value >= 0.5);
        } else {
            assert!(campaign.summary.p_value < 1e-6);
        }
    }
    assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");
}

#[test]
fn pairwise_perturbation_links_influence_and_incompatibility() {
    let base = PottsGibbsScorer::new(8, 6).unwrap();
    let s = PerturbedScorer::with_mode(base, 2.0, 5, PerturbationMode::Pairwise).unwrap();
    let states = random_states(8, 6, 100, 8);
    let campaign = run_rectangle_campaign(
        &s,
        &states,
        CampaignOptions {
            count: 1000,
            k: 6,
            tau: 1.0,
            seed: 3,
        },
    )
    .unwrap();
    let (infl, delta): (Vec<f64>, Vec<f64>) = campaign.influence_scatter().into_iter().unzip();
    let rho = spearman(&infl, &delta);
    assert!(rho > 0.0, "ρ = {rho}");
    assert!((campaign.summary.influence_spearman - rho).abs() < 1e-12);
}

#[test]
fn compatible_models_have_zero_delta_everywhere() {
    for seed in 0..5 {
        let m = PottsGibbsScorer::random(4, 4, 1.5, 1.0, &mut replica_rng(seed, 0)).unwrap();
        for tau in [0.5, 1.0, 2.0] {
            let worst = exhaustive_max_abs_delta(&m, 4, tau, 4096).unwrap();
            assert!(worst <= 1e-10, "seed {seed}, τ {tau}: {worst}");
        }
    }
    let m = PottsGibbsScorer::random(4, 4, 1.0, 1.0, &mut replica_rng(9, 0)).unwrap();
    let p = PerturbedScorer::new(m, 0.3, 1).unwrap();
    assert!(exhaustive_max_abs_delta(&p, 4, 1.0, 4096).unwrap() > DELTA_NOISE_FLOOR);
}

fn rectangle_strategy() -> impl Strategy<Value = (Vec<TokenId>, usize, usize, TokenId, TokenId, f64)>
{
    (
        proptest::collection::vec(0u32..6, 8),
        0usize..8,
        1usize..8,
        0u32..6,
        0u32..6,
        0.1f64..10.0,
    )
        .prop_map(|(ids, i, shift, a2, b2, tau)| (ids, i, (i + shift) % 8, a2, b2, tau))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn swapping_the_two_paths_negates_delta((ids, i, j, a2, b2, tau) in rectangle_strategy()) {
        let s = PerturbedScorer::new(base_model(), 0.8, 3).unwrap();
        let x = SeqState::new(ids, 6).unwrap();
        prop_assume!(a2 != x.get(i) && b2 != x.get(j));
        let forward = rectangle_delta(&s, &x, i, j, a2, b2, tau).unwrap();
        let backward = rectangle_delta(&s, &x, j, i, b2, a2, tau).unwrap();
        prop_assert_eq!(forward.delta, -backward.delta);
    }

    #[test]
    fn delta_scales_inversely_with_temperature((ids, i, j, a2, b2, tau) in rectangle_strategy()) {
        let s = PerturbedScorer::new(base_model(), 0.8, 3).unwrap();
        let x = SeqState::new(ids, 6).unwrap();
        prop_assume!(a2 != x.get(i) && b2 != x.get(j));
        let at_one = rectangle_delta(&s, &x, i, j, a2, b2, 1.0).unwrap();
        let at_tau = rectangle_delta(&s, &x, i, j, a2, b2, tau).unwrap();
        prop_assert_eq!(at_tau.delta, at_one.delta / tau);
        let oracle = oracle_delta(&s, &x, i, j, a2, b2, tau);
        prop_assert!((at_tau.delta - oracle).abs() <= 1e-10);
    }
}
