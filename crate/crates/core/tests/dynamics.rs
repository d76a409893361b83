use glauber::bounds::{build_kernel, influence_coefficients, ContextSource};
use glauber::dynamics::{
    coupling_meeting_time, hitting_time, maximal_coupling_step, run_chain, GlauberKernel,
    HammingFromStart, RunOptions,
};
use glauber::rng::{replica_rng, CouplingStreams};
use glauber::scorers::{IndependentScorer, PottsGibbsScorer};
use glauber::seq::state_index;
use glauber::stats::{mean, median};
use glauber::SeqState;

#[test]
fn two_site_kernel_frequencies_match_exact_matrix() {
    let mut m = PottsGibbsScorer::new(2, 2).unwrap();
    m.set_coupling(0, 1, &[vec![0.0, 0.8], vec![0.8, 0.0]])
        .unwrap();
    m.set_field(0, &[0.0, 0.3]).unwrap();
    let tau = 0.9;
    let exact = build_kernel(&m, 2, tau, 16).unwrap().to_dense();
    let k = GlauberKernel::new(&m, tau).unwrap();
    let mut rng = replica_rng(17, 0);
    let mut x = SeqState::new(vec![0, 0], 2).unwrap();
    let mut counts = [[0u64; 4]; 4];
    for _ in 0..1_000_000 {
        let from = state_index(x.ids(), 2);
        k.step(&mut x, &mut rng).unwrap();
        counts[from][state_index(x.ids(), 2)] += 1;
    }
    for (from, row) in counts.iter().enumerate() {
        let visits: u64 = row.iter().sum();
        assert!(visits > 10_000);
        for (to, &c) in row.iter().enumerate() {
            let p = exact[(from, to)];
            let expected = visits as f64 * p;
            let sigma = (visits as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (c as f64 - expected).abs() <= 3.0 * sigma + 1e-9,
                "{from}->{to}: {c} vs {expected:.1} (σ {sigma:.1})"
            );
        }
    }
}

#[test]
fn enumerated_kernels_are_stochastic() {
    for (seed, n, v) in [(1, 6, 4), (2, 12, 2), (3, 4, 8)] {
        let m = PottsGibbsScorer::random(n, v, 1.0, 1.0, &mut replica_rng(seed, 0)).unwrap();
        let kernel = build_kernel(&m, n, 0.7, 4096).unwrap();
        assert!(kernel.max_row_error() <= 1e-12);
        assert!(kernel.stay.iter().all(|&s| s > 0.0));
    }
}

#[test]
fn run_chain_zero_steps_and_determinism() {
    let s = IndependentScorer::uniform(4).unwrap();
    let k = GlauberKernel::new(&s, 1.0).unwrap();
    let x = SeqState::new(vec![1, 2, 3], 4).unwrap();
    let opts = RunOptions {
        steps: 0,
        ..RunOptions::default()
    };
    let t = run_chain(&x, &k, opts, &[&HammingFromStart], 1).unwrap();
    assert_eq!(t.records.len(), 1);
    assert_eq!(t.states().unwrap()[0].1, x);
    let opts = RunOptions {
        steps: 1000,
        record_every: 7,
        keyframe_every: 5,
    };
    let a = run_chain(&x, &k, opts, &[&HammingFromStart], 2).unwrap();
    let b = run_chain(&x, &k, opts, &[&HammingFromStart], 2).unwrap();
    assert_eq!(a, b);
    let steps: Vec<u64> = a.records.iter().map(|r| r.step).collect();
    assert!(steps.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn uniform_chain_hamming_approaches_one_minus_one_over_v() {
    let s = IndependentScorer::uniform(30).unwrap();
    let k = GlauberKernel::new(&s, 1.0).unwrap();
    let x = SeqState::new(vec![0; 20], 30).unwrap();
    let opts = RunOptions {
        steps: 10_000,
        record_every: 100,
        keyframe_every: 16,
    };
    let t = run_chain(&x, &k, opts, &[&HammingFromStart], 3).unwrap();
    // after 5000 steps every site has almost surely been resampled; each then
    // differs from the start with probability 29/30
    let tail = &t.observable("hamming_from_start")[50..];
    assert!(
        (mean(tail) - 29.0 / 30.0).abs() <= 0.02,
        "late mean {}",
        mean(tail)
    );
}

/// Exact law of the hitting time of `k` differing sites for the uniform
/// scorer: the number of differing sites is itself a birth-death chain.
fn differing_sites_hitting_mean(n: usize, v: usize, k: usize) -> f64 {
    let mut p = vec![0.0; n + 1];
    p[0] = 1.0;
    let mut expected = 0.0;
    for t in 1..100_000 {
        let mut q = vec![0.0; n + 1];
        for d in 0..k {
            let up = (n - d) as f64 / n as f64 * (v - 1) as f64 / v as f64;
            let down = d as f64 / n as f64 / v as f64;
            q[d + 1] += p[d] * up;
            if d > 0 {
                q[d - 1] += p[d] * down;
            }
            q[d] += p[d] * (1.0 - up - down);
        }
        expected += t as f64 * q[k];
        q[k] = 0.0;
        p = q;
        if p.iter().sum::<f64>() < 1e-15 {
            break;
        }
    }
    expected
}

#[test]
fn hitting_time_matches_birth_death_oracle() {
    let (n, v) = (20, 1000);
    let s = IndependentScorer::uniform(v).unwrap();
    let k = GlauberKernel::new(&s, 1.0).unwrap();
    let x = SeqState::new(vec![0; n], v).unwrap();
    let times: Vec<f64> = (0..200)
        .map(|seed| {
            hitting_time(&x, &k, None, 0.5, 100_000, 99, seed)
                .unwrap()
                .hitting_step
                .unwrap() as f64
        })
        .collect();
    let exact = differing_sites_hitting_mean(n, v, 10);
    assert!(
        (median(&times) - exact).abs() <= 0.1 * exact,
        "median {} vs {exact}",
        median(&times)
    );
    assert!(
        (mean(&times) - exact).abs() <= 0.1 * exact,
        "mean {} vs {exact}",
        mean(&times)
    );
}

#[test]
fn one_step_contraction_under_maximal_coupling() {
    let n = 5;
    let m = PottsGibbsScorer::random(n, 3, 0.4, 1.0, &mut replica_rng(5, 0)).unwrap();
    let tau = 1.5;
    let influence = influence_coefficients(&m, tau, &ContextSource::exhaustive(n)).unwrap();
    let alpha = influence.alpha();
    assert!(alpha < 1.0, "instance must contract, α = {alpha}");
    let k = GlauberKernel::new(&m, tau).unwrap();
    let trials = 100_000;
    for (j, (a, b)) in [(0usize, (0u32, 2u32)), (2, (1, 0)), (4, (2, 1))] {
        let mut ids = vec![0, 1, 2, 0, 1];
        ids[j] = a;
        let x0 = SeqState::new(ids.clone(), 3).unwrap();
        ids[j] = b;
        let y0 = SeqState::new(ids, 3).unwrap();
        // a disagreement at j spreads to site i with probability at most c_ij
        let spread: f64 = (0..n).map(|i| influence.c[i][j]).sum();
        let bound = 1.0 - (1.0 - spread) / n as f64;
        let mut streams = CouplingStreams::new(8, j as u64);
        let d: Vec<f64> = (0..trials)
            .map(|_| {
                let (mut x, mut y) = (x0.clone(), y0.clone());
                maximal_coupling_step(&mut x, &mut y, &k, &mut streams).unwrap();
                glauber::hamming_distance(&x, &y).unwrap() as f64
            })
            .collect();
        let mu = mean(&d);
        let sd = (d.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt();
        assert!(
            mu <= bound + 3.0 * sd / (trials as f64).sqrt(),
            "E[d] = {mu} > {bound}"
        );
    }
}

#[test]
fn meeting_time_is_deterministic_per_seed() {
    let m = PottsGibbsScorer::random(6, 3, 0.5, 0.5, &mut replica_rng(6, 0)).unwrap();
    let k = GlauberKernel::new(&m, 1.0).unwrap();
    let x = SeqState::new(vec![0; 6], 3).unwrap();
    let y = SeqState::new(vec![2; 6], 3).unwrap();
    let a = coupling_meeting_time(&x, &y, &k, 10_000, 4, 0, true).unwrap();
    let b = coupling_meeting_time(&x, &y, &k, 10_000, 4, 0, true).unwrap();
    assert_eq!(a, b);
    let short = coupling_meeting_time(&x, &y, &k, 1, 4, 0, false).unwrap();
    assert!(short.timed_out() || short.meeting_step == Some(1));
}
