use gossip_fair::bandit::{acquisition, maximize_acquisition, project, AscentConfig};
use gossip_fair::gp::{KernelParams, Smoothness, SurrogateState};
use gossip_fair::oracle::{exact_ages, SubsetAgeCache};
use gossip_fair::sim::{simulate, SimConfig};
use gossip_fair::{FeasibleRegion, GossipNetwork};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn network(max_n: usize) -> impl Strategy<Value = (GossipNetwork, Vec<f64>)> {
    (1..=max_n).prop_flat_map(|n| {
        let edges = prop::collection::vec((0..n, 0..n, 0.05..2.0f64), 0..=n * 2);
        let alloc = prop::collection::vec(0.01..1.0f64, n);
        (Just(n), edges, alloc).prop_map(|(n, edges, alloc)| {
            let mut seen = std::collections::BTreeSet::new();
            let edges: Vec<(usize, usize, f64)> =
                edges.into_iter().filter(|&(i, j, _)| i != j && seen.insert((i, j))).collect();
            (GossipNetwork::from_rated_edges(n, &edges).unwrap(), alloc)
        })
    })
}

fn point(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.5..1.5f64, n)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_feasible_idempotent_nonexpansive(x in point(5), y in point(5), u in 0.2..1.0f64, b in 0.3..1.2f64) {
        let region = FeasibleRegion::new(5, u, b).unwrap();
        let px = project(&x, &region);
        let py = project(&y, &region);
        prop_assert!(region.contains(&px, 1e-9));
        let again = project(&px, &region);
        prop_assert!(dist(&again, &px) < 1e-9);
        prop_assert!(dist(&px, &py) <= dist(&x, &y) + 1e-9);
    }

    #[test]
    fn projection_matches_grid_search_in_two_dims(x in point(2), u in 0.2..1.0f64, b in 0.3..1.2f64) {
        let region = FeasibleRegion::new(2, u, b).unwrap();
        let p = project(&x, &region);
        let steps = 1000;
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for i in 0..=steps {
            let y0 = u * i as f64 / steps as f64;
            for j in 0..=steps {
                let y1 = u * j as f64 / steps as f64;
                if y0 + y1 > b {
                    break;
                }
                let d = (y0 - x[0]).powi(2) + (y1 - x[1]).powi(2);
                if d < best.0 {
                    best = (d, [y0, y1]);
                }
            }
        }
        let dp = dist(&p, &x).powi(2);
        prop_assert!(dp <= best.0 + 1e-12, "projection {p:?} worse than grid {best:?}");
        prop_assert!(dist(&p, &best.1) < 2.0 * u / steps as f64 + 1e-4);
    }

    #[test]
    fn oracle_subset_monotone((net, alloc) in network(6)) {
        let n = net.n();
        let mut cache = SubsetAgeCache::new(&net, &alloc, 10.0).unwrap();
        for mask in 1u32..(1 << n) {
            let a = cache.age(mask);
            for k in (0..n).filter(|k| mask & (1 << k) == 0) {
                let b = cache.age(mask | (1 << k));
                prop_assert!(b <= a * (1.0 + 1e-9) || a.is_infinite());
            }
        }
    }

    #[test]
    fn oracle_time_rescaling_and_linearity((net, alloc) in network(6), c in 0.1..10.0f64) {
        let base = exact_ages(&net, &alloc, 10.0).unwrap();
        let scaled_alloc: Vec<f64> = alloc.iter().map(|a| a * c).collect();
        let rescaled = exact_ages(&net.scaled(c), &scaled_alloc, 10.0 * c).unwrap();
        let linear = exact_ages(&net, &alloc, 10.0 * c).unwrap();
        for i in 0..net.n() {
            if base[i].is_infinite() {
                prop_assert!(rescaled[i].is_infinite() && linear[i].is_infinite());
                continue;
            }
            prop_assert!((rescaled[i] - base[i]).abs() <= 1e-9 * base[i]);
            prop_assert!((linear[i] - c * base[i]).abs() <= 1e-9 * c * base[i]);
        }
    }

    #[test]
    fn gp_variance_bounded_and_shrinking(xs in prop::collection::vec(point(3), 1..12), q in point(3)) {
        let params = KernelParams::new(2.0, 0.4, Smoothness::FiveHalves, 1e-6);
        let mut state = SurrogateState::new(params).unwrap();
        let mut prev = state.posterior(&q).unwrap().1;
        for (k, x) in xs.iter().enumerate() {
            state.push(x, (k as f64).sin()).unwrap();
            let (_, var) = state.posterior(&q).unwrap();
            prop_assert!((0.0..=2.0 + 1e-12).contains(&var));
            prop_assert!(var <= prev + 1e-9);
            prev = var;
        }
    }

    #[test]
    fn gp_permutation_invariant(xs in prop::collection::vec(point(2), 3), fs in prop::collection::vec(-5.0..5.0f64, 3), q in point(2)) {
        let params = KernelParams::new(1.0, 0.5, Smoothness::ThreeHalves, 1e-4);
        let fwd = [0, 1, 2].iter().try_fold(SurrogateState::new(params.clone()).unwrap(), |s, &k| s.update(&xs[k], fs[k])).unwrap();
        let rev = [2, 0, 1].iter().try_fold(SurrogateState::new(params).unwrap(), |s, &k| s.update(&xs[k], fs[k])).unwrap();
        let (m1, v1) = fwd.posterior(&q).unwrap();
        let (m2, v2) = rev.posterior(&q).unwrap();
        prop_assert!((m1 - m2).abs() < 1e-8 && (v1 - v2).abs() < 1e-8);
    }
}

#[test]
fn maximiser_beats_random_search() {
    use rand::Rng;
    let region = FeasibleRegion::simplex(3, 1.0).unwrap();
    let params = KernelParams::new(1.0, 0.2, Smoothness::FiveHalves, 1e-4);
    for trial in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let mut state = SurrogateState::new(params.clone()).unwrap();
        for _ in 0..8 {
            let x = region.sample(&mut rng);
            state.push(&x, rng.random_range(-1.0..1.0)).unwrap();
        }
        let beta = 4.0;
        let (x, v) = maximize_acquisition(&state, beta, &region, &AscentConfig::default(), None, 1000 + trial).unwrap();
        assert!(region.contains(&x, 1e-9));
        let random_best = (0..1000)
            .map(|_| acquisition(&state, &region.sample(&mut rng), beta).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(v >= random_best - 1e-9, "trial {trial}: ascent {v} < random {random_best}");
    }
}

fn sim_net() -> GossipNetwork {
    GossipNetwork::from_rated_edges(3, &[(0, 1, 0.5), (1, 2, 0.5), (2, 0, 0.5), (0, 2, 0.25)]).unwrap()
}

#[test]
fn sim_time_rescaling_by_powers_of_two_is_exact() {
    let net = sim_net();
    let base = simulate(&net, &SimConfig::new(10.0, vec![0.4, 0.3, 0.3], 9).with_horizon(2e4)).unwrap();
    for c in [0.5, 2.0, 4.0] {
        let cfg = SimConfig::new(10.0 * c, vec![0.4 * c, 0.3 * c, 0.3 * c], 9).with_horizon(2e4 / c);
        let r = simulate(&net.scaled(c), &cfg).unwrap();
        for (a, b) in r.per_node.iter().zip(&base.per_node) {
            assert!((a - b).abs() <= 1e-9 * b, "c={c}: {a} vs {b}");
        }
    }
}

#[test]
fn sim_age_is_linear_in_source_rate() {
    let net = sim_net();
    let xs: Vec<f64> = (1..=10).map(|k| 2.0 * k as f64).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&le| simulate(&net, &SimConfig::new(le, vec![0.4, 0.3, 0.3], 3).with_horizon(2e4)).unwrap().worst)
        .collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    assert!(r2 > 0.99, "R^2 = {r2}");
}
