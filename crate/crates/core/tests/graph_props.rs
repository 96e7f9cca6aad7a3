mod common;

use graphpick::autodiff::{ParamStore, Tape};
use graphpick::encoder::{encode_subgraph, EncoderConfig};
use graphpick::graph::{knn_query, sample_star_subgraph, Midpoint, MidpointIndex, SurveyGraph};
use graphpick::survey::{Survey, Trace};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random midpoints; every other set lives on a coarse integer grid so that
/// equal distances are common.
fn random_midpoints(rng: &mut ChaCha8Rng, n: usize, grid: bool) -> Vec<Midpoint> {
    let mut ids: Vec<u64> = (0..n as u64).map(|i| i * 3 + 1).collect();
    ids.reverse();
    ids.into_iter()
        .map(|trace_id| {
            let (x, y) = if grid {
                (rng.random_range(0..12) as f64, rng.random_range(0..12) as f64)
            } else {
                (rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0))
            };
            Midpoint { trace_id, x, y }
        })
        .collect()
}

fn brute_force(points: &[Midpoint], query: usize, k: usize) -> Vec<(u64, f64)> {
    let q = points[query];
    let mut all: Vec<(f64, u64)> = points
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != query)
        .map(|(_, p)| {
            let (dx, dy) = (p.x - q.x, p.y - q.y);
            (dx * dx + dy * dy, p.trace_id)
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(d2, id)| (id, d2.sqrt())).collect()
}

#[test]
fn knn_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for set in 0..200 {
        let n = rng.random_range(10..400);
        let points = random_midpoints(&mut rng, n, set % 2 == 0);
        let index = MidpointIndex::build(&points);
        for k in [1, 4, 8] {
            for _ in 0..5 {
                let q = rng.random_range(0..n);
                let got = knn_query(&index, points[q].trace_id, k).unwrap();
                assert_eq!(got, brute_force(&points, q, k), "set {set} k {k} query {q}");
            }
        }
    }
}

fn survey_from(points: &[(f64, f64, f64, f64)], len: usize, seed: u64) -> Survey {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traces = points
        .iter()
        .enumerate()
        .map(|(i, &(sx, sy, rx, ry))| Trace {
            id: i as u64 * 2 + 5,
            src: (sx, sy),
            rcv: (rx, ry),
            samples: (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            dt: 0.002,
            fb_sample: Some(rng.random_range(0..len)),
        })
        .collect();
    Survey::new("props", traces).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stars_follow_the_contract(
        coords in prop::collection::vec((-300.0f64..300.0, -300.0f64..300.0, -300.0f64..300.0, -300.0f64..300.0), 6..60),
        k in 1usize..6,
        seed in 0u64..1000,
    ) {
        prop_assume!(k < coords.len());
        let survey = survey_from(&coords, 8, seed);
        let graph = SurveyGraph::build(&survey, k).unwrap();
        for t in survey.traces() {
            let star = sample_star_subgraph(&graph, &survey, t.id).unwrap();
            prop_assert_eq!(star.n_nodes(), k + 1);
            prop_assert_eq!(star.n_edges(), k);
            prop_assert_eq!(star.signals.len(), k + 1);
            prop_assert!(!star.neighbor_ids.contains(&t.id));

            // weights from scratch, straight from the coordinates
            let mid = |tr: &Trace| ((tr.src.0 + tr.rcv.0) / 2.0, (tr.src.1 + tr.rcv.1) / 2.0);
            let c = mid(t);
            let d: Vec<f64> = star
                .neighbor_ids
                .iter()
                .map(|&id| {
                    let m = mid(survey.get(id).unwrap());
                    ((m.0 - c.0).powi(2) + (m.1 - c.1).powi(2)).sqrt()
                })
                .collect();
            let d_max = d.iter().copied().fold(0.0, f64::max);
            for (i, (&w, &di)) in star.weights.iter().zip(&d).enumerate() {
                let want = if d_max == 0.0 { 0.75 } else { 0.75 * (1.0 - di * di / (d_max * d_max)) };
                prop_assert!((w - want).abs() < 1e-12, "weight {} = {} want {}", i, w, want);
                prop_assert!((0.0..=0.75).contains(&w));
            }
            prop_assert!(star.weights.windows(2).all(|p| p[0] >= p[1]));
            if d_max > 0.0 {
                prop_assert!(star.weights[k - 1].abs() < 1e-12);
            }
        }
    }
}

#[test]
fn graph_bytes_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let coords: Vec<_> = (0..300)
        .map(|_| (rng.random_range(0.0..1e3), 0.0, rng.random_range(0.0..1e3), rng.random_range(0.0..50.0)))
        .collect();
    let survey = survey_from(&coords, 8, 1);
    let a = SurveyGraph::build(&survey, 8).unwrap().to_bytes();
    let b = SurveyGraph::build(&survey, 8).unwrap().to_bytes();
    assert_eq!(a, b);
    let back = SurveyGraph::from_bytes(&a).unwrap();
    assert_eq!(back.to_bytes(), a);
}

#[test]
fn neighbor_order_is_canonical_under_permutation() {
    // the center at the origin has two neighbors at distance 10 and one at 20
    let coords = [
        (0.0, 0.0, 0.0, 0.0),
        (10.0, 0.0, 10.0, 0.0),
        (-10.0, 0.0, -10.0, 0.0),
        (0.0, 20.0, 0.0, 20.0),
        (100.0, 100.0, 100.0, 100.0),
    ];
    let survey = survey_from(&coords, 16, 9);
    let mut shuffled = survey.traces().to_vec();
    shuffled.swap(1, 2);
    shuffled.reverse();
    let permuted = Survey::new("permuted", shuffled).unwrap();

    let cfg = EncoderConfig {
        n_layers: 3,
        feature_len: 16,
        lstm_hidden: 8,
        k: 3,
    };
    let mut store = ParamStore::<f32>::new(2);
    graphpick::encoder::register_params(&mut store, &cfg).unwrap();
    let encode = |s: &Survey| {
        let g = SurveyGraph::build(s, 3).unwrap();
        let star = sample_star_subgraph(&g, s, 5).unwrap();
        let mut t = Tape::new();
        let out = encode_subgraph(&mut t, &star, &store, &cfg).unwrap();
        (star.neighbor_ids.clone(), t.value(out).to_vec())
    };
    let (ids_a, out_a) = encode(&survey);
    let (ids_b, out_b) = encode(&permuted);
    assert_eq!(ids_a, vec![7, 9, 11]);
    assert_eq!(ids_a, ids_b);
    assert_eq!(out_a, out_b);
}
