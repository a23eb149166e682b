mod common;

use common::Lcg;
use mmrec::graph::prune_edges;
use mmrec::rng;

/// Draws edges one at a time, each with probability proportional to its weight
/// among those still available.
fn sequential_draw(weights: &[f64], n_keep: usize, r: &mut Lcg) -> Vec<usize> {
    let mut left: Vec<usize> = (0..weights.len()).collect();
    let mut kept = Vec::new();
    while kept.len() < n_keep {
        let total: f64 = left.iter().map(|&e| weights[e]).sum();
        let mut x = r.uniform() * total;
        let mut pos = left.len() - 1;
        for (p, &e) in left.iter().enumerate() {
            if x < weights[e] {
                pos = p;
                break;
            }
            x -= weights[e];
        }
        kept.push(left.remove(pos));
    }
    kept
}

#[test]
fn inclusion_rates_match_sequential_weighted_draws() {
    let (nu, ni) = (4, 5);
    let edges = vec![
        (0, 0),
        (0, 1),
        (0, 2),
        (0, 3),
        (0, 4),
        (1, 0),
        (1, 1),
        (2, 0),
        (2, 3),
        (3, 0),
    ];
    let mut du = vec![0.0; nu];
    let mut di = vec![0.0; ni];
    for &(u, i) in &edges {
        du[u] += 1.0;
        di[i] += 1.0;
    }
    let weights: Vec<f64> = edges
        .iter()
        .map(|&(u, i)| 1.0 / (du[u] * di[i] as f64).sqrt())
        .collect();
    let ratio = 0.4;
    let n_keep = ((1.0 - ratio) * edges.len() as f64).round() as usize;
    let trials = 20_000;

    let mut got = vec![0.0; edges.len()];
    for t in 0..trials {
        let kept = prune_edges(&edges, nu, ni, ratio, &mut rng::stream(t as u64, 5));
        assert_eq!(kept.len(), n_keep);
        for e in kept {
            got[edges.iter().position(|&x| x == e).unwrap()] += 1.0;
        }
    }
    let mut want = vec![0.0; edges.len()];
    let mut r = Lcg(41);
    for _ in 0..trials {
        for e in sequential_draw(&weights, n_keep, &mut r) {
            want[e] += 1.0;
        }
    }
    for e in 0..edges.len() {
        let (g, w) = (got[e] / trials as f64, want[e] / trials as f64);
        assert!((g - w).abs() < 0.05, "edge {:?}: {g} vs {w}", edges[e]);
    }
    // The hub edge (0, 0) is the most likely to go.
    let min = got.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(got[0], min);
}

#[test]
fn kept_edges_preserve_input_order() {
    let edges: Vec<(usize, usize)> = (0..30).map(|k| (k % 6, k % 7)).collect();
    let kept = prune_edges(&edges, 6, 7, 0.5, &mut rng::stream(1, 1));
    let pos: Vec<usize> = kept
        .iter()
        .map(|e| edges.iter().position(|x| x == e).unwrap())
        .collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(kept, prune_edges(&edges, 6, 7, 0.5, &mut rng::stream(1, 1)));
}
