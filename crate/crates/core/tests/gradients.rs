mod common;

use common::{dense_lightgcn, finite_difference, relative_error, sim, Lcg};
use mmrec::factor::{bpr_loss, FactorModel};
use mmrec::graph::{
    sym_normalize, Bm3, Bm3Batch, Bm3Config, Freedom, FreedomConfig, Lattice, LightGcn,
    NormalizedBipartiteGraph,
};
use mmrec::linalg::{Csr, Matrix};
use mmrec::rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn normal_vec(r: &mut Lcg, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * r.normal()).collect()
}

fn triples(r: &mut Lcg, n_users: usize, n_items: usize, n: usize) -> Vec<(usize, usize, usize)> {
    (0..n)
        .map(|_| {
            let u = r.below(n_users);
            let i = r.below(n_items);
            let j = (i + 1 + r.below(n_items - 1)) % n_items;
            (u, i, j)
        })
        .collect()
}

/// Every user and item gets at least one edge.
fn random_edges(r: &mut Lcg, n_users: usize, n_items: usize) -> Vec<(usize, usize)> {
    let mut e: Vec<(usize, usize)> = (0..n_users.max(n_items))
        .map(|k| (k % n_users, k % n_items))
        .collect();
    for u in 0..n_users {
        for i in 0..n_items {
            if r.uniform() < 0.3 {
                e.push((u, i));
            }
        }
    }
    e.sort_unstable();
    e.dedup();
    e
}

fn random_item_graph(r: &mut Lcg, n: usize) -> Csr {
    let mut t = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if r.uniform() < 0.4 {
                let w = 0.1 + r.uniform();
                t.push((a, b, w));
                t.push((b, a, w));
            }
        }
    }
    sym_normalize(&Csr::from_triplets(n, n, t))
}

#[test]
fn bpr_loss_scalar_value() {
    // ln(1 + e^{-1.5})
    assert!((bpr_loss(1.0, -0.5, 0.0, 0.0) - 0.201_413).abs() < 1e-6);
    assert!((bpr_loss(1.0, -0.5, 2.0, 0.1) - 0.401_413).abs() < 1e-6);
    assert!(bpr_loss(800.0, -800.0, 0.0, 0.0).is_finite());
    assert!((bpr_loss(-800.0, 800.0, 0.0, 0.0) - 1600.0).abs() < 1e-9);
}

fn factor_check(with_content: bool, points: usize) -> f64 {
    let mut r = Lcg(if with_content { 2 } else { 1 });
    let mut worst = 0.0f64;
    for p in 0..points {
        let (nu, ni, d) = (2 + r.below(4), 3 + r.below(5), 1 + r.below(4));
        let feats = with_content.then(|| Matrix::from_vec(ni, 5, normal_vec(&mut r, ni * 5, 1.0)));
        let mut m = FactorModel::init(nu, ni, d, feats, p as u64).unwrap();
        let x = normal_vec(&mut r, m.params_flat().len(), 0.5);
        m.set_params_flat(&x);
        let batch = triples(&mut r, nu, ni, 6);
        let l2 = [0.0, 1e-2, 1e-1][p % 3];
        let analytic = FactorModel::grad_flat(&m.batch_gradient(&batch, l2));
        let mut probe = m.clone();
        let fd = finite_difference(
            &mut |v| {
                probe.set_params_flat(v);
                probe.batch_loss(&batch, l2)
            },
            &x,
            H,
        );
        worst = worst.max(relative_error(&analytic, &fd));
    }
    worst
}

#[test]
fn bprmf_gradient_matches_finite_differences() {
    let e = factor_check(false, 100);
    assert!(e < TOL, "worst relative error {e}");
}

#[test]
fn vbpr_gradient_matches_finite_differences() {
    let e = factor_check(true, 100);
    assert!(e < TOL, "worst relative error {e}");
}

#[test]
fn lightgcn_gradient_matches_finite_differences() {
    let mut r = Lcg(3);
    for p in 0..10 {
        let (nu, ni, d) = (3 + r.below(3), 4 + r.below(3), 2 + r.below(3));
        let g = NormalizedBipartiteGraph::new(nu, ni, &random_edges(&mut r, nu, ni));
        let mut m = LightGcn::init(g, d, p % 4, p as u64);
        let x = normal_vec(&mut r, m.emb.as_slice().len(), 0.5);
        m.emb.as_mut_slice().copy_from_slice(&x);
        let batch = triples(&mut r, nu, ni, 6);
        let (_, grad) = m.batch_loss_grad(&batch, 1e-2);
        let mut probe = m.clone();
        let fd = finite_difference(
            &mut |v| {
                probe.emb.as_mut_slice().copy_from_slice(v);
                probe.batch_loss(&batch, 1e-2)
            },
            &x,
            H,
        );
        let e = relative_error(grad.as_slice(), &fd);
        assert!(e < TOL, "layers {} error {e}", p % 4);
    }
}

#[test]
fn lattice_gradient_matches_finite_differences() {
    let mut r = Lcg(4);
    for p in 0..10 {
        let (nu, ni, d) = (3 + r.below(3), 5 + r.below(3), 2 + r.below(3));
        let graphs = vec![random_item_graph(&mut r, ni), random_item_graph(&mut r, ni)];
        let mut m = Lattice::init(nu, graphs, ni, d, 1 + p % 2, p as u64);
        let nuv = nu * d;
        let niv = ni * d;
        let mut x = normal_vec(&mut r, nuv + niv, 0.5);
        x.extend(normal_vec(&mut r, 2, 1.0));
        let set = |m: &mut Lattice, v: &[f64]| {
            m.users.as_mut_slice().copy_from_slice(&v[..nuv]);
            m.items.as_mut_slice().copy_from_slice(&v[nuv..nuv + niv]);
            m.alpha.copy_from_slice(&v[nuv + niv..]);
        };
        set(&mut m, &x);
        let batch = triples(&mut r, nu, ni, 6);
        let (_, g) = m.batch_loss_grad(&batch, 1e-2);
        let mut analytic = g.users.as_slice().to_vec();
        analytic.extend_from_slice(g.items.as_slice());
        analytic.extend_from_slice(&g.alpha);
        let mut probe = m.clone();
        let fd = finite_difference(
            &mut |v| {
                set(&mut probe, v);
                probe.batch_loss(&batch, 1e-2)
            },
            &x,
            H,
        );
        let e = relative_error(&analytic, &fd);
        assert!(e < TOL, "error {e}");
        // The modality logits get a gradient of their own.
        let ea = relative_error(&g.alpha, &fd[nuv + niv..]);
        assert!(ea < 1e-3, "alpha error {ea}");
    }
}

#[test]
fn freedom_gradient_matches_finite_differences() {
    let mut r = Lcg(5);
    for p in 0..10 {
        let (nu, ni, d) = (3 + r.below(3), 5 + r.below(3), 2 + r.below(3));
        let edges = random_edges(&mut r, nu, ni);
        let cfg = FreedomConfig {
            layers: 1 + p % 3,
            prune_ratio: 0.3,
            ..Default::default()
        };
        let mut m = Freedom::init(
            NormalizedBipartiteGraph::new(nu, ni, &edges),
            random_item_graph(&mut r, ni),
            d,
            &cfg,
            p as u64,
        );
        if p % 2 == 1 {
            m.resample_graph(&mut rng::stream(p as u64, 7));
        }
        let x = normal_vec(&mut r, m.emb.as_slice().len(), 0.5);
        m.emb.as_mut_slice().copy_from_slice(&x);
        let batch = triples(&mut r, nu, ni, 6);
        let (_, grad) = m.batch_loss_grad(&batch, 1e-2);
        let mut probe = m.clone();
        let fd = finite_difference(
            &mut |v| {
                probe.emb.as_mut_slice().copy_from_slice(v);
                probe.batch_loss(&batch, 1e-2)
            },
            &x,
            H,
        );
        let e = relative_error(grad.as_slice(), &fd);
        assert!(e < TOL, "error {e}");
    }
}

fn masked(mask: &[f64], x: &[f64]) -> Vec<f64> {
    mask.iter().zip(x).map(|(m, v)| m * v).collect()
}

fn project(w: &[f64], d: usize, f: &[f64]) -> Vec<f64> {
    (0..d)
        .map(|r| sim::dot(&w[r * f.len()..(r + 1) * f.len()], f))
        .collect()
}

struct Bm3Oracle<'a> {
    nu: usize,
    ni: usize,
    d: usize,
    edges: &'a [(usize, usize)],
    layers: usize,
    features: &'a [Matrix],
    batch: &'a Bm3Batch,
    l2: f64,
    target_emb: Vec<f64>,
    target_proj: Vec<Vec<f64>>,
}

impl Bm3Oracle<'_> {
    fn rows(&self, flat: &[f64]) -> Vec<Vec<f64>> {
        flat.chunks(self.d).map(|c| c.to_vec()).collect()
    }

    /// Online views follow `emb` and `proj`; every target view is computed from
    /// the frozen copies, which is what detaching them means.
    fn loss(&self, emb: &[f64], proj: &[Vec<f64>]) -> f64 {
        let z = dense_lightgcn(self.nu, self.ni, self.edges, &self.rows(emb), self.layers);
        let z0 = dense_lightgcn(
            self.nu,
            self.ni,
            self.edges,
            &self.rows(&self.target_emb),
            self.layers,
        );
        let mut loss = 0.0;
        for (t, &(u, i)) in self.batch.pairs.iter().enumerate() {
            loss += 1.0 - sim::cosine(&masked(&self.batch.mask_u[t], &z[u]), &z0[self.nu + i][..]);
            loss += 1.0 - sim::cosine(&masked(&self.batch.mask_i[t], &z[self.nu + i]), &z0[u][..]);
            for (m, f) in self.features.iter().enumerate() {
                let e = project(&proj[m], self.d, f.row(i));
                let e0 = project(&self.target_proj[m], self.d, f.row(i));
                loss += 1.0 - sim::cosine(&e, &z0[self.nu + i][..]);
                loss += 1.0 - sim::cosine(&masked(&self.batch.mask_e[m][t], &e), &e0);
            }
            let eu = &emb[u * self.d..(u + 1) * self.d];
            let ei = &emb[(self.nu + i) * self.d..(self.nu + i + 1) * self.d];
            loss += self.l2 * (sim::dot(eu, eu) + sim::dot(ei, ei));
        }
        loss + self.l2 * proj.iter().map(|w| sim::dot(w, w)).sum::<f64>()
    }
}

#[test]
fn bm3_gradient_treats_targets_as_constants() {
    let mut r = Lcg(6);
    for p in 0..6 {
        let (nu, ni, d) = (3 + r.below(2), 4 + r.below(3), 3);
        let edges = random_edges(&mut r, nu, ni);
        let features: Vec<Matrix> = [4usize, 6]
            .iter()
            .map(|&f| Matrix::from_vec(ni, f, normal_vec(&mut r, ni * f, 1.0)))
            .collect();
        let cfg = Bm3Config {
            layers: 1 + p % 3,
            dropout_p: 0.3,
        };
        let mut m = Bm3::init(
            NormalizedBipartiteGraph::new(nu, ni, &edges),
            features.clone(),
            d,
            &cfg,
            p as u64,
        );
        let emb = normal_vec(&mut r, m.emb.as_slice().len(), 0.5);
        m.emb.as_mut_slice().copy_from_slice(&emb);
        for w in m.proj.iter_mut() {
            let v = normal_vec(&mut r, w.as_slice().len(), 0.5);
            w.as_mut_slice().copy_from_slice(&v);
        }
        let pairs: Vec<(usize, usize)> = (0..5).map(|_| (r.below(nu), r.below(ni))).collect();
        let batch = if p % 2 == 0 {
            Bm3Batch::sample(pairs, d, 2, 0.3, &mut rng::stream(p as u64, 3))
        } else {
            Bm3Batch::without_dropout(pairs, d, 2)
        };
        let l2 = 1e-2;
        let (loss, g) = m.batch_eval(&batch, l2, true);
        let g = g.unwrap();
        let proj: Vec<Vec<f64>> = m.proj.iter().map(|w| w.as_slice().to_vec()).collect();
        let oracle = Bm3Oracle {
            nu,
            ni,
            d,
            edges: &edges,
            layers: cfg.layers,
            features: &features,
            batch: &batch,
            l2,
            target_emb: emb.clone(),
            target_proj: proj.clone(),
        };
        assert!((oracle.loss(&emb, &proj) - loss).abs() < 1e-9);

        let fd_emb = finite_difference(&mut |v| oracle.loss(v, &proj), &emb, H);
        let e = relative_error(g.emb.as_slice(), &fd_emb);
        assert!(e < TOL, "embedding error {e}");
        for k in 0..proj.len() {
            let fd_w = finite_difference(
                &mut |v| {
                    let mut pv = proj.clone();
                    pv[k] = v.to_vec();
                    oracle.loss(&emb, &pv)
                },
                &proj[k],
                H,
            );
            let e = relative_error(g.proj[k].as_slice(), &fd_w);
            assert!(e < TOL, "projection {k} error {e}");
        }

        // Differentiating straight through the targets gives something else.
        let mut probe = m.clone();
        let through = finite_difference(
            &mut |v| {
                probe.emb.as_mut_slice().copy_from_slice(v);
                probe.batch_eval(&batch, l2, false).0
            },
            &emb,
            H,
        );
        assert!(relative_error(g.emb.as_slice(), &through) > 1e-3);
    }
}

#[test]
fn bm3_content_losses_leave_embeddings_alone() {
    // With l2 = 0 and a single pair whose two views already agree, the only
    // embedding gradient comes from reconstruction, which is zero here.
    let edges = [(0, 0), (1, 1)];
    let graph = NormalizedBipartiteGraph::new(2, 2, &edges);
    let features = vec![Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0])];
    let cfg = Bm3Config {
        layers: 0,
        dropout_p: 0.0,
    };
    let mut m = Bm3::init(graph, features, 2, &cfg, 0);
    m.emb = Matrix::from_vec(4, 2, vec![1.0, 2.0, 0.0, 1.0, 2.0, 4.0, 1.0, 0.0]);
    m.proj[0] = Matrix::from_vec(2, 2, vec![0.3, -1.0, 0.7, 0.2]);
    let batch = Bm3Batch::without_dropout(vec![(0, 0)], 2, 1);
    let (_, g) = m.batch_eval(&batch, 0.0, true);
    let g = g.unwrap();
    assert!(g.emb.as_slice().iter().all(|v| v.abs() < 1e-12));
    assert!(g.proj[0].as_slice().iter().any(|v| v.abs() > 1e-6));
}
