//! Planted-preference synthetic data: users and items belong to latent clusters,
//! users mostly interact within their cluster, and item features (or attributes)
//! can be generated to reveal the clusters.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{InteractionDataset, RawInteraction, SplitRatios};
use crate::error::{Error, Result};
use crate::features::{FeatureTable, Modality, Provenance};
use crate::keywords::AttributeMatrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub interactions_per_user: usize,
    /// Chance a draw stays inside the user's cluster.
    pub in_cluster_prob: f64,
    /// Zipf exponent of item popularity; 0 is uniform.
    pub popularity_exponent: f64,
    pub feature_dim: usize,
    /// Std of per-item noise around the cluster centroid.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n_users: 500,
            n_items: 200,
            n_clusters: 3,
            interactions_per_user: 10,
            in_cluster_prob: 0.7,
            popularity_exponent: 1.0,
            feature_dim: 32,
            feature_noise: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedData {
    /// Split 80/10/10 per user.
    pub dataset: InteractionDataset,
    /// Cluster of each dataset item, in dataset order.
    pub item_cluster: Vec<usize>,
    pub user_cluster: Vec<usize>,
    /// Cluster centroid plus noise, aligned to the dataset items.
    pub features: FeatureTable,
    /// Five one-hot slots: the cluster and four uninformative slots.
    pub attributes: AttributeMatrix,
}

const ATTR_NOISE_SLOTS: usize = 4;
const ATTR_NOISE_VALUES: usize = 50;

fn weighted_pick(weights: &[f64], total: f64, r: &mut rng::StreamRng) -> usize {
    let mut x = r.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        if x < w {
            return k;
        }
        x -= w;
    }
    weights.len() - 1
}

pub fn generate_planted(cfg: &PlantedConfig) -> Result<PlantedData> {
    if cfg.n_clusters == 0 || cfg.n_items < cfg.n_clusters || cfg.n_users == 0 {
        return Err(Error::invalid(
            "planted data needs users, and at least one item per cluster",
        ));
    }
    if cfg.interactions_per_user * 2 > cfg.n_items / cfg.n_clusters.max(1) {
        log::warn!("interactions_per_user is large relative to cluster size");
    }
    let mut r = rng::stream(cfg.seed, 0);
    let item_cluster_raw: Vec<usize> = (0..cfg.n_items).map(|i| i % cfg.n_clusters).collect();
    let user_cluster: Vec<usize> = (0..cfg.n_users)
        .map(|_| r.random_range(0..cfg.n_clusters))
        .collect();
    let mut order: Vec<usize> = (0..cfg.n_items).collect();
    for k in (1..order.len()).rev() {
        order.swap(k, r.random_range(0..=k));
    }
    let mut pop = vec![0.0; cfg.n_items];
    for (rank, &i) in order.iter().enumerate() {
        pop[i] = ((rank + 1) as f64).powf(-cfg.popularity_exponent);
    }
    let per_cluster: Vec<Vec<f64>> = (0..cfg.n_clusters)
        .map(|c| {
            (0..cfg.n_items)
                .map(|i| {
                    if item_cluster_raw[i] == c {
                        pop[i]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let cluster_tot: Vec<f64> = per_cluster.iter().map(|w| w.iter().sum()).collect();
    let all_tot: f64 = pop.iter().sum();

    let mut rows = Vec::new();
    for u in 0..cfg.n_users {
        let mut ur = rng::stream(cfg.seed, 1 + u as u64);
        let c = user_cluster[u];
        let mut chosen: Vec<usize> = Vec::new();
        let mut attempts = 0;
        while chosen.len() < cfg.interactions_per_user && attempts < cfg.interactions_per_user * 100
        {
            attempts += 1;
            let i = if ur.random::<f64>() < cfg.in_cluster_prob {
                weighted_pick(&per_cluster[c], cluster_tot[c], &mut ur)
            } else {
                weighted_pick(&pop, all_tot, &mut ur)
            };
            if !chosen.contains(&i) {
                chosen.push(i);
            }
        }
        for (t, i) in chosen.into_iter().enumerate() {
            let mut row = RawInteraction::new(format!("u{u}"), format!("i{i}"));
            row.timestamp = Some(t as i64);
            rows.push(row);
        }
    }
    let dataset =
        InteractionDataset::from_raw(&rows).split_holdout(SplitRatios::default(), cfg.seed)?;
    let raw_index = |id: &str| id[1..].parse::<usize>().expect("generated id");
    let item_cluster: Vec<usize> = dataset
        .item_ids()
        .iter()
        .map(|id| item_cluster_raw[raw_index(id)])
        .collect();
    let user_cluster_ds: Vec<usize> = dataset
        .user_ids()
        .iter()
        .map(|id| user_cluster[raw_index(id)])
        .collect();

    let mut fr = rng::stream(cfg.seed, u64::MAX - 1);
    let centroids: Vec<Vec<f64>> = (0..cfg.n_clusters)
        .map(|_| {
            (0..cfg.feature_dim)
                .map(|_| StandardNormal.sample(&mut fr))
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(dataset.n_items() * cfg.feature_dim);
    for &c in &item_cluster {
        for k in 0..cfg.feature_dim {
            let e: f64 = StandardNormal.sample(&mut fr);
            data.push((centroids[c][k] + cfg.feature_noise * e) as f32);
        }
    }
    let features = FeatureTable::new(
        dataset.item_ids().to_vec(),
        cfg.feature_dim,
        data,
        Provenance::new("planted", Some(Modality::Multimodal)),
    )?;

    let mut feature_names: Vec<String> = (0..cfg.n_clusters)
        .map(|c| format!("cluster=c{c}"))
        .collect();
    for s in 0..ATTR_NOISE_SLOTS {
        for v in 0..ATTR_NOISE_VALUES {
            feature_names.push(format!("slot{s}=v{v}"));
        }
    }
    let mut ar = rng::stream(cfg.seed, u64::MAX - 2);
    let active = item_cluster
        .iter()
        .map(|&c| {
            let mut a = vec![c];
            for s in 0..ATTR_NOISE_SLOTS {
                a.push(
                    cfg.n_clusters + s * ATTR_NOISE_VALUES + ar.random_range(0..ATTR_NOISE_VALUES),
                );
            }
            a
        })
        .collect();
    let attributes = AttributeMatrix {
        item_ids: dataset.item_ids().to_vec(),
        feature_names,
        active,
    };

    Ok(PlantedData {
        dataset,
        item_cluster,
        user_cluster: user_cluster_ds,
        features,
        attributes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_is_deterministic_and_clustered() {
        let cfg = PlantedConfig {
            n_users: 60,
            n_items: 40,
            n_clusters: 2,
            interactions_per_user: 5,
            in_cluster_prob: 1.0,
            ..PlantedConfig::default()
        };
        let a = generate_planted(&cfg).unwrap();
        let b = generate_planted(&cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.features, b.features);
        for &(u, i) in a.dataset.interactions() {
            assert_eq!(a.user_cluster[u as usize], a.item_cluster[i as usize]);
        }
        assert!(a.attributes.active.iter().all(|r| r.len() == 5));
    }
}
