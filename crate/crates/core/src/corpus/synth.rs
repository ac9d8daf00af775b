//! Planted-structure cross-domain corpora for desk-scale experiments.
//!
//! Items of each domain are split into equally sized clusters. Every user
//! prefers two clusters per domain, drawn independently for X and Y. The
//! first interaction is always an X item. Each X item comes from one of the
//! user's X clusters; each Y item copies the cluster of the most recent X
//! item with probability `transfer_strength` and otherwise comes from one
//! of the user's Y clusters.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Domain, InteractionEvent};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items_per_domain: usize,
    pub n_clusters: usize,
    pub transfer_strength: f64,
    /// Inclusive range of mixed sequence lengths.
    pub seq_len_range: (usize, usize),
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_users: 50,
            n_items_per_domain: 200,
            n_clusters: 10,
            transfer_strength: 0.8,
            seq_len_range: (20, 40),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_users == 0 || self.n_items_per_domain == 0 || self.n_clusters == 0 {
            return bad("n_users, n_items_per_domain and n_clusters must be positive");
        }
        if !self.n_items_per_domain.is_multiple_of(self.n_clusters) {
            return bad("n_clusters must divide n_items_per_domain");
        }
        if !(0.0..=1.0).contains(&self.transfer_strength) {
            return bad("transfer_strength must lie in [0, 1]");
        }
        let (lo, hi) = self.seq_len_range;
        if lo < 6 || hi < lo {
            return bad("seq_len_range must satisfy 6 <= min <= max");
        }
        Ok(())
    }

    pub fn items_per_cluster(&self) -> usize {
        self.n_items_per_domain / self.n_clusters
    }

    pub fn item_id(&self, domain: Domain, index: usize) -> String {
        format!("{}{index:05}", domain.lower())
    }

    /// Cluster of a generated item id, e.g. `x00042`.
    pub fn cluster_of(&self, item: &str) -> Option<usize> {
        let index: usize = item.get(1..)?.parse().ok()?;
        (index < self.n_items_per_domain).then(|| index / self.items_per_cluster())
    }
}

fn preferred_clusters(rng: &mut ChaCha8Rng, n_clusters: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n_clusters).collect();
    all.shuffle(rng);
    all.truncate(2.min(n_clusters));
    all
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<InteractionEvent>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let per_cluster = spec.items_per_cluster();
    let (lo, hi) = spec.seq_len_range;
    let mut events = Vec::new();
    for u in 0..spec.n_users {
        let user = format!("u{u:06}");
        let x_pref = preferred_clusters(&mut rng, spec.n_clusters);
        let y_pref = preferred_clusters(&mut rng, spec.n_clusters);
        let len = rng.random_range(lo..=hi);
        let n_x = rng.random_range(3..=len - 3);
        // position 0 is always X so every Y item has a preceding X item
        let mut domains = vec![Domain::X; n_x - 1];
        domains.extend(std::iter::repeat_n(Domain::Y, len - n_x));
        domains.shuffle(&mut rng);
        domains.insert(0, Domain::X);

        let mut timestamp: u64 = rng.random_range(0..1_000_000);
        let mut last_x_cluster = x_pref[0];
        for domain in domains {
            let cluster = match domain {
                Domain::X => {
                    let c = *x_pref.choose(&mut rng).expect("non-empty");
                    last_x_cluster = c;
                    c
                }
                Domain::Y => {
                    if rng.random_bool(spec.transfer_strength) {
                        last_x_cluster
                    } else {
                        *y_pref.choose(&mut rng).expect("non-empty")
                    }
                }
            };
            let index = cluster * per_cluster + rng.random_range(0..per_cluster);
            timestamp += rng.random_range(1..=100);
            events.push(InteractionEvent {
                user: user.clone(),
                item: spec.item_id(domain, index),
                domain,
                timestamp,
            });
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indivisible_clusters() {
        let spec = SyntheticSpec {
            n_clusters: 7,
            ..Default::default()
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn timestamps_strictly_increase() {
        let events = generate_synthetic(&SyntheticSpec::default()).unwrap();
        for w in events.windows(2) {
            if w[0].user == w[1].user {
                assert!(w[0].timestamp < w[1].timestamp);
            }
        }
    }

    #[test]
    fn every_user_has_three_per_domain() {
        let spec = SyntheticSpec {
            seq_len_range: (6, 8),
            ..Default::default()
        };
        let events = generate_synthetic(&spec).unwrap();
        for u in 0..spec.n_users {
            let user = format!("u{u:06}");
            for d in Domain::BOTH {
                let n = events
                    .iter()
                    .filter(|e| e.user == user && e.domain == d)
                    .count();
                assert!(n >= 3, "{user} {d} {n}");
            }
        }
    }

    #[test]
    fn cluster_lookup() {
        let spec = SyntheticSpec::default();
        assert_eq!(spec.cluster_of(&spec.item_id(Domain::Y, 45)), Some(2));
        assert_eq!(spec.cluster_of("x99999"), None);
    }
}
