//! Seeded synthetic dataset with a planted popularity bias.
//!
//! Users are split at random into group `A` and group `B`, recorded in the
//! country field. Group A draws its items from a Zipf distribution over item
//! rank, group B uniformly, so a recommender that learns popularity serves A
//! better. Gender, age, play counts and user ids carry no signal.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recaudit_core::{Gender, Provenance, RawDataset, UserAttributes};
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub min_items: usize,
    pub max_items: usize,
    pub group_a_fraction: f64,
    pub zipf_exponent: f64,
    pub max_plays: u32,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            users: 2000,
            items: 500,
            min_items: 20,
            max_items: 80,
            group_a_fraction: 0.5,
            zipf_exponent: 1.0,
            max_plays: 20,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.users >= 2
            && self.min_items >= 1
            && self.min_items <= self.max_items
            && self.max_items <= self.items
            && (0.0..=1.0).contains(&self.group_a_fraction)
            && self.zipf_exponent >= 0.0
            && self.max_plays >= 1;
        if ok {
            Ok(())
        } else {
            Err(AuditError::config(format!("invalid [synthetic] section: {self:?}")))
        }
    }
}

/// `k` distinct indices drawn with probability proportional to `weights`
/// (exponential-key sampling without replacement).
fn weighted_sample(rng: &mut ChaCha8Rng, weights: &[f64], k: usize) -> Vec<usize> {
    let mut keys: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| (-(1.0 - rng.gen::<f64>()).ln() / w, i))
        .collect();
    keys.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
    keys.truncate(k);
    keys.into_iter().map(|(_, i)| i).collect()
}

pub fn generate(config: &SyntheticConfig) -> Result<RawDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = config.users.saturating_sub(1).to_string().len().max(5);
    let n_a = (config.users as f64 * config.group_a_fraction).round() as usize;
    let mut in_a: Vec<bool> = (0..config.users).map(|u| u < n_a).collect();
    in_a.shuffle(&mut rng);

    let zipf: Vec<f64> = (0..config.items)
        .map(|i| ((i + 1) as f64).powf(-config.zipf_exponent))
        .collect();
    let uniform = vec![1.0; config.items];

    let mut triples = Vec::new();
    let mut attributes = Vec::with_capacity(config.users);
    for (u, &a) in in_a.iter().enumerate() {
        let id = format!("{u:0width$}");
        let n = rng.gen_range(config.min_items..=config.max_items);
        let mut items = weighted_sample(&mut rng, if a { &zipf } else { &uniform }, n);
        items.sort_unstable();
        for i in items {
            let plays = rng.gen_range(1..=config.max_plays);
            triples.push((id.clone(), format!("i{i:04}"), f64::from(plays)));
        }
        attributes.push(UserAttributes {
            gender: if rng.gen::<bool>() { Gender::Male } else { Gender::Female },
            age: Some(rng.gen_range(15..=65)),
            country: Some(if a { "A" } else { "B" }.to_string()),
            ..UserAttributes::new(id)
        });
    }
    Ok(RawDataset {
        triples,
        attributes,
        provenance: Provenance::Synthetic,
    })
}
