//! Store ranking for a shopping list.
//!
//! Each store gets three scores in [0, 1]: the share of requested products
//! it has in stock, its share of free parking, and a traffic score of
//! `(3 - level) / 2`. The total is their weighted mean (equal weights by
//! default). Stores are ranked by total, highest first, ties going to the
//! lower store id.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datastore::{Datastore, StoreRecord};

#[derive(Debug, Error, PartialEq)]
pub enum RecommendError {
    #[error("at least one product id is required")]
    EmptyRequest,
    #[error("product {0} is not in the catalog")]
    UnknownProduct(u32),
    #[error("weights must be finite, non-negative and not all zero")]
    Weights,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Weights {
    pub product: f64,
    pub parking: f64,
    pub traffic: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            product: 1.0,
            parking: 1.0,
            traffic: 1.0,
        }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<(), RecommendError> {
        let all = [self.product, self.parking, self.traffic];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) || all.iter().sum::<f64>() <= 0.0 {
            return Err(RecommendError::Weights);
        }
        Ok(())
    }

    fn combine(&self, product: f64, parking: f64, traffic: f64) -> f64 {
        (self.product * product + self.parking * parking + self.traffic * traffic)
            / (self.product + self.parking + self.traffic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecommendationScore {
    pub store_id: u32,
    pub store_name: String,
    pub product_score: f64,
    pub parking_score: f64,
    pub traffic_score: f64,
    pub total: f64,
}

pub fn parking_score(store: &StoreRecord) -> f64 {
    if store.store_parking_total == 0 {
        0.0
    } else {
        f64::from(store.store_parking_available) / f64::from(store.store_parking_total)
    }
}

pub fn traffic_score(store: &StoreRecord) -> f64 {
    f64::from(3 - store.avg_traffic.get()) / 2.0
}

/// Highest total first; equal totals by ascending store id.
pub fn rank(scores: &mut [RecommendationScore]) {
    scores.sort_by(|a, b| match b.total.total_cmp(&a.total) {
        Ordering::Equal => a.store_id.cmp(&b.store_id),
        o => o,
    });
}

pub fn recommend(
    ds: &Datastore,
    product_ids: &[u32],
    weights: &Weights,
) -> Result<Vec<RecommendationScore>, RecommendError> {
    weights.validate()?;
    let wanted: BTreeSet<u32> = product_ids.iter().copied().collect();
    if wanted.is_empty() {
        return Err(RecommendError::EmptyRequest);
    }
    if let Some(missing) = wanted.iter().find(|id| ds.product(**id).is_none()) {
        return Err(RecommendError::UnknownProduct(*missing));
    }
    let mut scores: Vec<RecommendationScore> = ds
        .list_stores()
        .into_iter()
        .map(|store| {
            let stocked = wanted
                .iter()
                .filter(|p| ds.availability(store.store_id, **p) > 0)
                .count();
            let product_score = stocked as f64 / wanted.len() as f64;
            let parking = parking_score(&store);
            let traffic = traffic_score(&store);
            RecommendationScore {
                total: weights.combine(product_score, parking, traffic),
                store_id: store.store_id,
                store_name: store.store_name,
                product_score,
                parking_score: parking,
                traffic_score: traffic,
            }
        })
        .collect();
    rank(&mut scores);
    Ok(scores)
}
