//! Zipf popularity and static cache placement at the LEO.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::scenario::ScenarioConfig;

#[derive(Debug, Error, PartialEq)]
pub enum CacheError {
    #[error("cache pattern has {got} entries, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("cache pattern entry {index} is {value}, expected 0 or 1")]
    NotBinary { index: usize, value: u8 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CachePlan {
    /// 1-based file indices held by the LEO cache.
    pub cached_files: BTreeSet<usize>,
    /// `hits[k]` is `c_k`.
    pub hits: Vec<bool>,
    pub popularity: Vec<f64>,
}

impl CachePlan {
    pub fn indicators(&self) -> Vec<u8> {
        self.hits.iter().map(|&h| u8::from(h)).collect()
    }

    pub fn misses(&self) -> impl Iterator<Item = usize> + '_ {
        self.hits.iter().enumerate().filter(|(_, &h)| !h).map(|(k, _)| k)
    }

    pub fn num_misses(&self) -> usize {
        self.hits.iter().filter(|&&h| !h).count()
    }

    /// Same plan with every device missing.
    pub fn all_miss(&self) -> Self {
        Self {
            cached_files: BTreeSet::new(),
            hits: vec![false; self.hits.len()],
            popularity: self.popularity.clone(),
        }
    }
}

/// Probability of file `f` (1-based) among `num_files`.
pub fn zipf_popularity(f: usize, num_files: usize, rho: f64) -> f64 {
    let norm: f64 = (1..=num_files).map(|i| (i as f64).powf(-rho)).sum();
    (f as f64).powf(-rho) / norm
}

fn popularity(c: &ScenarioConfig) -> Vec<f64> {
    (1..=c.num_files).map(|f| zipf_popularity(f, c.num_files, c.zipf_rho)).collect()
}

/// Caches the `cache_capacity` most popular files, ties to the lower index.
pub fn place_cache(c: &ScenarioConfig) -> CachePlan {
    let pop = popularity(c);
    let mut order: Vec<usize> = (1..=c.num_files).collect();
    order.sort_by(|&a, &b| pop[b - 1].total_cmp(&pop[a - 1]).then(a.cmp(&b)));
    let cached: BTreeSet<usize> = order.into_iter().take(c.cache_capacity).collect();
    let hits = c.devices.iter().map(|d| cached.contains(&d.file)).collect();
    CachePlan {
        cached_files: cached,
        hits,
        popularity: pop,
    }
}

/// Installs explicit hit indicators, bypassing popularity.
pub fn scenario_indicators(pattern: &[u8], c: &ScenarioConfig) -> Result<CachePlan, CacheError> {
    if pattern.len() != c.num_devices() {
        return Err(CacheError::LengthMismatch {
            got: pattern.len(),
            expected: c.num_devices(),
        });
    }
    if let Some((index, &value)) = pattern.iter().enumerate().find(|(_, &b)| b > 1) {
        return Err(CacheError::NotBinary { index, value });
    }
    let hits: Vec<bool> = pattern.iter().map(|&b| b == 1).collect();
    let cached = c
        .devices
        .iter()
        .zip(&hits)
        .filter(|(_, &h)| h)
        .map(|(d, _)| d.file)
        .collect();
    Ok(CachePlan {
        cached_files: cached,
        hits,
        popularity: popularity(c),
    })
}

/// The plan a scenario asks for: the explicit pattern if given, else placement.
pub fn cache_for(c: &ScenarioConfig) -> Result<CachePlan, CacheError> {
    match &c.cache_pattern {
        Some(p) => scenario_indicators(p, c),
        None => Ok(place_cache(c)),
    }
}
