//! Label sharding: sort by label, cut `K·s` equal contiguous shards, deal
//! `s` shuffled shards to each client.

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

use super::LabeledDataset;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShardPartition {
    /// Sample indices per client, in shard order.
    pub assignments: Vec<Vec<usize>>,
    pub shards_per_client: usize,
    pub num_clients: usize,
    pub shard_size: usize,
}

impl ShardPartition {
    pub fn samples_per_client(&self) -> usize {
        self.shards_per_client * self.shard_size
    }

    /// Disjointness, equal client volumes and total coverage of
    /// `K·s·shard_size` indices below `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (k, a) in self.assignments.iter().enumerate() {
            if a.len() != self.samples_per_client() {
                return Err(Error::usage(format!(
                    "client {k} holds {} samples, expected {}",
                    a.len(),
                    self.samples_per_client()
                )));
            }
            for &i in a {
                if i >= n || seen[i] {
                    return Err(Error::usage(format!("index {i} invalid or assigned twice")));
                }
                seen[i] = true;
            }
        }
        let covered = seen.iter().filter(|&&s| s).count();
        if covered != self.num_clients * self.shards_per_client * self.shard_size {
            return Err(Error::usage("partition coverage mismatch"));
        }
        Ok(())
    }
}

pub fn label_shard_partition(
    ds: &LabeledDataset,
    num_clients: usize,
    shards_per_client: usize,
    seed: u64,
) -> Result<ShardPartition> {
    if num_clients == 0 || shards_per_client == 0 {
        return Err(Error::usage("clients and shards per client must be >= 1"));
    }
    let num_shards = num_clients * shards_per_client;
    if num_shards > ds.len() {
        return Err(Error::usage(format!(
            "K*s = {num_shards} shards exceeds the {} available samples",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    // stable, so equal labels keep original index order
    order.sort_by_key(|&i| ds.label(i));
    let shard_size = ds.len() / num_shards;
    order.truncate(num_shards * shard_size);

    let mut shard_ids: Vec<usize> = (0..num_shards).collect();
    shard_ids.shuffle(&mut stream(seed, Purpose::Partition, 0, 0));

    let assignments = shard_ids
        .chunks(shards_per_client)
        .map(|shards| {
            shards
                .iter()
                .flat_map(|&s| order[s * shard_size..(s + 1) * shard_size].iter().copied())
                .collect()
        })
        .collect();

    Ok(ShardPartition {
        assignments,
        shards_per_client,
        num_clients,
        shard_size,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartitionStats {
    /// `histograms[k][c]` = samples of class `c` held by client `k`.
    pub histograms: Vec<Vec<usize>>,
    pub distinct_labels: Vec<usize>,
    pub mean_distinct_labels: f64,
}

pub fn partition_stats(p: &ShardPartition, ds: &LabeledDataset) -> PartitionStats {
    let histograms: Vec<Vec<usize>> = p
        .assignments
        .iter()
        .map(|a| {
            let mut h = vec![0; ds.num_classes()];
            for &i in a {
                h[ds.label(i)] += 1;
            }
            h
        })
        .collect();
    let distinct_labels: Vec<usize> = histograms
        .iter()
        .map(|h| h.iter().filter(|&&c| c > 0).count())
        .collect();
    let mean_distinct_labels =
        distinct_labels.iter().sum::<usize>() as f64 / distinct_labels.len().max(1) as f64;
    PartitionStats {
        histograms,
        distinct_labels,
        mean_distinct_labels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// N samples, labels i % classes (so the sort actually has to reorder).
    fn interleaved(n: usize, classes: usize) -> LabeledDataset {
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let features = (0..n).map(|i| i as f64).collect();
        LabeledDataset::new(features, labels, 1, classes).unwrap()
    }

    #[test]
    fn ten_shards_of_ten() {
        let ds = interleaved(100, 10);
        let p = label_shard_partition(&ds, 5, 2, 3).unwrap();
        p.validate(ds.len()).unwrap();
        assert_eq!(p.shard_size, 10);
        // Enumeration: sorted order puts label c at positions 10c..10c+10,
        // so each shard is exactly one label.
        for a in &p.assignments {
            assert_eq!(a.len(), 20);
            for chunk in a.chunks(10) {
                let l = ds.label(chunk[0]);
                assert!(chunk.iter().all(|&i| ds.label(i) == l));
            }
        }
        let stats = partition_stats(&p, &ds);
        assert!(stats.distinct_labels.iter().all(|&d| d <= 2));
        assert!(stats.mean_distinct_labels <= 2.0);
        for (h, a) in stats.histograms.iter().zip(&p.assignments) {
            assert_eq!(h.iter().sum::<usize>(), a.len());
        }
    }

    #[test]
    fn single_client_sees_everything() {
        let ds = interleaved(100, 10);
        let p = label_shard_partition(&ds, 1, 10, 0).unwrap();
        let stats = partition_stats(&p, &ds);
        assert_eq!(stats.distinct_labels, vec![10]);
        assert_eq!(p.assignments[0].len(), 100);
    }

    #[test]
    fn deterministic_and_trimmed() {
        let ds = interleaved(103, 10);
        let a = label_shard_partition(&ds, 4, 3, 9).unwrap();
        let b = label_shard_partition(&ds, 4, 3, 9).unwrap();
        assert_eq!(a, b);
        a.validate(ds.len()).unwrap();
        assert_eq!(a.shard_size, 8);
        assert_eq!(a.assignments.iter().map(Vec::len).sum::<usize>(), 96);
    }

    #[test]
    fn too_many_shards() {
        let ds = interleaved(10, 2);
        assert!(label_shard_partition(&ds, 4, 3, 0).is_err());
    }

    #[test]
    fn heterogeneity_grows_with_shards() {
        let ds = interleaved(1000, 10);
        let mut previous = 0.0;
        for s in 1..=10 {
            let mean = (0..20)
                .map(|seed| partition_stats(&label_shard_partition(&ds, 10, s, seed).unwrap(), &ds).mean_distinct_labels)
                .sum::<f64>()
                / 20.0;
            assert!(mean >= previous, "s={s}: {mean} < {previous}");
            previous = mean;
        }
    }
}
