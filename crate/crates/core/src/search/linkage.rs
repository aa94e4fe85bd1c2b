//! Linkage-tree learning over categorical genome positions.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::eval::CascadeGenome;

/// Family of subsets (FOS) of genome positions exchanged as units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkageModel {
    pub subsets: Vec<Vec<usize>>,
}

impl LinkageModel {
    /// Singletons only.
    pub fn univariate(len: usize) -> Self {
        Self {
            subsets: (0..len).map(|i| vec![i]).collect(),
        }
    }
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information divided by joint entropy; 0 when the joint entropy is 0.
pub fn normalized_mutual_information(xs: &[u32], ys: &[u32]) -> f64 {
    let n = xs.len() as f64;
    let mut px: BTreeMap<u32, usize> = BTreeMap::new();
    let mut py: BTreeMap<u32, usize> = BTreeMap::new();
    let mut pxy: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&x, &y) in xs.iter().zip(ys) {
        *px.entry(x).or_default() += 1;
        *py.entry(y).or_default() += 1;
        *pxy.entry((x, y)).or_default() += 1;
    }
    let hx = entropy(px.into_values(), n);
    let hy = entropy(py.into_values(), n);
    let hxy = entropy(pxy.into_values(), n);
    if hxy <= 0.0 {
        return 0.0;
    }
    ((hx + hy - hxy) / hxy).clamp(0.0, 1.0)
}

/// UPGMA over positions with normalized mutual information as similarity.
///
/// The FOS lists every singleton, then every merged subset in merge order,
/// leaving out the root. Ties merge the lowest-numbered cluster pair.
pub fn learn_linkage_tree(population: &[CascadeGenome]) -> Result<LinkageModel> {
    if population.len() < 2 {
        return Err(Error::Config(format!(
            "linkage learning needs at least 2 genomes, got {}",
            population.len()
        )));
    }
    let len = population[0].len();
    if population.iter().any(|g| g.len() != len) {
        return Err(Error::InvalidGenome("genomes differ in length".into()));
    }
    let columns: Vec<Vec<u32>> = (0..len)
        .map(|pos| population.iter().map(|g| g.get(pos)).collect())
        .collect();
    let mut sim = vec![vec![0.0; len]; len];
    for i in 0..len {
        for j in i + 1..len {
            let v = normalized_mutual_information(&columns[i], &columns[j]);
            sim[i][j] = v;
            sim[j][i] = v;
        }
    }

    let mut subsets = LinkageModel::univariate(len).subsets;
    let mut clusters: Vec<Vec<usize>> = (0..len).map(|i| vec![i]).collect();
    while clusters.len() > 1 {
        let mut best = (0, 1);
        let mut best_sim = f64::NEG_INFINITY;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let total: f64 = clusters[a]
                    .iter()
                    .flat_map(|&i| clusters[b].iter().map(move |&j| (i, j)))
                    .map(|(i, j)| sim[i][j])
                    .sum();
                let avg = total / (clusters[a].len() * clusters[b].len()) as f64;
                if avg > best_sim {
                    best_sim = avg;
                    best = (a, b);
                }
            }
        }
        let second = clusters.remove(best.1);
        let mut merged = clusters.remove(best.0);
        merged.extend(second);
        merged.sort_unstable();
        if clusters.is_empty() {
            break;
        }
        subsets.push(merged.clone());
        clusters.push(merged);
    }
    Ok(LinkageModel { subsets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_positions_merge_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pop: Vec<CascadeGenome> = (0..50)
            .map(|_| {
                let shared = rng.random_range(0..6);
                CascadeGenome::new(vec![shared, shared], vec![rng.random_range(0..6)])
            })
            .collect();
        let fos = learn_linkage_tree(&pop).unwrap();
        assert_eq!(fos.subsets, vec![vec![0], vec![1], vec![2], vec![0, 1]]);
        assert!((normalized_mutual_information(&[1, 2, 3], &[1, 2, 3]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_position() {
        let pop = vec![CascadeGenome::new(vec![1], vec![]); 3];
        assert_eq!(learn_linkage_tree(&pop).unwrap().subsets, vec![vec![0]]);
        assert!(learn_linkage_tree(&pop[..1]).is_err());
    }

    #[test]
    fn constant_columns_have_zero_similarity() {
        assert_eq!(normalized_mutual_information(&[4, 4, 4], &[4, 4, 4]), 0.0);
    }
}
