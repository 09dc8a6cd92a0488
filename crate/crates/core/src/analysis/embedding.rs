use super::AnalysisError;
use crate::model::{ModelParams, Scalar};
use crate::tokenizer::{Vocabulary, NUM_SPECIAL};

const DEGENERATE_EPS: f64 = 1e-12;

/// Central-dinucleotide group (0..16) of every 6-mer in id order.
pub fn central_dinucleotide_labels() -> Vec<usize> {
    (0..4096usize).map(|code| (code >> 4) & 0xF).collect()
}

/// Mean silhouette coefficient under cosine distance. Rows are `dim` wide.
/// A point whose intra- and nearest-cluster distances are both zero scores 0.
pub fn silhouette_cosine(rows: &[f64], dim: usize, labels: &[usize]) -> f64 {
    let n = labels.len();
    assert_eq!(rows.len(), n * dim, "row count");
    if n == 0 {
        return 0.0;
    }
    let units: Vec<f64> = rows
        .chunks_exact(dim)
        .flat_map(|r| {
            let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            let inv = if norm > DEGENERATE_EPS { 1.0 / norm } else { 0.0 };
            r.iter().map(move |x| x * inv)
        })
        .collect();
    let k = labels.iter().copied().max().unwrap() + 1;
    let mut sizes = vec![0usize; k];
    let mut sums = vec![0.0; k * dim];
    for (i, &c) in labels.iter().enumerate() {
        sizes[c] += 1;
        for j in 0..dim {
            sums[c * dim + j] += units[i * dim + j];
        }
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, &c) in labels.iter().enumerate() {
        let u = &units[i * dim..(i + 1) * dim];
        if sizes[c] == 1 {
            continue; // singleton clusters score 0
        }
        let self_dot: f64 = u.iter().map(|x| x * x).sum();
        let dot_with = |cluster: usize| -> f64 { u.iter().zip(&sums[cluster * dim..(cluster + 1) * dim]).map(|(a, b)| a * b).sum() };
        let a = ((sizes[c] - 1) as f64 - (dot_with(c) - self_dot)) / (sizes[c] - 1) as f64;
        let b = (0..k)
            .filter(|&o| o != c && sizes[o] > 0)
            .map(|o| (sizes[o] as f64 - dot_with(o)) / sizes[o] as f64)
            .fold(f64::INFINITY, f64::min);
        let (a, b) = (a.max(0.0), b.max(0.0));
        let m = a.max(b);
        if m > DEGENERATE_EPS {
            total += (b - a) / m;
        }
    }
    (total / n as f64).clamp(-1.0, 1.0)
}

/// Silhouette of the 4,096 6-mer embeddings grouped by central dinucleotide.
pub fn embedding_silhouette(k: usize, rows: &[f64], dim: usize) -> Result<f64, AnalysisError> {
    if k != 6 {
        return Err(AnalysisError::KNotSix(k));
    }
    if dim == 0 || rows.len() != 4096 * dim {
        return Err(AnalysisError::WrongRowCount { expected: 4096, found: if dim == 0 { 0 } else { rows.len() / dim } });
    }
    let s = silhouette_cosine(rows, dim, &central_dinucleotide_labels());
    if !(-1.0..=1.0).contains(&s) || !s.is_finite() {
        return Err(AnalysisError::InvariantViolated(format!("silhouette {s} outside [-1, 1]")));
    }
    Ok(s)
}

/// [`embedding_silhouette`] over a model's k-mer token embeddings.
pub fn token_embedding_silhouette<T: Scalar>(params: &ModelParams<T>, vocab: &Vocabulary) -> Result<f64, AnalysisError> {
    if vocab.k() != 6 {
        return Err(AnalysisError::KNotSix(vocab.k()));
    }
    let d = params.config.hidden_dim;
    let rows: Vec<f64> = (NUM_SPECIAL..NUM_SPECIAL + vocab.num_kmers())
        .flat_map(|id| params.token_embedding(id).iter().map(|x| x.as_f64()).collect::<Vec<_>>())
        .collect();
    embedding_silhouette(6, &rows, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn brute_force(rows: &[f64], dim: usize, labels: &[usize]) -> f64 {
        let n = labels.len();
        let dist = |i: usize, j: usize| {
            let (a, b) = (&rows[i * dim..(i + 1) * dim], &rows[j * dim..(j + 1) * dim]);
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            1.0 - dot / (na * nb)
        };
        let k = labels.iter().max().unwrap() + 1;
        let mut total = 0.0;
        for i in 0..n {
            let mut sum = vec![0.0; k];
            let mut cnt = vec![0usize; k];
            for j in (0..n).filter(|&j| j != i) {
                sum[labels[j]] += dist(i, j);
                cnt[labels[j]] += 1;
            }
            let a = sum[labels[i]] / cnt[labels[i]] as f64;
            let b = (0..k).filter(|&c| c != labels[i]).map(|c| sum[c] / cnt[c] as f64).fold(f64::INFINITY, f64::min);
            total += (b - a) / a.max(b);
        }
        total / n as f64
    }

    #[test]
    fn centroid_trick_matches_pairwise_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, dim) = (60, 5);
        let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let rows: Vec<f64> = (0..n * dim)
            .map(|i| rng.sample::<f64, _>(StandardNormal) + if i % dim == labels[i / dim] { 1.5 } else { 0.0 })
            .collect();
        let fast = silhouette_cosine(&rows, dim, &labels);
        let slow = brute_force(&rows, dim, &labels);
        assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
    }

    #[test]
    fn tight_blobs_score_high() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dim = 16;
        let labels = central_dinucleotide_labels();
        let rows: Vec<f64> = labels
            .iter()
            .flat_map(|&g| (0..dim).map(|j| if j == g { 1.0 } else { 0.0 }).collect::<Vec<_>>())
            .map(|x| x + 0.01 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        assert!(embedding_silhouette(6, &rows, dim).unwrap() > 0.9);
    }

    #[test]
    fn identical_embeddings_score_zero() {
        let rows = vec![0.3; 4096 * 4];
        assert_eq!(embedding_silhouette(6, &rows, 4).unwrap(), 0.0);
    }

    #[test]
    fn random_embeddings_are_near_zero() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<f64> = (0..4096 * 32).map(|_| rng.sample(StandardNormal)).collect();
            let s = embedding_silhouette(6, &rows, 32).unwrap();
            assert!(s.abs() < 0.05, "seed {seed}: {s}");
        }
    }

    #[test]
    fn wrong_k_rejected() {
        assert!(matches!(embedding_silhouette(5, &[], 4), Err(AnalysisError::KNotSix(5))));
        assert!(matches!(embedding_silhouette(6, &[0.0; 8], 4), Err(AnalysisError::WrongRowCount { .. })));
    }

    #[test]
    fn labels_partition_into_sixteen_groups_of_256() {
        let mut counts = [0; 16];
        for l in central_dinucleotide_labels() {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c == 256));
    }
}
