//! Binary cross-entropy and contrastive losses.

use crate::mining::{CrossBatchMemory, MinedPair, Partner};
use crate::nn::embedding::euclidean;
use crate::nn::verification::BCE_EPS;

/// −[y ln p + (1−y) ln(1−p)] with `p` clamped into `[ε, 1−ε]`.
pub fn bce_loss(p: f64, y: u8) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Mean BCE over `(score, label)` pairs; 0 for an empty batch.
pub fn bce_batch(batch: &[(f64, u8)]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch.iter().map(|&(p, y)| bce_loss(p, y)).sum::<f64>() / batch.len() as f64
}

/// ½·[y·d² + (1−y)·max(0, m−d)²] for a distance `d`.
pub fn contrastive_loss(d: f64, y: u8, margin: f64) -> f64 {
    if y == 1 {
        0.5 * d * d
    } else {
        let gap = (margin - d).max(0.0);
        0.5 * gap * gap
    }
}

/// Mean contrastive loss over mined pairs and its gradient w.r.t. every
/// batch embedding. Memory embeddings are constants.
pub fn contrastive_batch(
    batch: &[Vec<f64>],
    memory: &CrossBatchMemory,
    pairs: &[MinedPair],
    margin: f64,
) -> (f64, Vec<Vec<f64>>) {
    let dim = batch.first().map_or(0, Vec::len);
    let mut grads = vec![vec![0.0; dim]; batch.len()];
    if pairs.is_empty() {
        return (0.0, grads);
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    for pair in pairs {
        let a = &batch[pair.anchor];
        let b: &[f64] = match pair.partner {
            Partner::Batch(j) => &batch[j],
            Partner::Memory(k) => memory.get(k).expect("mined memory index").embedding.values(),
        };
        let d = euclidean(a, b);
        let y = pair.same_patient as u8;
        total += contrastive_loss(d, y, margin);
        // ∂ℓ/∂a = coef·(a − b).
        let coef = if y == 1 {
            1.0
        } else if d > 0.0 && d < margin {
            -(margin - d) / d
        } else {
            0.0
        };
        if coef == 0.0 {
            continue;
        }
        let coef = coef * scale;
        for (g, (x, z)) in grads[pair.anchor].iter_mut().zip(a.iter().zip(b)) {
            *g += coef * (x - z);
        }
        if let Partner::Batch(j) = pair.partner {
            for (g, (x, z)) in grads[j].iter_mut().zip(a.iter().zip(b)) {
                *g -= coef * (x - z);
            }
        }
    }
    (total * scale, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mining::enumerate_batch_pairs;
    use crate::nn::Embedding;
    use crate::rng::rng_for;
    use rand::Rng as _;

    #[test]
    fn bce_reference_values() {
        assert!(bce_loss(1.0 - 1e-12, 1) < 1e-11);
        assert!((bce_loss(0.5, 1) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(0.5, 0) - 0.693147).abs() < 1e-6);
        assert!(bce_loss(0.0, 1).is_finite());
    }

    #[test]
    fn bce_batch_matches_scalar_recomputation() {
        let mut rng = rng_for(4, &[]);
        let batch: Vec<(f64, u8)> = (0..257).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0..2u8))).collect();
        let mut acc = 0.0;
        for &(p, y) in &batch {
            let p = p.max(1e-12).min(1.0 - 1e-12);
            acc += if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
        }
        assert!((bce_batch(&batch) - acc / 257.0).abs() < 1e-9);
    }

    #[test]
    fn contrastive_reference_values() {
        assert_eq!(contrastive_loss(0.0, 1, 1.0), 0.0);
        assert_eq!(contrastive_loss(1.0, 0, 1.0), 0.0);
        assert_eq!(contrastive_loss(3.5, 0, 1.0), 0.0);
        assert!((contrastive_loss(0.5, 0, 1.0) - 0.125).abs() < 1e-15);
        assert!((contrastive_loss(0.5, 1, 1.0) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let mut rng = rng_for(8, &[]);
        let dim = crate::EMBEDDING_DIM;
        let vec = |rng: &mut crate::rng::Rng| (0..dim).map(|_| rng.random_range(-0.06..0.06)).collect::<Vec<f64>>();
        let batch: Vec<Vec<f64>> = (0..6).map(|_| vec(&mut rng)).collect();
        let ids = ["a", "b", "a", "c", "b", "d"];
        let mut memory = CrossBatchMemory::new(4);
        memory.push(
            (0..4).map(|i| (Embedding::new(vec(&mut rng)).unwrap(), ["a", "c", "e", "d"][i].to_owned())),
            0,
        );
        let tagged: Vec<(Embedding, String)> = batch
            .iter()
            .zip(ids)
            .map(|(v, p)| (Embedding::new(v.clone()).unwrap(), p.to_owned()))
            .collect();
        let pairs = enumerate_batch_pairs(&tagged, &memory);
        let (_, grads) = contrastive_batch(&batch, &memory, &pairs, 1.0);
        let h = 1e-6;
        for i in 0..batch.len() {
            for k in (0..dim).step_by(17) {
                let mut bp = batch.clone();
                bp[i][k] += h;
                let mut bm = batch.clone();
                bm[i][k] -= h;
                let fd = (contrastive_batch(&bp, &memory, &pairs, 1.0).0 - contrastive_batch(&bm, &memory, &pairs, 1.0).0)
                    / (2.0 * h);
                assert!((fd - grads[i][k]).abs() < 1e-8, "{fd} vs {}", grads[i][k]);
            }
        }
    }
}
