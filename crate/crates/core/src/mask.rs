//! Structured prune masks from importance scores.
//!
//! A head's query, key, value and output blocks share one importance score,
//! so a head is pruned or kept as a unit. FFN pruning removes intermediate
//! dimension `d` from both linear layers (row `d` of the first, column `d` of
//! the second), so one index set describes both.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::MaskError;
use crate::scalar::Scalar;
use crate::space::{retained_ffn, SpaceSpec, SparsityConfig};

/// Per-head block scores `[query, key, value, output]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HeadScores<T: Scalar> {
    pub blocks: Vec<[T; 4]>,
}

impl<T: Scalar> HeadScores<T> {
    pub fn num_heads(&self) -> usize {
        self.blocks.len()
    }

    /// Mean of the head's four block scores. The blocks are summed in
    /// sorted order so the result is bit-identical under any permutation.
    pub fn shared_head_score(&self, head: usize) -> Result<T, MaskError> {
        let mut b = *self
            .blocks
            .get(head)
            .ok_or(MaskError::HeadOutOfRange { head, num_heads: self.blocks.len() })?;
        b.sort_by(|x, y| x.as_f64().total_cmp(&y.as_f64()));
        Ok((b[0] + b[1] + b[2] + b[3]) / T::of(4.0))
    }

    pub fn shared_scores(&self) -> Vec<T> {
        (0..self.blocks.len()).map(|h| self.shared_head_score(h).expect("in range")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PruneMask {
    pub pruned_heads: BTreeSet<usize>,
    pub pruned_ffn_dims: BTreeSet<usize>,
}

/// Indices of the `count` lowest scores; equal scores prune the lower index first.
fn lowest<T: Scalar>(scores: &[T], count: usize) -> BTreeSet<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].as_f64().total_cmp(&scores[b].as_f64()).then(a.cmp(&b)));
    order.into_iter().take(count).collect()
}

/// Mask for one layer given candidate indices for its attention and FFN genes.
pub fn select_prune_mask_indices<T: Scalar>(
    shared_scores: &[T],
    ffn_scores: &[T],
    attn_index: u32,
    ffn_index: u32,
    spec: &SpaceSpec,
) -> Result<PruneMask, MaskError> {
    if shared_scores.len() != spec.num_heads {
        return Err(MaskError::ScoreLength { expected: spec.num_heads, got: shared_scores.len() });
    }
    if ffn_scores.len() != spec.ffn_dim {
        return Err(MaskError::ScoreLength { expected: spec.ffn_dim, got: ffn_scores.len() });
    }
    if attn_index as usize >= spec.num_heads {
        return Err(MaskError::AllHeadsPruned(attn_index as f64 / spec.num_heads as f64));
    }
    if ffn_index as usize >= spec.ffn_steps {
        return Err(crate::error::SpaceError::GeneOutOfRange { pos: 1, index: ffn_index, limit: spec.ffn_steps }.into());
    }
    let heads_pruned = attn_index as usize;
    let dims_pruned = spec.ffn_dim - retained_ffn(spec, ffn_index);
    Ok(PruneMask {
        pruned_heads: lowest(shared_scores, heads_pruned),
        pruned_ffn_dims: lowest(ffn_scores, dims_pruned),
    })
}

/// Mask for one layer at fractional sparsities `(a, f)`.
pub fn select_prune_mask<T: Scalar>(
    shared_scores: &[T],
    ffn_scores: &[T],
    (a, f): (f64, f64),
    spec: &SpaceSpec,
) -> Result<PruneMask, MaskError> {
    if a.is_finite() && (a * spec.num_heads as f64).round() >= spec.num_heads as f64 {
        return Err(MaskError::AllHeadsPruned(a));
    }
    let config = SparsityConfig::from_sparsities(
        &SpaceSpec { num_layers: 1, ..*spec },
        &[a],
        &[f],
    )?;
    select_prune_mask_indices(shared_scores, ffn_scores, config.attention_indices()[0], config.ffn_indices()[0], spec)
}

/// Per-layer mask record consumed by an external pruning job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMask {
    pub layer: usize,
    pub pruned_heads: Vec<usize>,
    pub pruned_ffn_dims: Vec<usize>,
}

/// Scores for one encoder layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LayerScores<T: Scalar> {
    pub heads: HeadScores<T>,
    pub ffn: Vec<T>,
}

/// Masks for every layer of `config`.
pub fn export_masks<T: Scalar>(
    spec: &SpaceSpec,
    config: &SparsityConfig,
    scores: &[LayerScores<T>],
) -> Result<Vec<LayerMask>, MaskError> {
    config.validate(spec)?;
    if scores.len() != spec.num_layers {
        return Err(MaskError::ScoreLength { expected: spec.num_layers, got: scores.len() });
    }
    scores
        .iter()
        .enumerate()
        .map(|(layer, s)| {
            let mask = select_prune_mask_indices(
                &s.heads.shared_scores(),
                &s.ffn,
                config.attention_indices()[layer],
                config.ffn_indices()[layer],
                spec,
            )?;
            Ok(LayerMask {
                layer,
                pruned_heads: mask.pruned_heads.into_iter().collect(),
                pruned_ffn_dims: mask.pruned_ffn_dims.into_iter().collect(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SpaceSpec {
        SpaceSpec { num_layers: 1, num_heads: 4, ffn_dim: 100, ffn_steps: 100 }
    }

    #[test]
    fn shared_score_is_block_mean() {
        let s = HeadScores { blocks: vec![[0.2, 0.1, 0.3, 0.4], [0.7; 4]] };
        assert!((s.shared_head_score(0).unwrap() - 0.25f64).abs() < 1e-15);
        assert_eq!(s.shared_head_score(1).unwrap(), 0.7);
        let p = HeadScores { blocks: vec![[0.4, 0.3, 0.1, 0.2]] };
        assert_eq!(p.shared_head_score(0).unwrap(), s.shared_head_score(0).unwrap());
        assert!(matches!(s.shared_head_score(2), Err(MaskError::HeadOutOfRange { .. })));
    }

    #[test]
    fn prunes_lowest_heads() {
        let spec = small_spec();
        let ffn = vec![1.0; 100];
        let m = select_prune_mask(&[0.9, 0.1, 0.5, 0.7], &ffn, (0.5, 0.0), &spec).unwrap();
        assert_eq!(m.pruned_heads, BTreeSet::from([1, 2]));
        assert!(m.pruned_ffn_dims.is_empty());
        let m = select_prune_mask(&[0.9, 0.1, 0.5, 0.7], &ffn, (0.0, 0.0), &spec).unwrap();
        assert!(m.pruned_heads.is_empty());
    }

    #[test]
    fn ffn_ties_prune_lower_indices() {
        let spec = small_spec();
        let m = select_prune_mask(&[1.0; 4], &vec![0.5; 100], (0.0, 0.03), &spec).unwrap();
        assert_eq!(m.pruned_ffn_dims, BTreeSet::from([0, 1, 2]));
    }

    #[test]
    fn rejects_all_heads_and_bad_lengths() {
        let spec = small_spec();
        let ffn = vec![1.0; 100];
        assert!(matches!(select_prune_mask(&[0.0; 4], &ffn, (1.0, 0.0), &spec), Err(MaskError::AllHeadsPruned(_))));
        assert!(select_prune_mask(&[0.0; 3], &ffn, (0.0, 0.0), &spec).is_err());
        assert!(select_prune_mask(&[0.0; 4], &ffn[..5], (0.0, 0.0), &spec).is_err());
        assert!(select_prune_mask(&[0.0; 4], &ffn, (0.3, 0.0), &spec).is_err());
    }

    #[test]
    fn export_covers_every_layer() {
        let spec = SpaceSpec { num_layers: 2, num_heads: 4, ffn_dim: 20, ffn_steps: 10 };
        let config = SparsityConfig::from_indices(&spec, vec![3, 1], vec![5, 0]).unwrap();
        let layer = |offset: f64| LayerScores {
            heads: HeadScores { blocks: (0..4).map(|h| [h as f64 + offset; 4]).collect() },
            ffn: (0..20).map(|d| 20.0 - d as f64).collect(),
        };
        let masks = export_masks(&spec, &config, &[layer(0.0), layer(1.0)]).unwrap();
        assert_eq!(masks[0].pruned_heads, vec![0, 1, 2]);
        assert_eq!(masks[0].pruned_ffn_dims, (10..20).collect::<Vec<_>>());
        assert_eq!(masks[1].pruned_heads, vec![0]);
        assert!(masks[1].pruned_ffn_dims.is_empty());
        let json = serde_json::to_string(&masks[1]).unwrap();
        assert_eq!(json, r#"{"layer":1,"pruned_heads":[0],"pruned_ffn_dims":[]}"#);
    }
}
