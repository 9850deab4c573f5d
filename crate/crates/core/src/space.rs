//! Layer-wise sparsity search space.
//!
//! A configuration assigns every encoder layer one attention sparsity (a
//! fraction of heads pruned) and one FFN sparsity (a fraction of intermediate
//! dimensions pruned). Genes are stored as candidate indices; the fractional
//! sparsities are a derived view.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SpaceError;

/// Shape of the sparsity search space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceSpec {
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub ffn_steps: usize,
}

impl Default for SpaceSpec {
    /// Four-layer, four-head encoder with a 1024-wide FFN and 100 FFN steps.
    fn default() -> Self {
        Self { num_layers: 4, num_heads: 4, ffn_dim: 1024, ffn_steps: 100 }
    }
}

/// Kind of sublayer a gene position controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sublayer {
    Attention,
    Ffn,
}

impl SpaceSpec {
    pub fn new(
        num_layers: usize,
        num_heads: usize,
        ffn_dim: usize,
        ffn_steps: usize,
    ) -> Result<Self, SpaceError> {
        let spec = Self { num_layers, num_heads, ffn_dim, ffn_steps };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SpaceError> {
        let fields = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("ffn_steps", self.ffn_steps),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(SpaceError::InvalidSpec(format!("{name} must be positive")));
            }
        }
        if self.ffn_steps > self.ffn_dim {
            return Err(SpaceError::InvalidSpec(format!(
                "ffn_steps ({}) exceeds ffn_dim ({})",
                self.ffn_steps, self.ffn_dim
            )));
        }
        if self.num_heads > u32::MAX as usize || self.ffn_steps > u32::MAX as usize {
            return Err(SpaceError::InvalidSpec("candidate count exceeds u32".into()));
        }
        Ok(())
    }

    /// Number of gene positions, two per layer.
    pub fn num_genes(&self) -> usize {
        2 * self.num_layers
    }

    /// Embedding vocabulary: attention tokens followed by FFN tokens.
    pub fn vocab_size(&self) -> usize {
        self.num_heads + self.ffn_steps
    }

    pub fn sublayer(&self, pos: usize) -> Sublayer {
        if pos.is_multiple_of(2) {
            Sublayer::Attention
        } else {
            Sublayer::Ffn
        }
    }

    /// Number of candidates for the gene at `pos`.
    pub fn candidates(&self, pos: usize) -> usize {
        match self.sublayer(pos) {
            Sublayer::Attention => self.num_heads,
            Sublayer::Ffn => self.ffn_steps,
        }
    }

    pub fn attention_candidates(&self) -> Vec<f64> {
        (0..self.num_heads).map(|i| i as f64 / self.num_heads as f64).collect()
    }

    pub fn ffn_candidates(&self) -> Vec<f64> {
        (0..self.ffn_steps).map(|j| j as f64 / self.ffn_steps as f64).collect()
    }

    /// `(num_heads * ffn_steps) ^ num_layers`, or an overflow error.
    pub fn space_size(&self) -> Result<u64, SpaceError> {
        let per_layer = (self.num_heads as u64)
            .checked_mul(self.ffn_steps as u64)
            .ok_or(SpaceError::Overflow)?;
        let exp = u32::try_from(self.num_layers).map_err(|_| SpaceError::Overflow)?;
        per_layer.checked_pow(exp).ok_or(SpaceError::Overflow)
    }

    /// Token for candidate `index` at gene position `pos`.
    pub fn token(&self, pos: usize, index: u32) -> usize {
        match self.sublayer(pos) {
            Sublayer::Attention => index as usize,
            Sublayer::Ffn => self.num_heads + index as usize,
        }
    }

    /// Uniform draw of every gene.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> SparsityConfig {
        let mut attention = Vec::with_capacity(self.num_layers);
        let mut ffn = Vec::with_capacity(self.num_layers);
        for _ in 0..self.num_layers {
            attention.push(rng.random_range(0..self.num_heads as u32));
            ffn.push(rng.random_range(0..self.ffn_steps as u32));
        }
        SparsityConfig { attention, ffn }
    }

    /// Every configuration, in mixed-radix order over the gene positions.
    pub fn enumerate(&self) -> Enumerate {
        Enumerate { spec: *self, next: Some(vec![0; self.num_genes()]) }
    }

    /// The configuration with no pruning.
    pub fn dense(&self) -> SparsityConfig {
        SparsityConfig { attention: vec![0; self.num_layers], ffn: vec![0; self.num_layers] }
    }

    /// The configuration with every gene at its highest sparsity.
    pub fn sparsest(&self) -> SparsityConfig {
        SparsityConfig {
            attention: vec![self.num_heads as u32 - 1; self.num_layers],
            ffn: vec![self.ffn_steps as u32 - 1; self.num_layers],
        }
    }
}

/// One genome: per-layer attention and FFN candidate indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SparsityConfig {
    attention: Vec<u32>,
    ffn: Vec<u32>,
}

impl SparsityConfig {
    /// Builds a config from candidate indices, checked against `spec`.
    pub fn from_indices(
        spec: &SpaceSpec,
        attention: Vec<u32>,
        ffn: Vec<u32>,
    ) -> Result<Self, SpaceError> {
        let config = Self { attention, ffn };
        config.validate(spec)?;
        Ok(config)
    }

    /// Builds a config from interleaved genes `[a1, f1, a2, f2, ...]`.
    pub fn from_genes(spec: &SpaceSpec, genes: &[u32]) -> Result<Self, SpaceError> {
        if genes.len() != spec.num_genes() {
            return Err(SpaceError::LengthMismatch {
                expected: spec.num_genes(),
                found: genes.len(),
            });
        }
        let attention = genes.iter().step_by(2).copied().collect();
        let ffn = genes.iter().skip(1).step_by(2).copied().collect();
        Self::from_indices(spec, attention, ffn)
    }

    /// Builds a config from fractional sparsities, which must be exact
    /// candidate values.
    pub fn from_sparsities(
        spec: &SpaceSpec,
        attention: &[f64],
        ffn: &[f64],
    ) -> Result<Self, SpaceError> {
        let to_index = |pos: usize, value: f64| {
            fraction_to_index(value, spec.candidates(pos)).ok_or({
                SpaceError::NotACandidate { pos, value }
            })
        };
        let attention = attention
            .iter()
            .enumerate()
            .map(|(i, &v)| to_index(2 * i, v))
            .collect::<Result<Vec<_>, _>>()?;
        let ffn = ffn
            .iter()
            .enumerate()
            .map(|(i, &v)| to_index(2 * i + 1, v))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_indices(spec, attention, ffn)
    }

    pub fn validate(&self, spec: &SpaceSpec) -> Result<(), SpaceError> {
        for len in [self.attention.len(), self.ffn.len()] {
            if len != spec.num_layers {
                return Err(SpaceError::LengthMismatch { expected: spec.num_layers, found: len });
            }
        }
        for pos in 0..spec.num_genes() {
            let index = self.gene(pos);
            let limit = spec.candidates(pos);
            if index as usize >= limit {
                return Err(SpaceError::GeneOutOfRange { pos, index, limit });
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.attention.len()
    }

    pub fn attention_indices(&self) -> &[u32] {
        &self.attention
    }

    pub fn ffn_indices(&self) -> &[u32] {
        &self.ffn
    }

    /// Candidate index at interleaved gene position `pos`.
    pub fn gene(&self, pos: usize) -> u32 {
        if pos.is_multiple_of(2) {
            self.attention[pos / 2]
        } else {
            self.ffn[pos / 2]
        }
    }

    /// Interleaved genes `[a1, f1, a2, f2, ...]`.
    pub fn genes(&self) -> Vec<u32> {
        self.attention.iter().zip(&self.ffn).flat_map(|(&a, &f)| [a, f]).collect()
    }

    /// Copy with the gene at `pos` replaced.
    pub fn with_gene(&self, pos: usize, index: u32) -> Self {
        let mut child = self.clone();
        if pos.is_multiple_of(2) {
            child.attention[pos / 2] = index;
        } else {
            child.ffn[pos / 2] = index;
        }
        child
    }

    pub fn attention_sparsity(&self, spec: &SpaceSpec) -> Vec<f64> {
        self.attention.iter().map(|&i| i as f64 / spec.num_heads as f64).collect()
    }

    pub fn ffn_sparsity(&self, spec: &SpaceSpec) -> Vec<f64> {
        self.ffn.iter().map(|&j| j as f64 / spec.ffn_steps as f64).collect()
    }

    /// Retained heads and FFN dimensions for `layer`.
    pub fn retained_dims(&self, spec: &SpaceSpec, layer: usize) -> Result<(usize, usize), SpaceError> {
        if layer >= spec.num_layers || layer >= self.num_layers() {
            return Err(SpaceError::LayerOutOfRange { layer, num_layers: spec.num_layers });
        }
        let heads = spec.num_heads - self.attention[layer] as usize;
        let ffn = retained_ffn(spec, self.ffn[layer]);
        Ok((heads, ffn))
    }

    /// Retained `(heads, ffn_dims)` for every layer.
    pub fn retained(&self, spec: &SpaceSpec) -> Vec<(usize, usize)> {
        (0..spec.num_layers)
            .map(|l| (spec.num_heads - self.attention[l] as usize, retained_ffn(spec, self.ffn[l])))
            .collect()
    }

    /// Embedding tokens in interleaved order.
    pub fn encode_tokens(&self, spec: &SpaceSpec) -> Result<Vec<usize>, SpaceError> {
        self.validate(spec)?;
        Ok((0..spec.num_genes()).map(|pos| spec.token(pos, self.gene(pos))).collect())
    }

    pub fn decode_tokens(spec: &SpaceSpec, tokens: &[usize]) -> Result<Self, SpaceError> {
        if tokens.len() != spec.num_genes() {
            return Err(SpaceError::LengthMismatch { expected: spec.num_genes(), found: tokens.len() });
        }
        let mut genes = Vec::with_capacity(tokens.len());
        for (pos, &tok) in tokens.iter().enumerate() {
            let index = match spec.sublayer(pos) {
                Sublayer::Attention if tok < spec.num_heads => tok,
                Sublayer::Ffn if tok >= spec.num_heads && tok < spec.vocab_size() => {
                    tok - spec.num_heads
                }
                _ => return Err(SpaceError::BadToken { pos, token: tok }),
            };
            genes.push(index as u32);
        }
        Self::from_genes(spec, &genes)
    }

    /// Flat textual record `a1,f1,a2,f2,...`.
    pub fn to_record(&self, spec: &SpaceSpec) -> String {
        (0..spec.num_genes())
            .map(|pos| format_fraction(self.gene(pos), spec.candidates(pos)))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Parses a record written by [`SparsityConfig::to_record`].
    pub fn parse_record(spec: &SpaceSpec, record: &str) -> Result<Self, SpaceError> {
        let fields: Vec<&str> = record.trim().split(',').map(str::trim).collect();
        parse_gene_fields(spec, &fields)
    }
}

/// Parses interleaved fractional gene fields.
pub(crate) fn parse_gene_fields(spec: &SpaceSpec, fields: &[&str]) -> Result<SparsityConfig, SpaceError> {
    if fields.len() != spec.num_genes() {
        return Err(SpaceError::LengthMismatch { expected: spec.num_genes(), found: fields.len() });
    }
    let mut genes = Vec::with_capacity(fields.len());
    for (pos, field) in fields.iter().enumerate() {
        let value = f64::from_str(field)
            .map_err(|_| SpaceError::Parse(format!("gene {pos}: `{field}` is not a number")))?;
        let index = fraction_to_index(value, spec.candidates(pos))
            .ok_or(SpaceError::NotACandidate { pos, value })?;
        genes.push(index);
    }
    SparsityConfig::from_genes(spec, &genes)
}

/// Wrapper that prints a config as its flat record.
pub struct Record<'a>(pub &'a SpaceSpec, pub &'a SparsityConfig);

impl fmt::Display for Record<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.1.to_record(self.0))
    }
}

/// Retained FFN width for candidate `index`: `round((1 - j/steps) * F)`
/// with ties to even, floored at 1. Integer arithmetic throughout.
pub fn retained_ffn(spec: &SpaceSpec, index: u32) -> usize {
    let steps = spec.ffn_steps as u128;
    let num = (steps - index as u128) * spec.ffn_dim as u128;
    let (q, r) = (num / steps, num % steps);
    let rounded = match (2 * r).cmp(&steps) {
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
        std::cmp::Ordering::Less => q,
    };
    rounded.max(1) as usize
}

fn fraction_to_index(value: f64, denom: usize) -> Option<u32> {
    if !value.is_finite() || value < 0.0 {
        return None;
    }
    let scaled = value * denom as f64;
    let index = scaled.round();
    if index >= denom as f64 || (index / denom as f64 - value).abs() > 1e-9 {
        return None;
    }
    Some(index as u32)
}

fn format_fraction(index: u32, denom: usize) -> String {
    // Shortest round-trip decimal; exact for denominators of the form 2^a 5^b.
    format!("{}", index as f64 / denom as f64)
}

/// Iterator over every configuration of a space.
pub struct Enumerate {
    spec: SpaceSpec,
    next: Option<Vec<u32>>,
}

impl Iterator for Enumerate {
    type Item = SparsityConfig;

    fn next(&mut self) -> Option<Self::Item> {
        let genes = self.next.take()?;
        let config = SparsityConfig::from_genes(&self.spec, &genes).ok()?;
        let mut succ = genes;
        for pos in (0..succ.len()).rev() {
            succ[pos] += 1;
            if (succ[pos] as usize) < self.spec.candidates(pos) {
                self.next = Some(succ);
                break;
            }
            succ[pos] = 0;
        }
        Some(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(l: usize, h: usize, s: usize) -> SpaceSpec {
        SpaceSpec::new(l, h, 1024, s).unwrap()
    }

    #[test]
    fn space_size_examples() {
        assert_eq!(SpaceSpec::default().space_size().unwrap(), 25_600_000_000);
        assert_eq!(spec(1, 4, 100).space_size().unwrap(), 400);
        assert_eq!(spec(2, 2, 4).space_size().unwrap(), 64);
    }

    #[test]
    fn space_size_overflow_is_reported() {
        let big = SpaceSpec { num_layers: 40, num_heads: 16, ffn_dim: 4096, ffn_steps: 1000 };
        assert!(matches!(big.space_size(), Err(SpaceError::Overflow)));
    }

    #[test]
    fn space_size_matches_enumeration() {
        for (l, h, s) in [(1, 4, 100), (2, 2, 4), (3, 3, 5), (2, 4, 10), (1, 1, 1)] {
            let sp = spec(l, h, s);
            assert_eq!(sp.enumerate().count() as u64, sp.space_size().unwrap());
        }
    }

    #[test]
    fn retained_dims_examples() {
        let sp = SpaceSpec::default();
        let c = SparsityConfig::from_sparsities(&sp, &[0.75, 0.0, 0.0, 0.0], &[0.0, 0.99, 0.5, 0.0])
            .unwrap();
        assert_eq!(c.retained_dims(&sp, 0).unwrap(), (1, 1024));
        assert_eq!(c.retained_dims(&sp, 1).unwrap(), (4, 10));
        assert_eq!(c.retained_dims(&sp, 2).unwrap(), (4, 512));
        assert!(matches!(c.retained_dims(&sp, 4), Err(SpaceError::LayerOutOfRange { .. })));
    }

    #[test]
    fn retained_ffn_rounds_half_to_even_and_floors_at_one() {
        // 1024 * 3 / 8 = 384 exactly; 10 * 1 / 4 = 2.5 -> 2; 10 * 3 / 4 = 7.5 -> 8
        let sp = SpaceSpec::new(1, 1, 1024, 8).unwrap();
        assert_eq!(retained_ffn(&sp, 5), 384);
        let sp = SpaceSpec::new(1, 1, 10, 4).unwrap();
        assert_eq!(retained_ffn(&sp, 3), 2);
        assert_eq!(retained_ffn(&sp, 1), 8);
        let sp = SpaceSpec::new(1, 1, 3, 3).unwrap();
        assert_eq!(retained_ffn(&sp, 2), 1);
    }

    #[test]
    fn token_examples() {
        let sp = SpaceSpec::default();
        let c = SparsityConfig::from_sparsities(&sp, &[0.25, 0.0, 0.5, 0.75], &[0.37, 0.0, 0.99, 0.1])
            .unwrap();
        let tokens = c.encode_tokens(&sp).unwrap();
        assert_eq!(tokens, vec![1, 41, 0, 4, 2, 103, 3, 14]);
        assert_eq!(SparsityConfig::decode_tokens(&sp, &tokens).unwrap(), c);
    }

    #[test]
    fn bad_tokens_are_rejected() {
        let sp = SpaceSpec::default();
        assert!(SparsityConfig::decode_tokens(&sp, &[4, 4, 0, 4, 0, 4, 0, 4]).is_err());
        assert!(SparsityConfig::decode_tokens(&sp, &[0, 104, 0, 4, 0, 4, 0, 4]).is_err());
        assert!(SparsityConfig::decode_tokens(&sp, &[0, 4]).is_err());
    }

    #[test]
    fn non_candidates_are_rejected() {
        let sp = SpaceSpec::default();
        assert!(SparsityConfig::from_sparsities(&sp, &[0.3, 0.0, 0.0, 0.0], &[0.0; 4]).is_err());
        assert!(SparsityConfig::from_sparsities(&sp, &[1.0, 0.0, 0.0, 0.0], &[0.0; 4]).is_err());
        assert!(SparsityConfig::from_sparsities(&sp, &[0.0; 4], &[0.375, 0.0, 0.0, 0.0]).is_err());
        assert!(SparsityConfig::from_indices(&sp, vec![0; 4], vec![100, 0, 0, 0]).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let sp = SpaceSpec::default();
        let a = sp.sample_uniform(&mut ChaCha8Rng::seed_from_u64(11));
        let b = sp.sample_uniform(&mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_attention_gene_is_uniform() {
        let sp = SpaceSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 4];
        let n = 10_000;
        for _ in 0..n {
            counts[sp.sample_uniform(&mut rng).attention_indices()[0] as usize] += 1;
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((0.22..=0.28).contains(&freq), "frequency {freq}");
        }
    }

    #[test]
    fn degenerate_space_has_one_config() {
        let sp = SpaceSpec::new(3, 1, 8, 1).unwrap();
        let c = sp.sample_uniform(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(c, sp.dense());
        assert_eq!(sp.enumerate().count(), 1);
    }

    #[test]
    fn record_format() {
        let sp = SpaceSpec::default();
        let c = SparsityConfig::from_sparsities(&sp, &[0.25, 0.0, 0.5, 0.75], &[0.37, 0.0, 0.99, 0.1])
            .unwrap();
        assert_eq!(c.to_record(&sp), "0.25,0.37,0,0,0.5,0.99,0.75,0.1");
        assert_eq!(SparsityConfig::parse_record(&sp, &c.to_record(&sp)).unwrap(), c);
        assert!(SparsityConfig::parse_record(&sp, "0.25,0.37").is_err());
        assert!(SparsityConfig::parse_record(&sp, "x,0,0,0,0,0,0,0").is_err());
    }

    #[test]
    fn invalid_specs() {
        assert!(SpaceSpec::new(0, 4, 1024, 100).is_err());
        assert!(SpaceSpec::new(4, 0, 1024, 100).is_err());
        assert!(SpaceSpec::new(4, 4, 10, 100).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn encode_decode_round_trip(seed in any::<u64>()) {
                let sp = SpaceSpec::default();
                let c = sp.sample_uniform(&mut ChaCha8Rng::seed_from_u64(seed));
                let tokens = c.encode_tokens(&sp).unwrap();
                prop_assert_eq!(SparsityConfig::decode_tokens(&sp, &tokens).unwrap(), c.clone());
                prop_assert_eq!(SparsityConfig::parse_record(&sp, &c.to_record(&sp)).unwrap(), c);
            }
        }
    }

    #[test]
    fn sampled_configs_satisfy_invariants() {
        let sp = SpaceSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10_000 {
            let c = sp.sample_uniform(&mut rng);
            c.validate(&sp).unwrap();
            for (heads, ffn) in c.retained(&sp) {
                assert!(heads >= 1 && heads <= sp.num_heads);
                assert!(ffn >= 1 && ffn <= sp.ffn_dim);
            }
        }
    }
}
