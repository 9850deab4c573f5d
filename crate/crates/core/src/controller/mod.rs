//! Reinforced mutator: a two-stage recurrent policy choosing which gene of a
//! parent to mutate and the new candidate for it, trained online with
//! REINFORCE and Adam.

mod lstm;
mod network;

pub use network::{Layout, NetDims};

use log::warn;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::ControllerError;
use crate::scalar::Scalar;
use crate::space::{SpaceSpec, SparsityConfig};
use network::{softmax, Net, Stage1, Stage2};

const CHECKPOINT_FORMAT: &str = "sparsity-mutator";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub embed_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// EMA decay of the reward baseline.
    pub baseline_decay: f64,
    /// Parameters start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    /// Exclude the gene's current value from the stage-2 distribution.
    pub resample_until_different: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            encoder_hidden: 100,
            decoder_hidden: 100,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            baseline_decay: 0.95,
            init_scale: 0.1,
            resample_until_different: false,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |m: &str| Err(ControllerError::BadDims(m.to_string()));
        if self.embed_dim == 0 || self.encoder_hidden == 0 || self.decoder_hidden == 0 {
            return bad("widths must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return bad("baseline_decay must lie in [0, 1)");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be nonnegative");
        }
        Ok(())
    }
}

/// One sampled mutation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationAction<T> {
    /// Interleaved gene position `[a1, f1, a2, f2, ...]`.
    pub layer_pos: usize,
    pub new_sparsity_index: u32,
    /// `log p(layer_pos) + log p(new_sparsity_index | layer_pos)`.
    pub log_prob: T,
}

/// Replaces one gene of `parent`.
pub fn apply_mutation<T>(
    spec: &SpaceSpec,
    parent: &SparsityConfig,
    action: &MutationAction<T>,
) -> Result<SparsityConfig, ControllerError> {
    if action.layer_pos >= spec.num_genes() {
        return Err(ControllerError::BadAction(format!(
            "position {} out of range for {} genes",
            action.layer_pos,
            spec.num_genes()
        )));
    }
    if action.new_sparsity_index as usize >= spec.candidates(action.layer_pos) {
        return Err(ControllerError::BadAction(format!(
            "candidate {} out of range for a {:?} gene",
            action.new_sparsity_index,
            spec.sublayer(action.layer_pos)
        )));
    }
    parent.validate(spec)?;
    Ok(parent.with_gene(action.layer_pos, action.new_sparsity_index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
struct AdamState<T: Scalar> {
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

/// Outcome of one REINFORCE update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats<T> {
    pub advantage: T,
    pub baseline: T,
    pub grad_norm: T,
    /// The step was skipped because the gradient was not finite.
    pub skipped: bool,
}

/// All trainable state of the mutator plus its optimizer and baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MutatorNet<T: Scalar> {
    format: String,
    version: u32,
    spec: SpaceSpec,
    config: ControllerConfig,
    dims: NetDims,
    params: Vec<T>,
    adam: AdamState<T>,
    baseline: Option<T>,
    #[serde(skip)]
    layout: Option<Layout>,
}

impl<T: Scalar> MutatorNet<T> {
    pub fn new<R: Rng + ?Sized>(spec: &SpaceSpec, config: ControllerConfig, rng: &mut R) -> Result<Self, ControllerError> {
        spec.validate()?;
        config.validate()?;
        let dims = NetDims::new(spec, config.embed_dim, config.encoder_hidden, config.decoder_hidden);
        let layout = Layout::new(&dims);
        let scale = config.init_scale;
        let params = (0..layout.total)
            .map(|_| if scale > 0.0 { T::of(rng.random_range(-scale..=scale)) } else { T::zero() })
            .collect();
        Ok(Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: *spec,
            config,
            dims,
            adam: AdamState { m: vec![T::zero(); layout.total], v: vec![T::zero(); layout.total], step: 0 },
            params,
            baseline: None,
            layout: Some(layout),
        })
    }

    pub fn spec(&self) -> &SpaceSpec {
        &self.spec
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        self.layout.as_ref().expect("layout is rebuilt on construction and load")
    }

    pub fn parameters(&self) -> &[T] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn baseline(&self) -> Option<T> {
        self.baseline
    }

    pub fn optimizer_step(&self) -> u64 {
        self.adam.step
    }

    fn net(&self) -> Net<'_, T> {
        Net { dims: &self.dims, layout: self.layout(), params: &self.params }
    }

    fn tokens(&self, parent: &SparsityConfig) -> Result<Vec<usize>, ControllerError> {
        Ok(parent.encode_tokens(&self.spec)?)
    }

    fn excluded(&self, parent: &SparsityConfig, pos: usize) -> Option<usize> {
        (self.config.resample_until_different && self.spec.candidates(pos) > 1).then(|| parent.gene(pos) as usize)
    }

    fn check_finite(&self, stage: &'static str, logits: &[T]) -> Result<(), ControllerError> {
        if logits.iter().all(|v| v.is_finite()) {
            return Ok(());
        }
        let dump = self
            .layout()
            .groups()
            .into_iter()
            .map(|(name, r)| {
                let sq = self.params[r].iter().fold(0.0, |a, v| a + v.as_f64() * v.as_f64());
                format!("{name}: |w|={:.4e}", sq.sqrt())
            })
            .collect::<Vec<_>>()
            .join(", ");
        Err(ControllerError::NonFinite { stage, dump })
    }

    /// Stage-1 distribution over gene positions for `parent`.
    pub fn layer_distribution(&self, parent: &SparsityConfig) -> Result<Vec<T>, ControllerError> {
        let s1 = self.net().stage1(&self.tokens(parent)?);
        self.check_finite("stage 1", &s1.logits)?;
        Ok(softmax(&s1.logits, None))
    }

    /// Stage-2 distribution over candidates for gene `pos` of `parent`.
    pub fn sparsity_distribution(&self, parent: &SparsityConfig, pos: usize) -> Result<Vec<T>, ControllerError> {
        let tokens = self.tokens(parent)?;
        if pos >= tokens.len() {
            return Err(ControllerError::BadAction(format!("position {pos} out of range")));
        }
        let s2 = self.net().stage2(pos, tokens[pos], self.spec.sublayer(pos));
        self.check_finite("stage 2", &s2.logits)?;
        Ok(softmax(&s2.logits, self.excluded(parent, pos)))
    }

    /// Samples a gene position, then a new candidate for it.
    pub fn forward_sample<R: Rng + ?Sized>(
        &self,
        parent: &SparsityConfig,
        rng: &mut R,
    ) -> Result<MutationAction<T>, ControllerError> {
        self.policy(parent)?.sample(rng)
    }

    /// Mutation policy for `parent`. Repeated draws reuse the encoder pass
    /// and each position's decoder pass.
    pub fn policy(&self, parent: &SparsityConfig) -> Result<Policy<'_, T>, ControllerError> {
        let tokens = self.tokens(parent)?;
        let s1 = self.net().stage1(&tokens);
        self.check_finite("stage 1", &s1.logits)?;
        Ok(Policy {
            net: self,
            layer: softmax(&s1.logits, None),
            sparsity: vec![None; tokens.len()],
            parent: parent.clone(),
            tokens,
        })
    }

    fn traces(
        &self,
        parent: &SparsityConfig,
        action: &MutationAction<T>,
    ) -> Result<(Stage1<T>, Stage2<T>, Vec<T>, Vec<T>), ControllerError> {
        let tokens = self.tokens(parent)?;
        if action.layer_pos >= tokens.len()
            || action.new_sparsity_index as usize >= self.spec.candidates(action.layer_pos)
        {
            return Err(ControllerError::BadAction(format!("{action:?} does not fit the search space")));
        }
        let net = self.net();
        let s1 = net.stage1(&tokens);
        self.check_finite("stage 1", &s1.logits)?;
        let pos = action.layer_pos;
        let s2 = net.stage2(pos, tokens[pos], self.spec.sublayer(pos));
        self.check_finite("stage 2", &s2.logits)?;
        let p1 = softmax(&s1.logits, None);
        let p2 = softmax(&s2.logits, self.excluded(parent, pos));
        Ok((s1, s2, p1, p2))
    }

    /// Recomputed log-probability of `action` under the current parameters.
    pub fn log_prob(&self, parent: &SparsityConfig, action: &MutationAction<T>) -> Result<T, ControllerError> {
        let (_, _, p1, p2) = self.traces(parent, action)?;
        Ok(p1[action.layer_pos].ln() + p2[action.new_sparsity_index as usize].ln())
    }

    /// `log p(action | parent)` and its gradient with respect to every parameter.
    pub fn log_prob_gradient(
        &self,
        parent: &SparsityConfig,
        action: &MutationAction<T>,
    ) -> Result<(T, Vec<T>), ControllerError> {
        let (s1, s2, p1, p2) = self.traces(parent, action)?;
        let idx = action.new_sparsity_index as usize;
        // d log softmax_k / d logits = onehot(k) - p
        let dl1: Vec<T> = p1
            .iter()
            .enumerate()
            .map(|(i, &p)| if i == action.layer_pos { T::one() - p } else { -p })
            .collect();
        let dl2: Vec<T> =
            p2.iter().enumerate().map(|(i, &p)| if i == idx { T::one() - p } else { -p }).collect();
        let mut grad = vec![T::zero(); self.params.len()];
        self.net().backward(&s1, &s2, &dl1, &dl2, &mut grad);
        Ok((p1[action.layer_pos].ln() + p2[idx].ln(), grad))
    }

    /// One REINFORCE step on `advantage * log p(action | parent)` with the
    /// EMA reward baseline, followed by the baseline update.
    pub fn reinforce_update(
        &mut self,
        parent: &SparsityConfig,
        action: &MutationAction<T>,
        reward: T,
    ) -> Result<UpdateStats<T>, ControllerError> {
        let baseline = self.baseline.unwrap_or(reward);
        let advantage = reward - baseline;
        let decay = T::of(self.config.baseline_decay);
        self.adam.step += 1;
        let mut stats = UpdateStats { advantage, baseline, grad_norm: T::zero(), skipped: false };
        if advantage != T::zero() {
            let (_, mut grad) = self.log_prob_gradient(parent, action)?;
            grad.iter_mut().for_each(|g| *g *= advantage);
            let norm = grad.iter().fold(T::zero(), |a, &g| a + g * g).sqrt();
            stats.grad_norm = norm;
            if norm.is_finite() {
                self.adam_ascent(&grad);
            } else {
                warn!("non-finite mutator gradient at step {}; update skipped", self.adam.step);
                stats.skipped = true;
            }
        }
        self.baseline = Some(decay * baseline + (T::one() - decay) * reward);
        stats.baseline = self.baseline.expect("just set");
        Ok(stats)
    }

    fn adam_ascent(&mut self, grad: &[T]) {
        let c = &self.config;
        let (b1, b2) = (T::of(c.adam_beta1), T::of(c.adam_beta2));
        let (lr, eps) = (T::of(c.learning_rate), T::of(c.adam_eps));
        let t = self.adam.step as i32;
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        for (k, &g) in grad.iter().enumerate() {
            let m = b1 * self.adam.m[k] + (T::one() - b1) * g;
            let v = b2 * self.adam.v[k] + (T::one() - b2) * g * g;
            self.adam.m[k] = m;
            self.adam.v[k] = v;
            self.params[k] += lr * (m / bc1) / ((v / bc2).sqrt() + eps);
        }
    }

    pub fn to_json(&self) -> Result<String, ControllerError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ControllerError> {
        let mut net: Self = serde_json::from_str(text)?;
        if net.format != CHECKPOINT_FORMAT || net.version != CHECKPOINT_VERSION {
            return Err(ControllerError::Checkpoint(format!(
                "unsupported format `{}` version {}",
                net.format, net.version
            )));
        }
        net.spec.validate()?;
        net.config.validate()?;
        let layout = Layout::new(&net.dims);
        if net.dims != NetDims::new(&net.spec, net.config.embed_dim, net.config.encoder_hidden, net.config.decoder_hidden)
            || net.params.len() != layout.total
            || net.adam.m.len() != layout.total
            || net.adam.v.len() != layout.total
        {
            return Err(ControllerError::Checkpoint("parameter count does not match dimensions".into()));
        }
        if !net.params.iter().all(|v| v.is_finite()) {
            return Err(ControllerError::Checkpoint("non-finite parameter".into()));
        }
        net.layout = Some(layout);
        Ok(net)
    }
}

/// Sampling distributions of the mutator for one fixed parent.
pub struct Policy<'n, T: Scalar> {
    net: &'n MutatorNet<T>,
    parent: SparsityConfig,
    tokens: Vec<usize>,
    layer: Vec<T>,
    sparsity: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Policy<'_, T> {
    pub fn layer_distribution(&self) -> &[T] {
        &self.layer
    }

    pub fn sparsity_distribution(&mut self, pos: usize) -> Result<&[T], ControllerError> {
        if self.sparsity[pos].is_none() {
            let net = self.net;
            let s2 = net.net().stage2(pos, self.tokens[pos], net.spec.sublayer(pos));
            net.check_finite("stage 2", &s2.logits)?;
            self.sparsity[pos] = Some(softmax(&s2.logits, net.excluded(&self.parent, pos)));
        }
        Ok(self.sparsity[pos].as_deref().expect("filled above"))
    }

    /// Two uniform draws: position, then candidate.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<MutationAction<T>, ControllerError> {
        let pos = sample_categorical(&self.layer, rng);
        let p_pos = self.layer[pos];
        let probs = self.sparsity_distribution(pos)?;
        let index = sample_categorical(probs, rng);
        Ok(MutationAction { layer_pos: pos, new_sparsity_index: index as u32, log_prob: p_pos.ln() + probs[index].ln() })
    }
}

/// Inverse-CDF draw; one uniform variate per call.
pub(crate) fn sample_categorical<T: Scalar, R: Rng + ?Sized>(probs: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        let p = p.as_f64();
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Mutator that ignores learning: uniform position, uniform candidate.
pub fn random_mutate<R: Rng + ?Sized>(
    spec: &SpaceSpec,
    parent: &SparsityConfig,
    resample_until_different: bool,
    rng: &mut R,
) -> SparsityConfig {
    let pos = rng.random_range(0..spec.num_genes());
    let n = spec.candidates(pos) as u32;
    let current = parent.gene(pos);
    let index = if resample_until_different && n > 1 {
        // Uniform over the other n-1 candidates.
        let k = rng.random_range(0..n - 1);
        if k >= current { k + 1 } else { k }
    } else {
        rng.random_range(0..n)
    };
    parent.with_gene(pos, index)
}

/// Fully random draw shared by rejection sampling and random search.
pub fn random_config(spec: &SpaceSpec, rng: &mut dyn RngCore) -> SparsityConfig {
    spec.sample_uniform(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> (SpaceSpec, ControllerConfig) {
        let cfg = ControllerConfig { embed_dim: 8, encoder_hidden: 8, decoder_hidden: 8, ..Default::default() };
        (SpaceSpec::default(), cfg)
    }

    #[test]
    fn zero_output_heads_give_uniform_layer_distribution() {
        let (spec, cfg) = small();
        let mut net = MutatorNet::<f64>::new(&spec, cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (w, b) = (net.layout().layer_head_w.clone(), net.layout().layer_head_b.clone());
        net.parameters_mut()[w].fill(0.0);
        net.parameters_mut()[b].fill(0.0);
        let parent = spec.sample_uniform(&mut ChaCha8Rng::seed_from_u64(1));
        let p = net.layer_distribution(&parent).unwrap();
        assert!(p.iter().all(|&v| v == 0.125));
    }

    #[test]
    fn sampled_candidate_respects_sublayer() {
        let (spec, cfg) = small();
        let net = MutatorNet::<f64>::new(&spec, cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..300 {
            let parent = spec.sample_uniform(&mut rng);
            let a = net.forward_sample(&parent, &mut rng).unwrap();
            assert!((a.new_sparsity_index as usize) < spec.candidates(a.layer_pos));
            if a.layer_pos.is_multiple_of(2) {
                assert!(a.new_sparsity_index < 4);
            }
            let recomputed = net.log_prob(&parent, &a).unwrap();
            assert!((recomputed - a.log_prob).abs() <= 1e-9);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let (spec, cfg) = small();
        let net = MutatorNet::<f64>::new(&spec, cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let parent = spec.dense();
        let a = net.forward_sample(&parent, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = net.forward_sample(&parent, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distributions_are_normalized() {
        let (spec, cfg) = small();
        let net = MutatorNet::<f64>::new(&spec, cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let parent = spec.sample_uniform(&mut rng);
            let p = net.layer_distribution(&parent).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9 && p.iter().all(|&v| v >= 0.0));
            for pos in 0..spec.num_genes() {
                let q = net.sparsity_distribution(&parent, pos).unwrap();
                assert_eq!(q.len(), spec.candidates(pos));
                assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-9 && q.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn zero_advantage_only_advances_step_count() {
        let (spec, cfg) = small();
        let mut net = MutatorNet::<f64>::new(&spec, cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let parent = spec.sample_uniform(&mut rng);
        let a = net.forward_sample(&parent, &mut rng).unwrap();
        // First reward seeds the baseline, so the advantage is zero.
        let before = net.parameters().to_vec();
        let stats = net.reinforce_update(&parent, &a, 0.7).unwrap();
        assert_eq!(stats.advantage, 0.0);
        assert_eq!(net.parameters(), &before[..]);
        assert_eq!(net.optimizer_step(), 1);
        // Equal reward again: baseline already equals it.
        net.reinforce_update(&parent, &a, 0.7).unwrap();
        assert_eq!(net.parameters(), &before[..]);
        assert_eq!(net.optimizer_step(), 2);
        assert_eq!(net.baseline(), Some(0.7));
    }

    #[test]
    fn positive_advantage_raises_action_probability() {
        let (spec, cfg) = small();
        let mut net = MutatorNet::<f64>::new(&spec, cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let parent = spec.sample_uniform(&mut rng);
        let a = net.forward_sample(&parent, &mut rng).unwrap();
        net.reinforce_update(&parent, &a, 0.5).unwrap();
        let before = net.log_prob(&parent, &a).unwrap();
        let stats = net.reinforce_update(&parent, &a, 0.9).unwrap();
        assert!(stats.advantage > 0.0);
        let after = net.log_prob(&parent, &a).unwrap();
        assert!(after > before, "{before} -> {after}");
    }

    #[test]
    fn baseline_is_an_ema() {
        let (spec, cfg) = small();
        let mut net = MutatorNet::<f64>::new(&spec, cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let parent = spec.dense();
        let a = net.forward_sample(&parent, &mut rng).unwrap();
        net.reinforce_update(&parent, &a, 1.0).unwrap();
        let s = net.reinforce_update(&parent, &a, 0.0).unwrap();
        assert_eq!(s.advantage, -1.0);
        assert!((net.baseline().unwrap() - 0.95).abs() < 1e-15);
    }

    #[test]
    fn apply_mutation_edits_one_gene() {
        let spec = SpaceSpec::default();
        let parent = spec.sample_uniform(&mut ChaCha8Rng::seed_from_u64(3));
        let action = MutationAction { layer_pos: 5, new_sparsity_index: 80, log_prob: 0.0 };
        let child = apply_mutation(&spec, &parent, &action).unwrap();
        assert_eq!(child.ffn_sparsity(&spec)[2], 0.8);
        for pos in (0..8).filter(|&p| p != 5) {
            assert_eq!(child.gene(pos), parent.gene(pos));
        }
        let same = MutationAction { layer_pos: 2, new_sparsity_index: parent.gene(2), log_prob: 0.0 };
        assert_eq!(apply_mutation(&spec, &parent, &same).unwrap(), parent);
        let bad = MutationAction { layer_pos: 0, new_sparsity_index: 4, log_prob: 0.0 };
        assert!(apply_mutation(&spec, &parent, &bad).is_err());
        let bad = MutationAction { layer_pos: 8, new_sparsity_index: 0, log_prob: 0.0 };
        assert!(apply_mutation(&spec, &parent, &bad).is_err());
    }

    #[test]
    fn disjoint_mutations_commute() {
        let spec = SpaceSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let parent = spec.sample_uniform(&mut rng);
            let p = rng.random_range(0..8);
            let q = (p + rng.random_range(1..8)) % 8;
            let a = MutationAction { layer_pos: p, new_sparsity_index: rng.random_range(0..spec.candidates(p) as u32), log_prob: 0.0 };
            let b = MutationAction { layer_pos: q, new_sparsity_index: rng.random_range(0..spec.candidates(q) as u32), log_prob: 0.0 };
            let ab = apply_mutation(&spec, &apply_mutation(&spec, &parent, &a).unwrap(), &b).unwrap();
            let ba = apply_mutation(&spec, &apply_mutation(&spec, &parent, &b).unwrap(), &a).unwrap();
            assert_eq!(ab, ba);
        }
    }

    #[test]
    fn resample_flag_never_keeps_current_value() {
        let (spec, mut cfg) = small();
        cfg.resample_until_different = true;
        let net = MutatorNet::<f64>::new(&spec, cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..300 {
            let parent = spec.sample_uniform(&mut rng);
            let a = net.forward_sample(&parent, &mut rng).unwrap();
            assert_ne!(a.new_sparsity_index, parent.gene(a.layer_pos));
            assert_ne!(random_mutate(&spec, &parent, true, &mut rng), parent);
        }
    }

    #[test]
    fn random_mutation_changes_at_most_one_gene() {
        let spec = SpaceSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 8];
        let n = 10_000;
        for _ in 0..n {
            let parent = spec.sample_uniform(&mut rng);
            let child = random_mutate(&spec, &parent, false, &mut rng);
            let diff: Vec<usize> = (0..8).filter(|&p| child.gene(p) != parent.gene(p)).collect();
            assert!(diff.len() <= 1);
        }
        // Position frequencies, measured with a parent the child must differ from.
        for _ in 0..n {
            let parent = spec.dense();
            let child = random_mutate(&spec, &parent, true, &mut rng);
            let pos = (0..8).find(|&p| child.gene(p) != parent.gene(p)).unwrap();
            counts[pos] += 1;
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - 0.125).abs() <= 0.02, "{f}");
        }
        let one = SpaceSpec::new(1, 1, 4, 1).unwrap();
        assert_eq!(random_mutate(&one, &one.dense(), false, &mut rng), one.dense());
        assert_eq!(random_mutate(&one, &one.dense(), true, &mut rng), one.dense());
    }

    #[test]
    fn log_prob_gradient_matches_central_differences() {
        let (spec, mut cfg) = small();
        cfg.init_scale = 0.5;
        for resample in [false, true] {
            cfg.resample_until_different = resample;
            let mut net = MutatorNet::<f64>::new(&spec, cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            for _ in 0..3 {
                let parent = spec.sample_uniform(&mut rng);
                let action = net.forward_sample(&parent, &mut rng).unwrap();
                let (_, grad) = net.log_prob_gradient(&parent, &action).unwrap();
                let step = 1e-5;
                let mut worst = 0.0f64;
                for k in 0..grad.len() {
                    let orig = net.parameters()[k];
                    net.parameters_mut()[k] = orig + step;
                    let plus = net.log_prob(&parent, &action).unwrap();
                    net.parameters_mut()[k] = orig - step;
                    let minus = net.log_prob(&parent, &action).unwrap();
                    net.parameters_mut()[k] = orig;
                    let numeric = (plus - minus) / (2.0 * step);
                    let rel = (grad[k] - numeric).abs() / grad[k].abs().max(numeric.abs()).max(1e-6);
                    worst = worst.max(rel);
                }
                assert!(worst <= 1e-4, "max relative error {worst}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let (spec, cfg) = small();
        let mut net = MutatorNet::<f64>::new(&spec, cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for r in [0.3, 0.8, 0.1] {
            let parent = spec.sample_uniform(&mut rng);
            let a = net.forward_sample(&parent, &mut rng).unwrap();
            net.reinforce_update(&parent, &a, r).unwrap();
        }
        let back = MutatorNet::<f64>::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
        assert!(back.parameters().iter().zip(net.parameters()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(MutatorNet::<f64>::from_json("{}").is_err());
    }

    #[test]
    fn single_precision_controller_runs() {
        let (spec, cfg) = small();
        let mut net = MutatorNet::<f32>::new(&spec, cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let parent = spec.dense();
        for r in [0.2f32, 0.9] {
            let a = net.forward_sample(&parent, &mut rng).unwrap();
            net.reinforce_update(&parent, &a, r).unwrap();
        }
        let back = MutatorNet::<f32>::from_json(&net.to_json().unwrap()).unwrap();
        assert!(back.parameters().iter().zip(net.parameters()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
