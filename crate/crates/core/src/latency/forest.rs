//! Bagged CART regression forest.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::LatencyError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub bootstrap: bool,
    /// Features examined per split; `None` examines all of them.
    pub max_features: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 12, min_leaf: 2, bootstrap: true, max_features: None }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<(), LatencyError> {
        if self.n_trees == 0 {
            return Err(LatencyError::BadParams("n_trees must be positive".into()));
        }
        if self.min_leaf == 0 {
            return Err(LatencyError::BadParams("min_leaf must be positive".into()));
        }
        if self.max_features == Some(0) {
            return Err(LatencyError::BadParams("max_features must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
enum Node<T: Scalar> {
    Leaf { value: T },
    Split { feature: usize, threshold: T, left: usize, right: usize },
}

/// One regression tree stored as a node arena, root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RegressionTree<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> RegressionTree<T> {
    /// Fits a tree on the rows listed in `sample` (duplicates allowed).
    pub fn fit<R: Rng>(
        x: &[Vec<T>],
        y: &[T],
        sample: Vec<usize>,
        params: &ForestParams,
        rng: &mut R,
    ) -> Self {
        let mut tree = Self { nodes: Vec::new() };
        let n_features = x.first().map_or(0, Vec::len);
        let mut builder = Builder { x, y, params, n_features, rng };
        builder.grow(&mut tree.nodes, sample, 0);
        tree
    }

    pub fn predict(&self, row: &[T]) -> T {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk<T: Scalar>(nodes: &[Node<T>], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

struct Builder<'a, T: Scalar, R> {
    x: &'a [Vec<T>],
    y: &'a [T],
    params: &'a ForestParams,
    n_features: usize,
    rng: &'a mut R,
}

struct BestSplit<T> {
    feature: usize,
    threshold: T,
    gain: T,
}

impl<T: Scalar, R: Rng> Builder<'_, T, R> {
    fn grow(&mut self, nodes: &mut Vec<Node<T>>, rows: Vec<usize>, depth: usize) -> usize {
        let at = nodes.len();
        let mean = self.mean(&rows);
        nodes.push(Node::Leaf { value: mean });
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf {
            return at;
        }
        let Some(best) = self.best_split(&rows) else {
            return at;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| self.x[r][best.feature] <= best.threshold);
        drop(rows);
        let left = self.grow(nodes, left_rows, depth + 1);
        let right = self.grow(nodes, right_rows, depth + 1);
        nodes[at] = Node::Split { feature: best.feature, threshold: best.threshold, left, right };
        at
    }

    fn mean(&self, rows: &[usize]) -> T {
        let sum = rows.iter().fold(T::zero(), |acc, &r| acc + self.y[r]);
        sum / T::of_usize(rows.len().max(1))
    }

    fn features(&mut self) -> Vec<usize> {
        let mut all: Vec<usize> = (0..self.n_features).collect();
        match self.params.max_features {
            Some(k) if k < self.n_features => {
                for i in 0..k {
                    let j = self.rng.random_range(i..all.len());
                    all.swap(i, j);
                }
                all.truncate(k);
                all
            }
            _ => all,
        }
    }

    /// Largest reduction in summed squared error over all admissible cuts.
    fn best_split(&mut self, rows: &[usize]) -> Option<BestSplit<T>> {
        let n = rows.len();
        let total: T = rows.iter().fold(T::zero(), |acc, &r| acc + self.y[r]);
        let n_t = T::of_usize(n);
        let min_leaf = self.params.min_leaf;
        let mut best: Option<BestSplit<T>> = None;
        let mut order = rows.to_vec();
        for feature in self.features() {
            order.sort_by(|&a, &b| {
                self.x[a][feature].partial_cmp(&self.x[b][feature]).expect("finite features")
            });
            let mut left_sum = T::zero();
            for i in 0..n - 1 {
                left_sum += self.y[order[i]];
                let left_n = i + 1;
                if left_n < min_leaf || n - left_n < min_leaf {
                    continue;
                }
                let here = self.x[order[i]][feature];
                let next = self.x[order[i + 1]][feature];
                if here == next {
                    continue;
                }
                // SSE reduction up to a constant: S_l^2/n_l + S_r^2/n_r - S^2/n
                let ln = T::of_usize(left_n);
                let rn = T::of_usize(n - left_n);
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / ln + right_sum * right_sum / rn - total * total / n_t;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let two = T::one() + T::one();
                    best = Some(BestSplit { feature, threshold: (here + next) / two, gain });
                }
            }
        }
        best.filter(|b| b.gain > T::zero())
    }
}

/// Bagged ensemble of regression trees; predictions are the tree mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RandomForest<T: Scalar> {
    params: ForestParams,
    trees: Vec<RegressionTree<T>>,
}

impl<T: Scalar> RandomForest<T> {
    /// Fits `params.n_trees` trees, each from its own seed drawn from `rng`.
    pub fn fit<R: RngCore>(
        x: &[Vec<T>],
        y: &[T],
        params: ForestParams,
        rng: &mut R,
    ) -> Result<Self, LatencyError> {
        params.validate()?;
        if x.is_empty() || x.len() != y.len() {
            return Err(LatencyError::TooFewSamples { needed: 1, got: x.len().min(y.len()) });
        }
        let n = x.len();
        let seeds: Vec<u64> = (0..params.n_trees).map(|_| rng.next_u64()).collect();
        let trees = seeds
            .into_iter()
            .map(|seed| {
                let mut tree_rng = ChaCha8Rng::seed_from_u64(seed);
                let sample = if params.bootstrap {
                    (0..n).map(|_| tree_rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                RegressionTree::fit(x, y, sample, &params, &mut tree_rng)
            })
            .collect();
        Ok(Self { params, trees })
    }

    pub fn predict(&self, row: &[T]) -> Result<T, LatencyError> {
        if self.trees.is_empty() {
            return Err(LatencyError::Untrained);
        }
        let sum = self.trees.iter().fold(T::zero(), |acc, t| acc + t.predict(row));
        Ok(sum / T::of_usize(self.trees.len()))
    }

    pub fn trees(&self) -> &[RegressionTree<T>] {
        &self.trees
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }
}
