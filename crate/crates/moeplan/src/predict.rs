//! Expert activation prediction from semantically similar historical prompts.
//!
//! A new prompt's activation matrix is predicted by retrieving the top-alpha
//! most similar historical prompts (soft cosine similarity over token
//! embeddings) through a multi-fork clustering tree, then softmax-weighting
//! their observed activation matrices. Prediction quality is measured by
//! Jensen-Shannon divergence averaged over layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{js_divergence_rows, softmax, Real};
use crate::trace::{ActivationMatrix, Prompt};
use crate::Scalar;

/// Division-by-zero guard for the soft cosine denominator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimilarityKernel {
    pub sigma: Scalar,
}

impl Default for SimilarityKernel {
    fn default() -> Self {
        SimilarityKernel { sigma: 1e-9 }
    }
}

impl SimilarityKernel {
    pub fn validate(&self) -> Result<()> {
        if self.sigma <= 0.0 || self.sigma > 1e-6 {
            return Err(Error::config("sigma", "must be in (0, 1e-6]"));
        }
        Ok(())
    }
}

/// Sum of a prompt's token embeddings. With binary alignment vectors over the
/// concatenated Gram matrix, V1' C V2 reduces to the dot product of the two
/// prompts' embedding sums, so this is all the similarity needs.
fn embedding_sum<S: Real>(embedding: &[Vec<S>]) -> Vec<S> {
    let d = embedding[0].len();
    let mut sum = vec![S::zero(); d];
    for row in embedding {
        for (s, &x) in sum.iter_mut().zip(row) {
            *s = *s + x;
        }
    }
    sum
}

fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

fn scs_from_sums<S: Real>(s1: &[S], s2: &[S], sigma: S) -> S {
    let num = dot(s1, s2);
    let n1 = dot(s1, s1).max(S::zero()).sqrt();
    let n2 = dot(s2, s2).max(S::zero()).sqrt();
    num / (n1 * n2 + sigma)
}

/// Soft cosine similarity between two prompts; symmetric, in [-1, 1 + eps].
pub fn soft_cosine(p1: &Prompt, p2: &Prompt, kernel: &SimilarityKernel) -> Result<Scalar> {
    kernel.validate()?;
    if p1.embedding.is_empty() || p2.embedding.is_empty() {
        return Err(Error::InvalidInput("soft_cosine: empty prompt".into()));
    }
    if p1.dim() != p2.dim() {
        return Err(Error::InvalidInput(format!(
            "soft_cosine: dimension mismatch {} vs {}",
            p1.dim(),
            p2.dim()
        )));
    }
    Ok(scs_from_sums(&embedding_sum(&p1.embedding), &embedding_sum(&p2.embedding), kernel.sigma))
}

/// One historical observation: a prompt and the activation matrix measured
/// from its routing trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoricalRecord {
    pub prompt: Prompt,
    pub activation: ActivationMatrix,
}

// ── Clustering tree ──────────────────────────────────────────────────────────

/// A node of the clustering tree. Prompt references are indices into the
/// history slice the tree was built from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TreeNode {
    Internal { medoid: usize, children: Vec<TreeNode> },
    Leaf { medoid: usize, members: Vec<usize> },
}

impl TreeNode {
    pub fn medoid(&self) -> usize {
        match self {
            TreeNode::Internal { medoid, .. } | TreeNode::Leaf { medoid, .. } => *medoid,
        }
    }

    fn collect_members(&self, out: &mut Vec<usize>) {
        match self {
            TreeNode::Leaf { members, .. } => out.extend_from_slice(members),
            TreeNode::Internal { children, .. } => {
                for c in children {
                    c.collect_members(out);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterTree {
    pub root: TreeNode,
    pub branching: usize,
    pub leaf_capacity: usize,
    pub history_len: usize,
}

/// Versioned on-disk format for [`ClusterTree`].
#[derive(Debug, Serialize, Deserialize)]
pub struct TreeFile {
    pub version: u32,
    pub tree: ClusterTree,
}

pub const TREE_FILE_VERSION: u32 = 1;

pub fn save_tree(tree: &ClusterTree, path: impl AsRef<Path>) -> Result<()> {
    let file = TreeFile { version: TREE_FILE_VERSION, tree: tree.clone() };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_tree(path: impl AsRef<Path>) -> Result<ClusterTree> {
    let file: TreeFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if file.version != TREE_FILE_VERSION {
        return Err(Error::InvalidInput(format!("unsupported tree version {}", file.version)));
    }
    Ok(file.tree)
}

/// k-medoids distance: 1 - SCS, clamped to [0, 2].
fn scs_distance(s1: &[Scalar], s2: &[Scalar], sigma: Scalar) -> Scalar {
    (1.0 - scs_from_sums(s1, s2, sigma)).clamp(0.0, 2.0)
}

struct TreeBuilder<'a> {
    sums: Vec<Vec<Scalar>>,
    sigma: Scalar,
    branching: usize,
    beta: usize,
    rng: ChaCha8Rng,
    _history: &'a [HistoricalRecord],
}

impl<'a> TreeBuilder<'a> {
    /// Medoid of `members`: the member minimizing total distance to the rest,
    /// ties to the lower index. Distances come from the per-split cache.
    fn medoid_of(&self, members: &[usize], cache: &DistCache) -> usize {
        let mut best = members[0];
        let mut best_cost = Scalar::INFINITY;
        for (i, &m) in members.iter().enumerate() {
            let cost: Scalar = (0..members.len()).map(|j| cache.get(i, j)).sum();
            if cost < best_cost - 1e-15 {
                best_cost = cost;
                best = m;
            }
        }
        best
    }

    fn split(&mut self, members: Vec<usize>) -> TreeNode {
        let cache = DistCache::new(&members, &self.sums, self.sigma);
        let medoid = self.medoid_of(&members, &cache);
        if members.len() <= self.beta {
            return TreeNode::Leaf { medoid, members };
        }

        let clusters = self.k_medoids(&members, &cache);
        if clusters.iter().filter(|c| !c.is_empty()).count() < 2 {
            // Degenerate geometry (e.g. identical prompts): fall back to a
            // deterministic round-robin split so capacity still shrinks.
            let chunks = self.branching.max(2);
            let mut parts: Vec<Vec<usize>> = vec![Vec::new(); chunks];
            for (i, &m) in members.iter().enumerate() {
                parts[i % chunks].push(m);
            }
            let children = parts
                .into_iter()
                .filter(|p| !p.is_empty())
                .map(|p| self.split(p))
                .collect();
            return TreeNode::Internal { medoid, children };
        }

        let children = clusters
            .into_iter()
            .filter(|c| !c.is_empty())
            .map(|c| self.split(c))
            .collect();
        TreeNode::Internal { medoid, children }
    }

    /// Customized k-medoids on `members` with roulette-wheel (squared distance
    /// mass) initialization and per-subcluster medoid updates.
    fn k_medoids(&mut self, members: &[usize], cache: &DistCache) -> Vec<Vec<usize>> {
        let n = members.len();
        let k = self.branching.min(n);

        // Initialization: first medoid uniform, the rest roulette on squared
        // distance to the nearest chosen medoid.
        let mut medoid_pos: Vec<usize> = vec![self.rng.gen_range(0..n)];
        while medoid_pos.len() < k {
            let mass: Vec<Scalar> = (0..n)
                .map(|i| {
                    let d = medoid_pos.iter().map(|&m| cache.get(i, m)).fold(Scalar::INFINITY, Scalar::min);
                    d * d
                })
                .collect();
            let total: Scalar = mass.iter().sum();
            let pick = if total > 0.0 {
                let mut target = self.rng.gen::<Scalar>() * total;
                let mut chosen = n - 1;
                for (i, &m) in mass.iter().enumerate() {
                    target -= m;
                    if target <= 0.0 {
                        chosen = i;
                        break;
                    }
                }
                chosen
            } else {
                self.rng.gen_range(0..n)
            };
            if !medoid_pos.contains(&pick) {
                medoid_pos.push(pick);
            } else if mass.iter().all(|&m| m == 0.0) {
                break; // all points coincide with chosen medoids
            }
        }

        let mut assignment = vec![0usize; n];
        for _iter in 0..20 {
            for (i, slot) in assignment.iter_mut().enumerate() {
                let mut best = 0usize;
                let mut best_d = Scalar::INFINITY;
                for (c, &m) in medoid_pos.iter().enumerate() {
                    let d = cache.get(i, m);
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                *slot = best;
            }
            // Subcluster-level medoid update.
            let mut new_medoids = medoid_pos.clone();
            for (c, new_m) in new_medoids.iter_mut().enumerate() {
                let cluster: Vec<usize> =
                    (0..n).filter(|&i| assignment[i] == c).collect();
                if cluster.is_empty() {
                    continue;
                }
                let mut best = cluster[0];
                let mut best_cost = Scalar::INFINITY;
                for &i in &cluster {
                    let cost: Scalar = cluster.iter().map(|&j| cache.get(i, j)).sum();
                    if cost < best_cost - 1e-15 {
                        best_cost = cost;
                        best = i;
                    }
                }
                *new_m = best;
            }
            if new_medoids == medoid_pos {
                break;
            }
            medoid_pos = new_medoids;
        }

        let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); medoid_pos.len()];
        for (i, &c) in assignment.iter().enumerate() {
            clusters[c].push(members[i]);
        }
        clusters
    }
}

/// Pairwise distances within one node split, indexed by local positions.
/// Cached only for the duration of the split, keeping memory O(node^2).
struct DistCache {
    n: usize,
    d: Vec<Scalar>,
}

impl DistCache {
    fn new(members: &[usize], sums: &[Vec<Scalar>], sigma: Scalar) -> Self {
        let n = members.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let dist = scs_distance(&sums[members[i]], &sums[members[j]], sigma);
                d[i * n + j] = dist;
                d[j * n + i] = dist;
            }
        }
        DistCache { n, d }
    }

    fn get(&self, i: usize, j: usize) -> Scalar {
        self.d[i * self.n + j]
    }
}

/// Build the multi-fork clustering tree over historical prompts. Nodes larger
/// than `beta` are recursively split by k-medoids on 1 - SCS.
pub fn build_tree(
    history: &[HistoricalRecord],
    alpha: usize,
    beta: usize,
    branching: usize,
    seed: u64,
) -> Result<ClusterTree> {
    if history.is_empty() {
        return Err(Error::InvalidInput("build_tree: empty history".into()));
    }
    if beta <= alpha || alpha == 0 {
        return Err(Error::InvalidInput(format!("build_tree: need beta > alpha >= 1, got alpha={alpha} beta={beta}")));
    }
    let kernel = SimilarityKernel::default();
    let mut builder = TreeBuilder {
        sums: history.iter().map(|r| embedding_sum(&r.prompt.embedding)).collect(),
        sigma: kernel.sigma,
        branching: branching.max(2),
        beta,
        rng: ChaCha8Rng::seed_from_u64(seed),
        _history: history,
    };
    let root = builder.split((0..history.len()).collect());
    Ok(ClusterTree { root, branching: branching.max(2), leaf_capacity: beta, history_len: history.len() })
}

// ── SPS search ───────────────────────────────────────────────────────────────

/// Result of a similar-prompt search: history indices of the top-alpha
/// matches and how many similarity evaluations were spent.
#[derive(Debug, Clone)]
pub struct SearchResult {
    /// History indices, descending by SCS.
    pub ids: Vec<usize>,
    /// SCS values aligned with `ids`.
    pub scs: Vec<Scalar>,
    pub scs_evaluations: usize,
}

/// Tree-guided similar-prompt search. Descends to the leaf whose medoids are
/// closest to the query; if the leaf holds fewer than `alpha` prompts,
/// supplements from siblings (nearest medoid first), walking up as needed.
pub fn sps_search(
    tree: &ClusterTree,
    history: &[HistoricalRecord],
    prompt: &Prompt,
    alpha: usize,
    kernel: &SimilarityKernel,
) -> Result<SearchResult> {
    kernel.validate()?;
    if alpha == 0 || alpha > tree.history_len || history.len() != tree.history_len {
        return Err(Error::InvalidInput(format!(
            "sps_search: alpha {alpha} vs history size {}",
            tree.history_len
        )));
    }
    prompt.validate()?;
    let query_sum = embedding_sum(&prompt.embedding);
    let sums: Vec<Vec<Scalar>> = history.iter().map(|r| embedding_sum(&r.prompt.embedding)).collect();
    let mut evals = 0usize;
    let scs_to = |idx: usize, evals: &mut usize| -> Scalar {
        *evals += 1;
        scs_from_sums(&query_sum, &sums[idx], kernel.sigma)
    };

    // Descend, remembering the path and each level's sibling ordering.
    let mut path: Vec<(&TreeNode, Vec<usize>)> = Vec::new(); // (node, child order by SCS)
    let mut node = &tree.root;
    while let TreeNode::Internal { children, .. } = node {
        let mut scored: Vec<(usize, Scalar)> = children
            .iter()
            .enumerate()
            .map(|(i, c)| (i, scs_to(c.medoid(), &mut evals)))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let order: Vec<usize> = scored.iter().map(|&(i, _)| i).collect();
        path.push((node, order.clone()));
        node = &children[order[0]];
    }

    let mut candidates: Vec<usize> = Vec::new();
    node.collect_members(&mut candidates);

    // Supplement from siblings, nearest medoid first, then walk up.
    let mut level = path.len();
    while candidates.len() < alpha && level > 0 {
        level -= 1;
        let (parent, order) = &path[level];
        if let TreeNode::Internal { children, .. } = parent {
            for &ci in order.iter().skip(1) {
                if candidates.len() >= alpha {
                    break;
                }
                let mut extra = Vec::new();
                children[ci].collect_members(&mut extra);
                for m in extra {
                    if !candidates.contains(&m) {
                        candidates.push(m);
                    }
                }
            }
        }
    }

    let mut scored: Vec<(usize, Scalar)> =
        candidates.iter().map(|&i| (i, scs_to(i, &mut evals))).collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(alpha);
    Ok(SearchResult {
        ids: scored.iter().map(|&(i, _)| i).collect(),
        scs: scored.iter().map(|&(_, s)| s).collect(),
        scs_evaluations: evals,
    })
}

/// Exact top-alpha search over the whole history.
pub fn brute_force_search(
    history: &[HistoricalRecord],
    prompt: &Prompt,
    alpha: usize,
    kernel: &SimilarityKernel,
) -> Result<SearchResult> {
    kernel.validate()?;
    if alpha == 0 || alpha > history.len() {
        return Err(Error::InvalidInput("brute_force_search: bad alpha".into()));
    }
    let query_sum = embedding_sum(&prompt.embedding);
    let mut scored: Vec<(usize, Scalar)> = history
        .iter()
        .enumerate()
        .map(|(i, r)| (i, scs_from_sums(&query_sum, &embedding_sum(&r.prompt.embedding), kernel.sigma)))
        .collect();
    let evals = scored.len();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(alpha);
    Ok(SearchResult {
        ids: scored.iter().map(|&(i, _)| i).collect(),
        scs: scored.iter().map(|&(_, s)| s).collect(),
        scs_evaluations: evals,
    })
}

/// Softmax-weighted sum of neighbor activation matrices.
pub fn predict_activation(neighbors: &[(&HistoricalRecord, Scalar)]) -> Result<ActivationMatrix> {
    if neighbors.is_empty() {
        return Err(Error::InvalidInput("predict_activation: no neighbors".into()));
    }
    let scs: Vec<Scalar> = neighbors.iter().map(|&(_, s)| s).collect();
    let weights = softmax(&scs);
    let shape: Vec<usize> = neighbors[0].0.activation.rows.iter().map(Vec::len).collect();
    let mut rows: Vec<Vec<Scalar>> = shape.iter().map(|&k| vec![0.0; k]).collect();
    for (&(record, _), &w) in neighbors.iter().zip(&weights) {
        for (out, src) in rows.iter_mut().zip(&record.activation.rows) {
            for (o, &s) in out.iter_mut().zip(src) {
                *o += w * s;
            }
        }
    }
    Ok(ActivationMatrix { rows })
}

/// Mean over layers of per-row JS divergence, log base 2; in [0, 1].
pub fn js_divergence(a: &ActivationMatrix, b: &ActivationMatrix) -> Result<Scalar> {
    if a.rows.len() != b.rows.len()
        || a.rows.iter().zip(&b.rows).any(|(x, y)| x.len() != y.len())
    {
        return Err(Error::InvalidInput("js_divergence: shape mismatch".into()));
    }
    a.validate()?;
    b.validate()?;
    let total: Scalar = a
        .rows
        .iter()
        .zip(&b.rows)
        .map(|(x, y)| js_divergence_rows(x, y))
        .sum();
    Ok(total / a.rows.len() as Scalar)
}

/// Prediction baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionBaseline {
    /// Uniform activation across experts.
    EqualFrequency,
    /// Unweighted mean of all historical activations.
    DistributionOnly,
    /// Exact top-alpha SCS search, then softmax-weighted prediction.
    BruteForce,
}

pub fn baseline_predict(
    kind: PredictionBaseline,
    history: &[HistoricalRecord],
    prompt: &Prompt,
    alpha: usize,
    kernel: &SimilarityKernel,
) -> Result<ActivationMatrix> {
    if history.is_empty() {
        return Err(Error::InvalidInput("baseline_predict: empty history".into()));
    }
    match kind {
        PredictionBaseline::EqualFrequency => {
            let shape: Vec<usize> = history[0].activation.rows.iter().map(Vec::len).collect();
            Ok(ActivationMatrix::uniform(&shape))
        }
        PredictionBaseline::DistributionOnly => {
            let n = history.len() as Scalar;
            let shape: Vec<usize> = history[0].activation.rows.iter().map(Vec::len).collect();
            let mut rows: Vec<Vec<Scalar>> = shape.iter().map(|&k| vec![0.0; k]).collect();
            for r in history {
                for (out, src) in rows.iter_mut().zip(&r.activation.rows) {
                    for (o, &s) in out.iter_mut().zip(src) {
                        *o += s / n;
                    }
                }
            }
            Ok(ActivationMatrix { rows })
        }
        PredictionBaseline::BruteForce => {
            let found = brute_force_search(history, prompt, alpha, kernel)?;
            let neighbors: Vec<(&HistoricalRecord, Scalar)> = found
                .ids
                .iter()
                .zip(&found.scs)
                .map(|(&i, &s)| (&history[i], s))
                .collect();
            predict_activation(&neighbors)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{generate_clustered_corpus, trace_to_activation, CorpusParams, Phase};

    fn prompt(id: &str, rows: Vec<Vec<Scalar>>) -> Prompt {
        Prompt { id: id.into(), embedding: rows }
    }

    fn corpus_history(
        clusters: usize,
        per_cluster: usize,
        skew: f64,
        seed: u64,
    ) -> (Vec<HistoricalRecord>, Vec<usize>) {
        let params = CorpusParams::default();
        let entries = generate_clustered_corpus(&params, clusters, per_cluster, skew, seed).unwrap();
        let labels = entries.iter().map(|e| e.cluster).collect();
        let history = entries
            .into_iter()
            .map(|e| HistoricalRecord {
                activation: trace_to_activation(&e.trace, Phase::Both).unwrap(),
                prompt: e.prompt,
            })
            .collect();
        (history, labels)
    }

    #[test]
    fn self_similarity_is_one() {
        let p = prompt("a", vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let s = soft_cosine(&p, &p, &SimilarityKernel::default()).unwrap();
        assert!((s - 1.0).abs() <= 1e-5, "{s}");
    }

    #[test]
    fn orthogonal_single_tokens_zero() {
        let p1 = prompt("a", vec![vec![1.0, 0.0]]);
        let p2 = prompt("b", vec![vec![0.0, 1.0]]);
        let s = soft_cosine(&p1, &p2, &SimilarityKernel::default()).unwrap();
        assert!(s.abs() < 1e-9, "{s}");
    }

    /// Independent dense-matrix oracle: build the concatenated Gram matrix and
    /// alignment vectors explicitly, then evaluate the quadratic forms.
    fn scs_dense_oracle(p1: &Prompt, p2: &Prompt, sigma: Scalar) -> Scalar {
        let all: Vec<&Vec<Scalar>> = p1.embedding.iter().chain(p2.embedding.iter()).collect();
        let n = all.len();
        let mut gram = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                gram[i][j] = all[i].iter().zip(all[j].iter()).map(|(a, b)| a * b).sum();
            }
        }
        let v1: Vec<Scalar> = (0..n).map(|i| if i < p1.token_count() { 1.0 } else { 0.0 }).collect();
        let v2: Vec<Scalar> = (0..n).map(|i| if i >= p1.token_count() { 1.0 } else { 0.0 }).collect();
        let quad = |a: &[Scalar], b: &[Scalar]| -> Scalar {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    acc += a[i] * gram[i][j] * b[j];
                }
            }
            acc
        };
        quad(&v1, &v2) / (quad(&v1, &v1).sqrt() * quad(&v2, &v2).sqrt() + sigma)
    }

    #[test]
    fn matches_dense_matrix_oracle() {
        let inv = 1.0 / (2.0f64).sqrt();
        let p1 = prompt("a", vec![vec![inv, inv, 0.0], vec![0.0, 1.0, 0.0]]);
        let p2 = prompt("b", vec![vec![1.0, 0.0, 0.0], vec![0.0, inv, inv]]);
        let k = SimilarityKernel::default();
        let got = soft_cosine(&p1, &p2, &k).unwrap();
        let want = scs_dense_oracle(&p1, &p2, k.sigma);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn symmetry_over_random_pairs() {
        let (history, _) = corpus_history(4, 20, 4.0, 5);
        let k = SimilarityKernel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let i = rng.gen_range(0..history.len());
            let j = rng.gen_range(0..history.len());
            let a = soft_cosine(&history[i].prompt, &history[j].prompt, &k).unwrap();
            let b = soft_cosine(&history[j].prompt, &history[i].prompt, &k).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p1 = prompt("a", vec![vec![1.0, 0.0]]);
        let p2 = prompt("b", vec![vec![1.0, 0.0, 0.0]]);
        assert!(soft_cosine(&p1, &p2, &SimilarityKernel::default()).is_err());
    }

    #[test]
    fn under_capacity_single_leaf() {
        let (history, _) = corpus_history(2, 10, 2.0, 7); // 20 prompts
        let tree = build_tree(&history, 5, 150, 4, 1).unwrap();
        assert!(matches!(tree.root, TreeNode::Leaf { .. }));
    }

    #[test]
    fn beta_not_above_alpha_rejected() {
        let (history, _) = corpus_history(1, 5, 1.0, 7);
        assert!(build_tree(&history, 10, 10, 4, 1).is_err());
    }

    #[test]
    fn leaves_respect_capacity_and_cover_history() {
        let (history, _) = corpus_history(4, 120, 6.0, 3); // 480 prompts
        let beta = 60;
        let tree = build_tree(&history, 15, beta, 4, 1).unwrap();
        let mut members = Vec::new();
        fn walk(node: &TreeNode, beta: usize, members: &mut Vec<usize>) {
            match node {
                TreeNode::Leaf { members: m, .. } => {
                    assert!(m.len() <= beta, "leaf size {} > beta {beta}", m.len());
                    members.extend_from_slice(m);
                }
                TreeNode::Internal { children, .. } => {
                    assert!(children.len() >= 2);
                    for c in children {
                        walk(c, beta, members);
                    }
                }
            }
        }
        walk(&tree.root, beta, &mut members);
        members.sort_unstable();
        let expected: Vec<usize> = (0..history.len()).collect();
        assert_eq!(members, expected, "every prompt in exactly one leaf");
    }

    #[test]
    fn first_split_recovers_clusters() {
        let (history, labels) = corpus_history(4, 50, 10.0, 17);
        let tree = build_tree(&history, 15, 60, 4, 2).unwrap();
        let TreeNode::Internal { children, .. } = &tree.root else {
            panic!("expected split");
        };
        // Purity: each child dominated by one generator cluster.
        let mut correct = 0usize;
        let mut total = 0usize;
        for c in children {
            let mut m = Vec::new();
            c.collect_members(&mut m);
            let mut counts = [0usize; 4];
            for &i in &m {
                counts[labels[i]] += 1;
            }
            correct += counts.iter().max().unwrap();
            total += m.len();
        }
        let purity = correct as f64 / total as f64;
        assert!(purity >= 0.90, "purity {purity}");
    }

    #[test]
    fn self_retrieval() {
        let (history, _) = corpus_history(2, 30, 4.0, 9);
        let tree = build_tree(&history, 5, 20, 3, 1).unwrap();
        let k = SimilarityKernel::default();
        let res = sps_search(&tree, &history, &history[7].prompt, 5, &k).unwrap();
        assert!(res.ids.contains(&7));
        assert_eq!(res.ids.len(), 5);
        assert!(res.ids.iter().all(|&i| i < history.len()));
    }

    #[test]
    fn single_leaf_equals_brute_force() {
        let (history, _) = corpus_history(2, 20, 4.0, 11);
        let tree = build_tree(&history, 5, 150, 4, 1).unwrap();
        let k = SimilarityKernel::default();
        let query = &corpus_history(1, 1, 4.0, 99).0[0].prompt;
        let sps = sps_search(&tree, &history, query, 5, &k).unwrap();
        let bf = brute_force_search(&history, query, 5, &k).unwrap();
        assert_eq!(sps.ids, bf.ids);
    }

    #[test]
    fn sps_close_to_brute_force_with_fewer_evals() {
        let (history, _) = corpus_history(4, 100, 6.0, 23);
        let tree = build_tree(&history, 15, 60, 4, 1).unwrap();
        let k = SimilarityKernel::default();
        let (queries, _) = corpus_history(4, 5, 6.0, 24);
        let mut sps_scs = 0.0;
        let mut bf_scs = 0.0;
        let mut sps_evals = 0usize;
        let mut bf_evals = 0usize;
        for q in &queries {
            let sps = sps_search(&tree, &history, &q.prompt, 15, &k).unwrap();
            let bf = brute_force_search(&history, &q.prompt, 15, &k).unwrap();
            sps_scs += sps.scs.iter().sum::<Scalar>();
            bf_scs += bf.scs.iter().sum::<Scalar>();
            sps_evals += sps.scs_evaluations;
            bf_evals += bf.scs_evaluations;
        }
        assert!(sps_scs >= 0.95 * bf_scs, "sps mean SCS too low: {sps_scs} vs {bf_scs}");
        assert!(bf_evals as f64 / sps_evals as f64 >= 5.0, "{bf_evals} vs {sps_evals}");
    }

    #[test]
    fn single_neighbor_returned_exactly() {
        let (history, _) = corpus_history(1, 3, 2.0, 31);
        let out = predict_activation(&[(&history[0], 0.8)]).unwrap();
        assert_eq!(out.rows, history[0].activation.rows);
    }

    #[test]
    fn equal_scs_is_elementwise_mean() {
        let (history, _) = corpus_history(1, 3, 2.0, 31);
        let out = predict_activation(&[(&history[0], 0.5), (&history[1], 0.5)]).unwrap();
        for (l, row) in out.rows.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                let want = 0.5 * (history[0].activation.rows[l][k] + history[1].activation.rows[l][k]);
                assert!((v - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_softmax_weighted_sum_oracle() {
        let (history, _) = corpus_history(1, 4, 2.0, 33);
        let scs = [0.9, 0.5, 0.1];
        let out = predict_activation(&[
            (&history[0], scs[0]),
            (&history[1], scs[1]),
            (&history[2], scs[2]),
        ])
        .unwrap();
        // Scalar oracle: explicit softmax then weighted sum.
        let exp: Vec<Scalar> = scs.iter().map(|s| s.exp()).collect();
        let z: Scalar = exp.iter().sum();
        for (l, row) in out.rows.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                let want: Scalar = (0..3)
                    .map(|j| exp[j] / z * history[j].activation.rows[l][k])
                    .sum();
                assert!((v - want).abs() < 1e-12);
            }
        }
        // Rows remain distributions.
        for row in &out.rows {
            assert!((row.iter().sum::<Scalar>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn js_divergence_known_value() {
        let a = ActivationMatrix { rows: vec![vec![0.5, 0.5]] };
        let b = ActivationMatrix { rows: vec![vec![0.9, 0.1]] };
        // Frozen from the direct base-2 formula evaluated independently:
        // H(m) - (H(a) + H(b)) / 2 with m = (0.7, 0.3).
        let want = {
            let h = |p: &[f64]| -> f64 {
                p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.log2()).sum()
            };
            h(&[0.7, 0.3]) - 0.5 * (h(&[0.5, 0.5]) + h(&[0.9, 0.1]))
        };
        let got = js_divergence(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.1468).abs() < 5e-5, "{got}");
    }

    #[test]
    fn js_divergence_bounds_and_symmetry() {
        let a = ActivationMatrix { rows: vec![vec![1.0, 0.0], vec![0.3, 0.7]] };
        let b = ActivationMatrix { rows: vec![vec![0.0, 1.0], vec![0.3, 0.7]] };
        let ab = js_divergence(&a, &b).unwrap();
        let ba = js_divergence(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-15);
        assert!(ab >= 0.0 && ab <= 1.0);
        assert!((js_divergence(&a, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn js_shape_mismatch_rejected() {
        let a = ActivationMatrix { rows: vec![vec![0.5, 0.5]] };
        let b = ActivationMatrix { rows: vec![vec![0.25; 4]] };
        assert!(js_divergence(&a, &b).is_err());
    }

    #[test]
    fn ef_uniform_dop_mean() {
        let (history, _) = corpus_history(1, 2, 2.0, 41);
        let k = SimilarityKernel::default();
        let ef = baseline_predict(PredictionBaseline::EqualFrequency, &history, &history[0].prompt, 1, &k).unwrap();
        assert!(ef.rows.iter().all(|r| r.iter().all(|&v| (v - 0.125).abs() < 1e-12)));
        let dop = baseline_predict(PredictionBaseline::DistributionOnly, &history, &history[0].prompt, 1, &k).unwrap();
        for (l, row) in dop.rows.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                let want = 0.5 * (history[0].activation.rows[l][i] + history[1].activation.rows[l][i]);
                assert!((v - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bf_equals_sps_on_single_leaf() {
        let (history, _) = corpus_history(2, 10, 3.0, 43);
        let tree = build_tree(&history, 5, 150, 4, 1).unwrap();
        let k = SimilarityKernel::default();
        let query = &corpus_history(1, 1, 3.0, 44).0[0].prompt;
        let sps = sps_search(&tree, &history, query, 5, &k).unwrap();
        let neighbors: Vec<(&HistoricalRecord, Scalar)> = sps
            .ids
            .iter()
            .zip(&sps.scs)
            .map(|(&i, &s)| (&history[i], s))
            .collect();
        let via_sps = predict_activation(&neighbors).unwrap();
        let via_bf = baseline_predict(PredictionBaseline::BruteForce, &history, query, 5, &k).unwrap();
        assert_eq!(via_sps.rows, via_bf.rows);
    }

    #[test]
    fn tree_roundtrip() {
        let (history, _) = corpus_history(2, 30, 4.0, 45);
        let tree = build_tree(&history, 5, 20, 3, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tree.json");
        save_tree(&tree, &path).unwrap();
        let loaded = load_tree(&path).unwrap();
        assert_eq!(serde_json::to_string(&tree).unwrap(), serde_json::to_string(&loaded.clone()).unwrap());
    }
}
