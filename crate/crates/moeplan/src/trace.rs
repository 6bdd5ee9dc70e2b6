//! Synthetic workloads: prompts, token-to-expert routing traces, and expert
//! activation matrices.
//!
//! The corpus generator builds clusters of prompts that share a per-layer
//! expert preference, so semantic similarity of embeddings correlates with
//! activation similarity. All generators are pure functions of their
//! parameters and a seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::Scalar;

/// A prompt with unit-norm token embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    /// token_count x d, rows L2-normalized.
    pub embedding: Vec<Vec<Scalar>>,
}

impl Prompt {
    pub fn token_count(&self) -> usize {
        self.embedding.len()
    }

    pub fn dim(&self) -> usize {
        self.embedding.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding.is_empty() {
            return Err(Error::InvalidInput(format!("prompt `{}` has no tokens", self.id)));
        }
        let d = self.dim();
        for (i, row) in self.embedding.iter().enumerate() {
            if row.len() != d {
                return Err(Error::InvalidInput(format!(
                    "prompt `{}`: token {i} has dim {} != {d}",
                    self.id,
                    row.len()
                )));
            }
            let norm = row.iter().map(|x| x * x).sum::<Scalar>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!(
                    "prompt `{}`: token {i} norm {norm} not unit",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Ground-truth routing: top-k expert indices per (layer, token), for the
/// prefill tokens and the generated (decode) tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingTrace {
    pub prompt_id: String,
    pub experts_per_layer: Vec<usize>,
    pub top_k: usize,
    /// `prefill[l][i]` = experts of input token `i` at layer `l`.
    pub prefill: Vec<Vec<Vec<usize>>>,
    /// `decode[l][i]` = experts of generated token `i` at layer `l`. May be
    /// empty for prefill-only traces.
    pub decode: Vec<Vec<Vec<usize>>>,
}

/// Which routing phase to aggregate over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Prefill,
    Decode,
    Both,
}

impl RoutingTrace {
    pub fn n_in(&self) -> usize {
        self.prefill.first().map_or(0, Vec::len)
    }

    pub fn n_out(&self) -> usize {
        self.decode.first().map_or(0, Vec::len)
    }

    pub fn num_layers(&self) -> usize {
        self.experts_per_layer.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.experts_per_layer.len();
        if self.prefill.len() != l || self.decode.len() != l {
            return Err(Error::InvalidInput(format!(
                "trace `{}`: phase layer counts must equal {l}",
                self.prompt_id
            )));
        }
        for (layer, phase) in self.prefill.iter().chain(self.decode.iter()).enumerate() {
            let li = layer % l;
            for (tok, experts) in phase.iter().enumerate() {
                if experts.len() != self.top_k {
                    return Err(Error::InvalidInput(format!(
                        "trace `{}`: layer {li} token {tok} has {} experts, expected top_k {}",
                        self.prompt_id,
                        experts.len(),
                        self.top_k
                    )));
                }
                let mut seen = experts.clone();
                seen.sort_unstable();
                seen.dedup();
                if seen.len() != self.top_k {
                    return Err(Error::InvalidInput(format!(
                        "trace `{}`: layer {li} token {tok} has duplicate experts",
                        self.prompt_id
                    )));
                }
                if experts.iter().any(|&e| e >= self.experts_per_layer[li]) {
                    return Err(Error::InvalidInput(format!(
                        "trace `{}`: layer {li} token {tok} routes to an unknown expert",
                        self.prompt_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Exact token counts per expert in layer `l` during prefill
    /// (`N^pre_{l,k}`).
    pub fn prefill_counts(&self, l: usize) -> Vec<usize> {
        let mut counts = vec![0usize; self.experts_per_layer[l]];
        for experts in &self.prefill[l] {
            for &e in experts {
                counts[e] += 1;
            }
        }
        counts
    }
}

/// Per-layer distribution of token mass over experts; each row sums to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationMatrix {
    pub rows: Vec<Vec<Scalar>>,
}

impl ActivationMatrix {
    pub fn uniform(experts_per_layer: &[usize]) -> Self {
        ActivationMatrix {
            rows: experts_per_layer.iter().map(|&k| vec![1.0 / k as Scalar; k]).collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.rows.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (l, row) in self.rows.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::InvalidInput(format!("activation row {l} is empty")));
            }
            if row.iter().any(|&v| !(0.0..=1.0 + 1e-12).contains(&v)) {
                return Err(Error::InvalidInput(format!("activation row {l} out of [0,1]")));
            }
            let sum: Scalar = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("activation row {l} sums to {sum}")));
            }
        }
        Ok(())
    }
}

/// Linear-scaling activation frequencies of a trace: count of expert `k` in
/// layer `l`, divided by tokens x top_k.
pub fn trace_to_activation(trace: &RoutingTrace, phase: Phase) -> Result<ActivationMatrix> {
    trace.validate()?;
    let l = trace.num_layers();
    let mut rows = Vec::with_capacity(l);
    for layer in 0..l {
        let mut counts = vec![0u64; trace.experts_per_layer[layer]];
        let mut total = 0u64;
        let mut tally = |assignments: &Vec<Vec<usize>>| {
            for experts in assignments {
                for &e in experts {
                    counts[e] += 1;
                    total += 1;
                }
            }
        };
        match phase {
            Phase::Prefill => tally(&trace.prefill[layer]),
            Phase::Decode => tally(&trace.decode[layer]),
            Phase::Both => {
                tally(&trace.prefill[layer]);
                tally(&trace.decode[layer]);
            }
        }
        if total == 0 {
            return Err(Error::InvalidInput(format!(
                "trace `{}` has no tokens in the requested phase",
                trace.prompt_id
            )));
        }
        rows.push(counts.iter().map(|&c| c as Scalar / total as Scalar).collect());
    }
    Ok(ActivationMatrix { rows })
}

/// Sample `top_k` distinct experts proportional to `weights`, without
/// replacement. Falls back to uniform among the remainder once the available
/// mass is exhausted.
fn sample_top_k(weights: &[Scalar], top_k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut picked = Vec::with_capacity(top_k);
    for _ in 0..top_k {
        let total: Scalar = remaining.iter().map(|&i| weights[i]).sum();
        let idx = if total > 0.0 {
            let mut target = rng.gen::<Scalar>() * total;
            let mut chosen = remaining.len() - 1;
            for (pos, &i) in remaining.iter().enumerate() {
                target -= weights[i];
                if target <= 0.0 {
                    chosen = pos;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..remaining.len())
        };
        picked.push(remaining.swap_remove(idx));
    }
    picked
}

/// Monte Carlo routing driver: draw a prefill-only trace of `n_tokens` from
/// an activation matrix.
pub fn sample_routing(
    activation: &ActivationMatrix,
    n_tokens: usize,
    top_k: usize,
    seed: u64,
) -> Result<RoutingTrace> {
    activation.validate()?;
    let experts_per_layer: Vec<usize> = activation.rows.iter().map(Vec::len).collect();
    if let Some((l, &k)) = experts_per_layer.iter().enumerate().find(|(_, &k)| k < top_k) {
        return Err(Error::InvalidInput(format!("top_k {top_k} > {k} experts in layer {l}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prefill = Vec::with_capacity(activation.num_layers());
    for row in &activation.rows {
        let layer: Vec<Vec<usize>> =
            (0..n_tokens).map(|_| sample_top_k(row, top_k, &mut rng)).collect();
        prefill.push(layer);
    }
    Ok(RoutingTrace {
        prompt_id: format!("sampled-{seed}"),
        decode: vec![Vec::new(); experts_per_layer.len()],
        experts_per_layer,
        top_k,
        prefill,
    })
}

// ── Clustered corpus generation ──────────────────────────────────────────────

/// Shape parameters for the synthetic prompt corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusParams {
    pub num_layers: usize,
    pub experts_per_layer: usize,
    pub top_k: usize,
    /// Embedding dimension; 64 at desk scale.
    pub embed_dim: usize,
    /// Inclusive range of prompt token counts.
    pub tokens_min: usize,
    pub tokens_max: usize,
    /// Decode tokens per trace.
    pub n_out: usize,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            num_layers: 4,
            experts_per_layer: 8,
            top_k: 2,
            embed_dim: 64,
            tokens_min: 8,
            tokens_max: 32,
            n_out: 16,
        }
    }
}

/// One generated prompt with its ground-truth routing and cluster label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub cluster: usize,
    pub prompt: Prompt,
    pub trace: RoutingTrace,
}

fn unit_gaussian(dim: usize, rng: &mut ChaCha8Rng) -> Vec<Scalar> {
    let mut v: Vec<Scalar> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<Scalar>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    v
}

/// Generate a clustered corpus. Prompts in a cluster share a Dirichlet-drawn
/// per-layer expert preference and embeddings near a common centroid
/// direction; routing is sampled from the preference. `skew = 0` collapses
/// preferences to uniform.
pub fn generate_clustered_corpus(
    params: &CorpusParams,
    num_clusters: usize,
    prompts_per_cluster: usize,
    skew: f64,
    seed: u64,
) -> Result<Vec<CorpusEntry>> {
    if num_clusters == 0 {
        return Err(Error::InvalidInput("num_clusters must be >= 1".into()));
    }
    if skew < 0.0 {
        return Err(Error::InvalidInput("skew must be >= 0".into()));
    }
    let k = params.experts_per_layer;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirichlet = Dirichlet::new(&vec![1.0f64; k]).expect("k >= 2");

    let mut entries = Vec::with_capacity(num_clusters * prompts_per_cluster);
    for cluster in 0..num_clusters {
        let centroid = unit_gaussian(params.embed_dim, &mut rng);
        // Per-layer preference: convex mix of uniform and a Dirichlet draw.
        let prefs: Vec<Vec<Scalar>> = (0..params.num_layers)
            .map(|_| {
                let draw = dirichlet.sample(&mut rng);
                draw.iter()
                    .map(|&d| (1.0 / k as Scalar + skew * d) / (1.0 + skew))
                    .collect()
            })
            .collect();
        for p in 0..prompts_per_cluster {
            let n_tokens = rng.gen_range(params.tokens_min..=params.tokens_max);
            let embedding: Vec<Vec<Scalar>> = (0..n_tokens)
                .map(|_| {
                    let noise = unit_gaussian(params.embed_dim, &mut rng);
                    let mut tok: Vec<Scalar> = centroid
                        .iter()
                        .zip(&noise)
                        .map(|(&c, &n)| c + 0.35 * n)
                        .collect();
                    let norm = tok.iter().map(|x| x * x).sum::<Scalar>().sqrt();
                    for x in &mut tok {
                        *x /= norm;
                    }
                    tok
                })
                .collect();
            let mut route = |count: usize| -> Vec<Vec<Vec<usize>>> {
                prefs
                    .iter()
                    .map(|pref| {
                        (0..count).map(|_| sample_top_k(pref, params.top_k, &mut rng)).collect()
                    })
                    .collect()
            };
            let prefill = route(n_tokens);
            let decode = route(params.n_out);
            let id = format!("c{cluster}-p{p}");
            entries.push(CorpusEntry {
                cluster,
                prompt: Prompt { id: id.clone(), embedding },
                trace: RoutingTrace {
                    prompt_id: id,
                    experts_per_layer: vec![k; params.num_layers],
                    top_k: params.top_k,
                    prefill,
                    decode,
                },
            });
        }
    }
    Ok(entries)
}

// ── Interchange formats ──────────────────────────────────────────────────────

/// Corpus manifest written next to trace files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub params: CorpusParams,
    pub num_clusters: usize,
    pub prompts_per_cluster: usize,
    pub skew: f64,
    pub seed: u64,
    pub prompts: Vec<ManifestPrompt>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestPrompt {
    pub id: String,
    pub cluster: usize,
}

/// Write traces as CSV rows `(prompt_id, phase, token_index, layer, expert)`.
pub fn traces_to_csv<W: Write>(traces: &[RoutingTrace], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["prompt_id", "phase", "token_index", "layer", "expert"])?;
    for trace in traces {
        for (phase_name, phase) in [("prefill", &trace.prefill), ("decode", &trace.decode)] {
            for (layer, tokens) in phase.iter().enumerate() {
                for (tok, experts) in tokens.iter().enumerate() {
                    for &e in experts {
                        w.write_record([
                            trace.prompt_id.as_str(),
                            phase_name,
                            &tok.to_string(),
                            &layer.to_string(),
                            &e.to_string(),
                        ])?;
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

const TRACE_CACHE_MAGIC: &[u8; 8] = b"MOETRC01";

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Compact binary cache for a set of traces.
pub fn save_traces_bin(traces: &[RoutingTrace], path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(TRACE_CACHE_MAGIC)?;
    write_u32(&mut w, traces.len() as u32)?;
    for t in traces {
        let id = t.prompt_id.as_bytes();
        write_u32(&mut w, id.len() as u32)?;
        w.write_all(id)?;
        write_u32(&mut w, t.top_k as u32)?;
        write_u32(&mut w, t.experts_per_layer.len() as u32)?;
        for &k in &t.experts_per_layer {
            write_u32(&mut w, k as u32)?;
        }
        for phase in [&t.prefill, &t.decode] {
            for layer in phase {
                write_u32(&mut w, layer.len() as u32)?;
                for experts in layer {
                    for &e in experts {
                        write_u32(&mut w, e as u32)?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Read back a binary trace cache written by [`save_traces_bin`].
pub fn load_traces_bin(path: impl AsRef<Path>) -> Result<Vec<RoutingTrace>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != TRACE_CACHE_MAGIC {
        return Err(Error::InvalidInput("not a trace cache file".into()));
    }
    let count = read_u32(&mut r)? as usize;
    let mut traces = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = read_u32(&mut r)? as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id)?;
        let top_k = read_u32(&mut r)? as usize;
        let layers = read_u32(&mut r)? as usize;
        let mut experts_per_layer = Vec::with_capacity(layers);
        for _ in 0..layers {
            experts_per_layer.push(read_u32(&mut r)? as usize);
        }
        let read_phase = |r: &mut std::io::BufReader<std::fs::File>| -> Result<Vec<Vec<Vec<usize>>>> {
            let mut phase = Vec::with_capacity(layers);
            for _ in 0..layers {
                let tokens = read_u32(r)? as usize;
                let mut layer = Vec::with_capacity(tokens);
                for _ in 0..tokens {
                    let mut experts = Vec::with_capacity(top_k);
                    for _ in 0..top_k {
                        experts.push(read_u32(r)? as usize);
                    }
                    layer.push(experts);
                }
                phase.push(layer);
            }
            Ok(phase)
        };
        let prefill = read_phase(&mut r)?;
        let decode = read_phase(&mut r)?;
        let trace = RoutingTrace {
            prompt_id: String::from_utf8(id)
                .map_err(|_| Error::InvalidInput("bad prompt id".into()))?,
            experts_per_layer,
            top_k,
            prefill,
            decode,
        };
        trace.validate()?;
        traces.push(trace);
    }
    Ok(traces)
}
