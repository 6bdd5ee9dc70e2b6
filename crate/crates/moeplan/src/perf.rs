//! Analytic latency and cost evaluation of a deployment plan.
//!
//! Evaluation runs either with a ground-truth routing trace (exact per-expert
//! token counts) or with an expected activation matrix. The evaluator is
//! parameterized over the per-layer invocation overhead source: the analytic
//! model feeds configured means, the simulator feeds sampled values through
//! the same code path, which is what makes the zero-dispersion consistency
//! check exact.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::config::{BaselineProfiles, ExpertLatencyProfile, ModelSpec, PlatformSpec, SloSpec};
use crate::error::{Error, Result};
use crate::trace::{ActivationMatrix, RoutingTrace};
use crate::{Bytes, Scalar, Seconds, BYTES_PER_MB};

/// The planner's decision variables plus the prefill replica partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    /// `remote_flags[l][k]` = expert `k` of layer `l` runs remotely.
    pub remote_flags: Vec<Vec<bool>>,
    /// Remote-grid memory spec per layer; `None` when the layer has no remote
    /// experts.
    pub remote_mem_spec: Vec<Option<usize>>,
    /// Replicas serving the layer's remote experts during prefill.
    pub replica_count: Vec<usize>,
    /// Main-grid memory spec of the main model.
    pub main_mem_spec: usize,
    /// `replica_partition[l][j]` = expert ids assigned to replica `j`.
    pub replica_partition: Vec<Vec<Vec<usize>>>,
}

/// Versioned on-disk format for plans.
#[derive(Debug, Serialize, Deserialize)]
pub struct PlanFile {
    pub version: u32,
    pub plan: DeploymentPlan,
}

pub const PLAN_FILE_VERSION: u32 = 1;

pub fn save_plan(plan: &DeploymentPlan, path: impl AsRef<Path>) -> Result<()> {
    let file = PlanFile { version: PLAN_FILE_VERSION, plan: plan.clone() };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_plan(path: impl AsRef<Path>) -> Result<DeploymentPlan> {
    let file: PlanFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if file.version != PLAN_FILE_VERSION {
        return Err(Error::InvalidInput(format!("unsupported plan version {}", file.version)));
    }
    Ok(file.plan)
}

impl DeploymentPlan {
    /// Everything local: no remote experts, one main-model memory spec.
    pub fn all_local(model: &ModelSpec, main_mem_spec: usize) -> Self {
        DeploymentPlan {
            remote_flags: model.experts_per_layer.iter().map(|&k| vec![false; k]).collect(),
            remote_mem_spec: vec![None; model.num_layers],
            replica_count: vec![1; model.num_layers],
            main_mem_spec,
            replica_partition: vec![Vec::new(); model.num_layers],
        }
    }

    pub fn remote_experts(&self, l: usize) -> Vec<usize> {
        self.remote_flags[l]
            .iter()
            .enumerate()
            .filter_map(|(k, &r)| r.then_some(k))
            .collect()
    }

    pub fn has_remote(&self, l: usize) -> bool {
        self.remote_flags[l].iter().any(|&r| r)
    }

    /// Local expert weight bytes across all layers.
    pub fn local_weight_bytes(&self, model: &ModelSpec) -> Bytes {
        (0..model.num_layers)
            .map(|l| {
                self.remote_flags[l]
                    .iter()
                    .enumerate()
                    .filter(|&(_, &r)| !r)
                    .map(|(k, _)| model.expert_memory_bytes[l][k])
                    .sum::<Bytes>()
            })
            .sum()
    }

    /// Remote expert weight bytes of layer `l`.
    pub fn remote_weight_bytes(&self, model: &ModelSpec, l: usize) -> Bytes {
        self.remote_experts(l).iter().map(|&k| model.expert_memory_bytes[l][k]).sum()
    }

    pub fn validate(&self, model: &ModelSpec, platform: &PlatformSpec) -> Result<()> {
        let l = model.num_layers;
        if self.remote_flags.len() != l
            || self.remote_mem_spec.len() != l
            || self.replica_count.len() != l
            || self.replica_partition.len() != l
        {
            return Err(Error::InvalidInput("plan: per-layer lengths must match model".into()));
        }
        if self.main_mem_spec >= platform.memory_grid_main.len() {
            return Err(Error::InvalidInput("plan: main_mem_spec out of grid".into()));
        }
        for layer in 0..l {
            if self.remote_flags[layer].len() != model.experts_per_layer[layer] {
                return Err(Error::InvalidInput(format!(
                    "plan: layer {layer} remote_flags length mismatch"
                )));
            }
            if self.replica_count[layer] == 0 || self.replica_count[layer] > platform.max_replicas {
                return Err(Error::InvalidInput(format!(
                    "plan: layer {layer} replica count {} outside [1, {}]",
                    self.replica_count[layer], platform.max_replicas
                )));
            }
            let remote = self.remote_experts(layer);
            if remote.is_empty() {
                if self.remote_mem_spec[layer].is_some()
                    || self.replica_partition[layer].iter().any(|s| !s.is_empty())
                {
                    return Err(Error::InvalidInput(format!(
                        "plan: layer {layer} has remote settings but no remote experts"
                    )));
                }
                continue;
            }
            let Some(spec) = self.remote_mem_spec[layer] else {
                return Err(Error::InvalidInput(format!(
                    "plan: layer {layer} remote experts need a memory spec"
                )));
            };
            if spec >= platform.memory_grid_remote.len() {
                return Err(Error::InvalidInput(format!(
                    "plan: layer {layer} remote spec out of grid"
                )));
            }
            if self.replica_partition[layer].len() != self.replica_count[layer] {
                return Err(Error::InvalidInput(format!(
                    "plan: layer {layer} partition has {} subsets, expected {}",
                    self.replica_partition[layer].len(),
                    self.replica_count[layer]
                )));
            }
            let mut seen: Vec<usize> =
                self.replica_partition[layer].iter().flatten().copied().collect();
            seen.sort_unstable();
            let mut expected = remote.clone();
            expected.sort_unstable();
            if seen != expected {
                return Err(Error::InvalidInput(format!(
                    "plan: layer {layer} partition must cover exactly the remote experts"
                )));
            }
        }
        Ok(())
    }
}

/// Exact trace counts or expected counts from an activation matrix.
#[derive(Debug, Clone, Copy)]
pub enum Workload<'a> {
    Trace(&'a RoutingTrace),
    Expected(&'a ActivationMatrix),
}

impl<'a> Workload<'a> {
    /// Expected or exact tokens routed to each expert of layer `l` during
    /// prefill (`N^pre_{l,k}`).
    pub fn prefill_counts(&self, l: usize, n_in: usize) -> Vec<Scalar> {
        match self {
            Workload::Trace(t) => t.prefill_counts(l).iter().map(|&c| c as Scalar).collect(),
            Workload::Expected(a) => {
                a.rows[l].iter().map(|&s| n_in as Scalar * s).collect()
            }
        }
    }

    pub fn num_layers(&self) -> usize {
        match self {
            Workload::Trace(t) => t.num_layers(),
            Workload::Expected(a) => a.num_layers(),
        }
    }
}

/// Prefill/decode/TTFT/TPOT breakdown of one evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub pt_total: Seconds,
    pub pt_f: Vec<Seconds>,
    pub pt_e: Vec<Seconds>,
    pub gt_total: Seconds,
    pub cold_start: Seconds,
    pub ttft: Seconds,
    pub tpot: Seconds,
}

/// One constraint verdict with its slack (positive = satisfied margin).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub name: String,
    pub pass: bool,
    pub slack: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConstraintFlags {
    pub checks: Vec<ConstraintCheck>,
}

impl ConstraintFlags {
    fn push(&mut self, name: &str, slack: f64) {
        self.checks.push(ConstraintCheck { name: name.into(), pass: slack >= 0.0, slack });
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// All constraints except the two SLOs (10b TTFT, 10d TPOT).
    pub fn structural_pass(&self) -> bool {
        self.checks
            .iter()
            .filter(|c| !c.name.starts_with("10b") && !c.name.starts_with("10d"))
            .all(|c| c.pass)
    }

    pub fn first_failure(&self) -> Option<&ConstraintCheck> {
        self.checks.iter().find(|c| !c.pass)
    }
}

/// Cost terms of one evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostReport {
    pub main_cost: f64,
    pub remote_prefill_cost: f64,
    pub remote_decode_cost: f64,
    pub total: f64,
    pub gpu_memory_bytes: f64,
    pub constraint_flags: ConstraintFlags,
}

/// Full evaluation output, including per-replica detail for the simulator.
#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub latency: LatencyBreakdown,
    pub cost: CostReport,
    /// `replica_seconds[l][j]` = ZT of replica `j` in layer `l`.
    pub replica_seconds: Vec<Vec<Seconds>>,
    /// Bytes of token data dispatched to each replica.
    pub replica_payload_bytes: Vec<Vec<f64>>,
}

fn mb(bytes: f64) -> f64 {
    bytes / BYTES_PER_MB
}

/// GPU memory of the main model: token embeddings + kv-cache + non-expert
/// weights.
pub fn gpu_memory_bytes(model: &ModelSpec, n_in: usize, n_out: usize) -> f64 {
    let kv: Bytes = model.kv_cache_bytes_per_token.iter().sum();
    (n_in + n_out) as f64 * (model.token_embedding_bytes + kv) as f64
        + model.total_non_expert_bytes() as f64
}

/// Evaluate a plan with a caller-supplied invocation overhead source.
/// `overhead(l)` is called once per remote replica during prefill and once
/// per routed remote (token, expert) during decode, in deterministic order.
pub fn evaluate_plan_with<F: FnMut(usize) -> Seconds>(
    plan: &DeploymentPlan,
    model: &ModelSpec,
    platform: &PlatformSpec,
    profile: &ExpertLatencyProfile,
    workload: Workload,
    n_in: usize,
    n_out: usize,
    mut overhead: F,
) -> Result<EvalOutput> {
    plan.validate(model, platform)?;
    if n_in == 0 {
        return Err(Error::InvalidInput("n_in must be >= 1".into()));
    }
    if workload.num_layers() != model.num_layers {
        return Err(Error::InvalidInput("workload layer count mismatch".into()));
    }
    let d = model.token_embedding_bytes as f64;
    let bw = platform.network_bandwidth_bytes_per_second;
    let w = plan.main_mem_spec;
    // Remote specs are a prefix of the main grid, so remote index v profiles
    // as main index v.
    let remote_profile_idx = |l: usize| plan.remote_mem_spec[l].unwrap_or(0);

    // ── Prefill latency ──
    let mut pt_f = Vec::with_capacity(model.num_layers);
    let mut pt_e = Vec::with_capacity(model.num_layers);
    let mut replica_seconds = Vec::with_capacity(model.num_layers);
    let mut replica_payload_bytes = Vec::with_capacity(model.num_layers);
    let mut remote_prefill_cost = 0.0;
    for l in 0..model.num_layers {
        let counts = workload.prefill_counts(l, n_in);
        pt_f.push(model.non_expert_prefill_curve[l].eval(n_in as f64));

        let local_sum: Seconds = (0..model.experts_per_layer[l])
            .filter(|&k| !plan.remote_flags[l][k])
            .map(|k| profile.batch_seconds(l, w, counts[k]))
            .sum();

        let mut layer_replicas = Vec::new();
        let mut layer_payloads = Vec::new();
        let mut remote_max: Seconds = 0.0;
        if plan.has_remote(l) {
            let v = remote_profile_idx(l);
            for subset in &plan.replica_partition[l] {
                let work: Seconds = subset
                    .iter()
                    .map(|&k| profile.batch_seconds(l, v, counts[k]) + 2.0 * counts[k] * d / bw)
                    .sum();
                let zt = work + overhead(l);
                remote_max = remote_max.max(zt);
                layer_payloads.push(subset.iter().map(|&k| counts[k] * d).sum::<f64>());
                layer_replicas.push(zt);
            }
            let m_y = platform.remote_spec_bytes(plan.remote_mem_spec[l].unwrap()) as f64;
            let zt_sum: Seconds = layer_replicas.iter().sum();
            remote_prefill_cost += platform.cpu_price_per_mb_second * mb(m_y) * zt_sum;
        }
        let swap = 2.0 * model.swap_latency_curve.eval(n_in as f64);
        pt_e.push(local_sum.max(remote_max) + swap);
        replica_seconds.push(layer_replicas);
        replica_payload_bytes.push(layer_payloads);
    }
    let pt_total: Seconds = pt_f.iter().zip(&pt_e).map(|(f, e)| f + e).sum();

    // ── Decode latency, with remote decode cost accumulated per event ──
    let mut gt_total: Seconds = 0.0;
    let mut remote_decode_cost = 0.0;
    match workload {
        Workload::Trace(trace) => {
            let steps = trace.n_out();
            for i in 0..steps {
                for l in 0..model.num_layers {
                    let experts = &trace.decode[l][i];
                    let mut local_arm: Seconds = 0.0;
                    let mut remote_arm: Seconds = 0.0;
                    for &k in experts {
                        if plan.remote_flags[l][k] {
                            let v = remote_profile_idx(l);
                            let term = profile.single_token_seconds(l, v)
                                + 2.0 * d / bw
                                + overhead(l);
                            remote_arm += term;
                            let m_y =
                                platform.remote_spec_bytes(plan.remote_mem_spec[l].unwrap()) as f64;
                            remote_decode_cost +=
                                platform.cpu_price_per_mb_second * mb(m_y) * term;
                        } else {
                            local_arm += profile.single_token_seconds(l, w);
                        }
                    }
                    let swap = 2.0 * model.swap_latency_curve.eval(model.top_k as f64);
                    gt_total += model.non_expert_decode_seconds[l]
                        + swap
                        + local_arm.max(remote_arm);
                }
            }
        }
        Workload::Expected(activation) => {
            if n_out == 0 {
                return Err(Error::InvalidInput("n_out must be >= 1 in expected mode".into()));
            }
            // Expected routing per token: s_{l,k,i} -> top_k * s~_{l,k}.
            let mut per_token: Seconds = 0.0;
            for l in 0..model.num_layers {
                let t_rem_mean = overhead(l);
                let mut local_arm: Seconds = 0.0;
                let mut remote_arm: Seconds = 0.0;
                let mut remote_time_mass: f64 = 0.0;
                for k in 0..model.experts_per_layer[l] {
                    let p = model.top_k as Scalar * activation.rows[l][k];
                    if plan.remote_flags[l][k] {
                        let v = remote_profile_idx(l);
                        let term =
                            profile.single_token_seconds(l, v) + 2.0 * d / bw + t_rem_mean;
                        remote_arm += p * term;
                        remote_time_mass += p * term;
                    } else {
                        local_arm += p * profile.single_token_seconds(l, w);
                    }
                }
                if plan.has_remote(l) {
                    let m_y = platform.remote_spec_bytes(plan.remote_mem_spec[l].unwrap()) as f64;
                    remote_decode_cost += platform.cpu_price_per_mb_second
                        * mb(m_y)
                        * remote_time_mass
                        * n_out as f64;
                }
                let swap = 2.0 * model.swap_latency_curve.eval(model.top_k as f64);
                per_token += model.non_expert_decode_seconds[l] + swap + local_arm.max(remote_arm);
            }
            gt_total = per_token * n_out as f64;
        }
    }

    let effective_n_out = match workload {
        Workload::Trace(t) => t.n_out().max(1),
        Workload::Expected(_) => n_out,
    };

    // ── Main-model cost ──
    let m_g = gpu_memory_bytes(model, n_in, effective_n_out);
    let m_w = platform.main_spec_bytes(w) as f64;
    let main_cost = (pt_total + gt_total)
        * (platform.gpu_price_per_mb_second * mb(m_g)
            + platform.cpu_price_per_mb_second * mb(m_w));

    let cold_start = platform.cold_start_seconds(platform.main_spec_bytes(w));
    let latency = LatencyBreakdown {
        pt_total,
        pt_f,
        pt_e,
        gt_total,
        cold_start,
        ttft: pt_total + cold_start,
        tpot: gt_total / effective_n_out as f64,
    };
    let cost = CostReport {
        main_cost,
        remote_prefill_cost,
        remote_decode_cost,
        total: main_cost + remote_prefill_cost + remote_decode_cost,
        gpu_memory_bytes: m_g,
        constraint_flags: ConstraintFlags::default(),
    };
    Ok(EvalOutput { latency, cost, replica_seconds, replica_payload_bytes })
}

/// Analytic evaluation at the configured mean invocation overheads.
pub fn evaluate_plan(
    plan: &DeploymentPlan,
    model: &ModelSpec,
    platform: &PlatformSpec,
    profile: &ExpertLatencyProfile,
    workload: Workload,
    n_in: usize,
    n_out: usize,
) -> Result<EvalOutput> {
    let means = platform.invocation_overhead_mean_seconds.clone();
    evaluate_plan_with(plan, model, platform, profile, workload, n_in, n_out, |l| means[l])
}

/// Prefill latency only (analytic, mean overheads).
pub fn prefill_latency(
    plan: &DeploymentPlan,
    model: &ModelSpec,
    platform: &PlatformSpec,
    profile: &ExpertLatencyProfile,
    workload: Workload,
    n_in: usize,
) -> Result<LatencyBreakdown> {
    let out = evaluate_plan(plan, model, platform, profile, workload, n_in, 1)?;
    Ok(out.latency)
}

/// Decode latency only (analytic, mean overheads).
pub fn decode_latency(
    plan: &DeploymentPlan,
    model: &ModelSpec,
    platform: &PlatformSpec,
    profile: &ExpertLatencyProfile,
    workload: Workload,
    n_out: usize,
) -> Result<LatencyBreakdown> {
    let out = evaluate_plan(plan, model, platform, profile, workload, 1, n_out)?;
    Ok(out.latency)
}

/// Main-model cost for an already-computed latency.
pub fn main_model_cost(
    plan: &DeploymentPlan,
    model: &ModelSpec,
    platform: &PlatformSpec,
    latency: &LatencyBreakdown,
    n_in: usize,
    n_out: usize,
) -> f64 {
    let m_g = gpu_memory_bytes(model, n_in, n_out);
    let m_w = platform.main_spec_bytes(plan.main_mem_spec) as f64;
    (latency.pt_total + latency.gt_total)
        * (platform.gpu_price_per_mb_second * mb(m_g)
            + platform.cpu_price_per_mb_second * mb(m_w))
}

/// Remote prefill and decode cost.
pub fn remote_cost(
    plan: &DeploymentPlan,
    model: &ModelSpec,
    platform: &PlatformSpec,
    profile: &ExpertLatencyProfile,
    workload: Workload,
    n_in: usize,
    n_out: usize,
) -> Result<(f64, f64)> {
    let out = evaluate_plan(plan, model, platform, profile, workload, n_in, n_out)?;
    Ok((out.cost.remote_prefill_cost, out.cost.remote_decode_cost))
}

/// Evaluate constraints (10b)-(10i). Failures are reported with slack, never
/// thrown.
pub fn check_constraints(
    plan: &DeploymentPlan,
    model: &ModelSpec,
    platform: &PlatformSpec,
    profile: &ExpertLatencyProfile,
    slo: &SloSpec,
    workload: Workload,
    n_in: usize,
    n_out: usize,
) -> Result<ConstraintFlags> {
    let out = evaluate_plan(plan, model, platform, profile, workload, n_in, n_out)?;
    let mut flags = ConstraintFlags::default();
    flags.push("10b-ttft", slo.ttft_limit_seconds - out.latency.ttft);
    // 10c: exactly one memory spec per layer and for the main model. The
    // index encoding enforces it; validate() already rejected bad indices.
    flags.push("10c-one-spec", 0.0);
    flags.push("10d-tpot", slo.tpot_limit_seconds - out.latency.tpot);
    let d = model.token_embedding_bytes as f64;
    let mut remote_mem_slack = f64::INFINITY;
    for l in 0..model.num_layers {
        if !plan.has_remote(l) {
            continue;
        }
        let counts = workload.prefill_counts(l, n_in);
        let needed = plan.remote_weight_bytes(model, l) as f64
            + plan.remote_experts(l).iter().map(|&k| d * counts[k]).sum::<f64>();
        let have = platform.remote_spec_bytes(plan.remote_mem_spec[l].unwrap()) as f64;
        remote_mem_slack = remote_mem_slack.min(have - needed);
    }
    flags.push(
        "10e-remote-memory",
        if remote_mem_slack.is_finite() { remote_mem_slack } else { 0.0 },
    );
    let local_need = plan.local_weight_bytes(model) as f64 + d * n_out as f64;
    flags.push(
        "10f-main-memory",
        platform.main_spec_bytes(plan.main_mem_spec) as f64 - local_need,
    );
    let mut payload_slack = f64::INFINITY;
    for layer in &out.replica_payload_bytes {
        for &bytes in layer {
            payload_slack = payload_slack.min(platform.payload_limit_bytes as f64 - bytes);
        }
    }
    flags.push("10g-payload", if payload_slack.is_finite() { payload_slack } else { 0.0 });
    // 10h: binary domains are structural under the index encoding.
    flags.push("10h-domains", 0.0);
    let z_slack = plan
        .replica_count
        .iter()
        .map(|&z| platform.max_replicas as f64 - z as f64)
        .fold(f64::INFINITY, f64::min);
    flags.push("10i-replicas", z_slack);
    Ok(flags)
}

// ── Baselines ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Whole model on CPU memory at CPU pricing.
    Cpu,
    /// Whole model on GPU at GPU pricing.
    Gpu,
    /// Experts on CPU (all local), non-experts on GPU.
    Mix,
    /// MIX with experts pre-loaded to the GPU for compute, charged for the
    /// full CPU expert pool plus an active-expert GPU buffer.
    Fetch,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cpu" => Ok(BaselineKind::Cpu),
            "gpu" => Ok(BaselineKind::Gpu),
            "mix" => Ok(BaselineKind::Mix),
            "fetch" => Ok(BaselineKind::Fetch),
            other => Err(Error::InvalidInput(format!("unknown baseline `{other}`"))),
        }
    }
}

/// Smallest main-grid spec able to hold every expert plus decode token data;
/// falls back to the top of the ladder.
pub fn mix_main_spec(model: &ModelSpec, platform: &PlatformSpec, n_out: usize) -> usize {
    let need = model.total_expert_bytes() as f64 + model.token_embedding_bytes as f64 * n_out as f64;
    platform
        .smallest_main_spec_at_least(need)
        .unwrap_or(platform.memory_grid_main.len() - 1)
}

/// Cost and latency of a deployment baseline on a ground-truth trace.
pub fn baseline_cost(
    kind: BaselineKind,
    model: &ModelSpec,
    platform: &PlatformSpec,
    profile: &ExpertLatencyProfile,
    baselines: &BaselineProfiles,
    trace: &RoutingTrace,
    n_in: usize,
    n_out: usize,
) -> Result<(CostReport, LatencyBreakdown)> {
    match kind {
        BaselineKind::Mix => {
            // Structurally, MIX is the all-local plan on a grid spec large
            // enough for the full expert pool.
            let plan = DeploymentPlan::all_local(model, mix_main_spec(model, platform, n_out));
            let out = evaluate_plan(
                &plan,
                model,
                platform,
                profile,
                Workload::Trace(trace),
                n_in,
                n_out,
            )?;
            Ok((out.cost, out.latency))
        }
        BaselineKind::Cpu | BaselineKind::Gpu | BaselineKind::Fetch => {
            let top = platform.memory_grid_main.len() - 1;
            let steps = trace.n_out().max(1);
            let mut pt_f = Vec::with_capacity(model.num_layers);
            let mut pt_e = Vec::with_capacity(model.num_layers);
            let expert_batch = |l: usize, n: f64| -> Seconds {
                match kind {
                    BaselineKind::Cpu => profile.batch_seconds(l, top, n),
                    _ => baselines.gpu_expert[l].batch_curve.eval(n),
                }
            };
            let expert_single = |l: usize| -> Seconds {
                match kind {
                    BaselineKind::Cpu => profile.single_token_seconds(l, top),
                    _ => baselines.gpu_expert[l].single_token_seconds,
                }
            };
            for l in 0..model.num_layers {
                let f = match kind {
                    BaselineKind::Cpu => baselines.cpu_non_expert_prefill_curve[l].eval(n_in as f64),
                    _ => model.non_expert_prefill_curve[l].eval(n_in as f64),
                };
                pt_f.push(f);
                let counts = trace.prefill_counts(l);
                // Single device: no GPU<->CPU swap.
                let mut e: Seconds = counts.iter().map(|&c| expert_batch(l, c as f64)).sum();
                if kind == BaselineKind::Fetch {
                    // Stream every activated expert's weights into the GPU
                    // buffer once for the prefill batch.
                    let fetched: f64 = counts
                        .iter()
                        .enumerate()
                        .filter(|&(_, &c)| c > 0)
                        .map(|(k, _)| model.expert_memory_bytes[l][k] as f64)
                        .sum();
                    e += fetched / baselines.fetch_bandwidth_bytes_per_second;
                }
                pt_e.push(e);
            }
            let pt_total: Seconds = pt_f.iter().zip(&pt_e).map(|(f, e)| f + e).sum();
            let mut gt_total: Seconds = 0.0;
            for i in 0..trace.n_out() {
                for l in 0..model.num_layers {
                    let f = match kind {
                        BaselineKind::Cpu => baselines.cpu_non_expert_decode_seconds[l],
                        _ => model.non_expert_decode_seconds[l],
                    };
                    gt_total += f + trace.decode[l][i].len() as f64 * expert_single(l);
                    if kind == BaselineKind::Fetch {
                        // Each routed expert streams in before it can run.
                        let fetched: f64 = trace.decode[l][i]
                            .iter()
                            .map(|&k| model.expert_memory_bytes[l][k] as f64)
                            .sum();
                        gt_total += fetched / baselines.fetch_bandwidth_bytes_per_second;
                    }
                }
            }

            let m_g = gpu_memory_bytes(model, n_in, steps);
            let expert_pool = model.total_expert_bytes() as f64;
            // Charged memory per second of runtime.
            let (rate, cold_bytes) = match kind {
                BaselineKind::Cpu => {
                    let all = expert_pool + m_g; // whole model + token data on CPU
                    (platform.cpu_price_per_mb_second * mb(all), all)
                }
                BaselineKind::Gpu => {
                    let all = expert_pool + m_g;
                    (platform.gpu_price_per_mb_second * mb(all), all)
                }
                BaselineKind::Fetch => {
                    let m_w = platform.main_spec_bytes(mix_main_spec(model, platform, steps)) as f64;
                    let buffer = baselines.fetch_gpu_buffer_bytes as f64;
                    (
                        platform.gpu_price_per_mb_second * mb(m_g + buffer)
                            + platform.cpu_price_per_mb_second * mb(m_w),
                        m_w,
                    )
                }
                BaselineKind::Mix => unreachable!(),
            };
            let main_cost = (pt_total + gt_total) * rate;
            let cold_start = platform.cold_start_curve.eval(cold_bytes);
            let latency = LatencyBreakdown {
                pt_total,
                pt_f,
                pt_e,
                gt_total,
                cold_start,
                ttft: pt_total + cold_start,
                tpot: gt_total / steps as f64,
            };
            let cost = CostReport {
                main_cost,
                remote_prefill_cost: 0.0,
                remote_decode_cost: 0.0,
                total: main_cost,
                gpu_memory_bytes: m_g,
                constraint_flags: ConstraintFlags::default(),
            };
            Ok((cost, latency))
        }
    }
}
