//! Trace-driven simulation with sampled invocation overheads, plus the
//! brute-force oracles (exact partitioning, exhaustive plan search) and the
//! baseline comparison harness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::config::{BaselineProfiles, ExpertLatencyProfile, ModelSpec, PlatformSpec, SloSpec};
use crate::error::{Error, Result};
use crate::perf::{
    baseline_cost, check_constraints, evaluate_plan_with, BaselineKind, CostReport,
    DeploymentPlan, LatencyBreakdown, Workload,
};
use crate::planner::{lpt_partition, plan, PlanParams};
use crate::trace::{trace_to_activation, Phase, RoutingTrace};
use crate::Seconds;

/// Outcome of one simulated request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimResult {
    pub realized_ttft: Seconds,
    pub realized_tpot: Seconds,
    pub realized_cost: CostReport,
    pub latency: LatencyBreakdown,
    /// Realized ZT per (layer, replica).
    pub per_layer_replica_loads: Vec<Vec<Seconds>>,
    /// Every sampled invocation overhead, in event order.
    pub overhead_samples: Vec<Seconds>,
    pub seed: u64,
}

/// Replay a trace through the plan event-by-event, sampling the invocation
/// overhead `t_l^rem` per remote call from a lognormal excess model:
/// `t = mean * (1 + dispersion * LogNormal(-1/2, 1))`. The excess is strictly
/// positive, so every realized latency dominates the analytic mean-based
/// value, and dispersion 0 degenerates exactly to the analytic model.
pub fn simulate(
    plan: &DeploymentPlan,
    model: &ModelSpec,
    platform: &PlatformSpec,
    profile: &ExpertLatencyProfile,
    trace: &RoutingTrace,
    seed: u64,
) -> Result<SimResult> {
    if trace.num_layers() != model.num_layers
        || trace.experts_per_layer != model.experts_per_layer
    {
        return Err(Error::InvalidInput("simulate: trace does not match the model".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let excess = LogNormal::new(-0.5, 1.0).expect("valid lognormal");
    let dispersion = platform.invocation_overhead_dispersion;
    let mut samples = Vec::new();
    let out = {
        let samples = &mut samples;
        evaluate_plan_with(
            plan,
            model,
            platform,
            profile,
            Workload::Trace(trace),
            trace.n_in(),
            trace.n_out().max(1),
            |l| {
                let mean = platform.invocation_overhead_mean_seconds[l];
                let t = if dispersion == 0.0 {
                    mean
                } else {
                    mean * (1.0 + dispersion * excess.sample(&mut rng))
                };
                samples.push(t);
                t
            },
        )?
    };
    // Hard payload check on every realized replica dispatch.
    for (l, layer) in out.replica_payload_bytes.iter().enumerate() {
        for (j, &bytes) in layer.iter().enumerate() {
            if bytes > platform.payload_limit_bytes as f64 {
                return Err(Error::InvalidInput(format!(
                    "simulate: layer {l} replica {j} dispatches {bytes:.0} B over the \
                     {} B payload limit",
                    platform.payload_limit_bytes
                )));
            }
        }
    }
    Ok(SimResult {
        realized_ttft: out.latency.ttft,
        realized_tpot: out.latency.tpot,
        realized_cost: out.cost,
        latency: out.latency,
        per_layer_replica_loads: out.replica_seconds,
        overhead_samples: samples,
        seed,
    })
}

// ── Exact multiway partition oracle ─────────────────────────────────────────

/// Exact optimal makespan by branch-and-bound over all assignments; capped to
/// instances small enough to finish instantly.
pub fn oracle_partition(loads: &[f64], z: usize) -> Result<f64> {
    if z == 0 {
        return Err(Error::InvalidInput("oracle_partition: z must be >= 1".into()));
    }
    if loads.len() > 14 || z > 4 {
        return Err(Error::OracleCap(format!(
            "oracle_partition capped at 14 tasks / 4 replicas, got {} / {z}",
            loads.len()
        )));
    }
    if loads.is_empty() {
        return Ok(0.0);
    }
    let mut sorted: Vec<f64> = loads.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    // Seed the bound with LPT, which is always feasible.
    let tasks: Vec<(usize, f64)> = sorted.iter().cloned().enumerate().collect();
    let mut best = lpt_partition(&tasks, z)?.1;
    let mut bins = vec![0.0f64; z];

    fn dfs(sorted: &[f64], i: usize, bins: &mut [f64], best: &mut f64) {
        if i == sorted.len() {
            let makespan = bins.iter().cloned().fold(0.0, f64::max);
            if makespan < *best {
                *best = makespan;
            }
            return;
        }
        let mut seen = Vec::with_capacity(bins.len());
        for j in 0..bins.len() {
            // Symmetry pruning: identical current loads are interchangeable.
            if seen.iter().any(|&s: &f64| (s - bins[j]).abs() < 1e-12) {
                continue;
            }
            seen.push(bins[j]);
            if bins[j] + sorted[i] >= *best {
                continue;
            }
            bins[j] += sorted[i];
            dfs(sorted, i + 1, bins, best);
            bins[j] -= sorted[i];
        }
    }
    dfs(&sorted, 0, &mut bins, &mut best);
    Ok(best)
}

// ── Exhaustive plan oracle ──────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct OracleCaps {
    pub max_layers: usize,
    pub max_experts: usize,
    pub max_specs: usize,
    pub max_replicas: usize,
    /// Upper bound on enumerated plan candidates.
    pub max_candidates: u64,
}

impl Default for OracleCaps {
    fn default() -> Self {
        OracleCaps {
            max_layers: 3,
            max_experts: 6,
            max_specs: 8,
            max_replicas: 3,
            max_candidates: 5_000_000,
        }
    }
}

/// Exhaustive search over remote subsets, remote memory specs, replica
/// counts, and the main spec; replica partitions come from LPT. Returns the
/// feasible minimum-cost plan under expected-mode evaluation, or None if no
/// candidate satisfies the constraints.
pub fn oracle_grid_plan(
    model: &ModelSpec,
    platform: &PlatformSpec,
    profile: &ExpertLatencyProfile,
    slo: &SloSpec,
    activation: &crate::trace::ActivationMatrix,
    n_in: usize,
    n_out: usize,
    caps: &OracleCaps,
) -> Result<Option<(DeploymentPlan, f64)>> {
    if model.num_layers > caps.max_layers {
        return Err(Error::OracleCap(format!(
            "oracle_grid_plan capped at {} layers",
            caps.max_layers
        )));
    }
    if model.experts_per_layer.iter().any(|&k| k > caps.max_experts) {
        return Err(Error::OracleCap(format!(
            "oracle_grid_plan capped at {} experts per layer",
            caps.max_experts
        )));
    }
    if platform.memory_grid_main.len() > caps.max_specs {
        return Err(Error::OracleCap(format!(
            "oracle_grid_plan capped at {} memory specs",
            caps.max_specs
        )));
    }
    let z_cap = caps.max_replicas.min(platform.max_replicas);
    // Per-layer candidate lists: (flags, spec, z, partition).
    type LayerChoice = (Vec<bool>, Option<usize>, usize, Vec<Vec<usize>>);
    let mut per_layer: Vec<Vec<LayerChoice>> = Vec::new();
    for l in 0..model.num_layers {
        let k = model.experts_per_layer[l];
        let mut choices: Vec<LayerChoice> = Vec::new();
        for mask in 0u32..(1 << k) {
            let flags: Vec<bool> = (0..k).map(|e| mask & (1 << e) != 0).collect();
            if mask == 0 {
                choices.push((flags, None, 1, Vec::new()));
                continue;
            }
            let remote: Vec<usize> = (0..k).filter(|&e| flags[e]).collect();
            for v in 0..platform.memory_grid_remote.len() {
                let tasks = crate::planner::remote_task_loads(
                    model, platform, profile, activation, &remote, l, v, n_in,
                );
                for z in 1..=z_cap.min(remote.len()) {
                    let (subsets, _) = lpt_partition(&tasks, z)?;
                    choices.push((flags.clone(), Some(v), z, subsets));
                }
            }
        }
        per_layer.push(choices);
    }
    let mut candidates: u64 = platform.memory_grid_main.len() as u64;
    for c in &per_layer {
        candidates = candidates.saturating_mul(c.len() as u64);
    }
    if candidates > caps.max_candidates {
        return Err(Error::OracleCap(format!(
            "oracle_grid_plan: {candidates} candidates exceed cap {}",
            caps.max_candidates
        )));
    }

    let mut best: Option<(DeploymentPlan, f64)> = None;
    let mut idx = vec![0usize; model.num_layers];
    loop {
        for w in 0..platform.memory_grid_main.len() {
            let mut plan = DeploymentPlan {
                remote_flags: Vec::new(),
                remote_mem_spec: Vec::new(),
                replica_count: Vec::new(),
                main_mem_spec: w,
                replica_partition: Vec::new(),
            };
            for (l, &i) in idx.iter().enumerate() {
                let (flags, spec, z, parts) = &per_layer[l][i];
                plan.remote_flags.push(flags.clone());
                plan.remote_mem_spec.push(*spec);
                plan.replica_count.push(*z);
                plan.replica_partition.push(parts.clone());
            }
            let flags = check_constraints(
                &plan,
                model,
                platform,
                profile,
                slo,
                Workload::Expected(activation),
                n_in,
                n_out,
            )?;
            if !flags.all_pass() {
                continue;
            }
            let out = crate::perf::evaluate_plan(
                &plan,
                model,
                platform,
                profile,
                Workload::Expected(activation),
                n_in,
                n_out,
            )?;
            if best.as_ref().map_or(true, |&(_, c)| out.cost.total < c) {
                best = Some((plan, out.cost.total));
            }
        }
        // Advance the mixed-radix counter over per-layer choices.
        let mut l = 0;
        loop {
            if l == idx.len() {
                return Ok(best);
            }
            idx[l] += 1;
            if idx[l] < per_layer[l].len() {
                break;
            }
            idx[l] = 0;
            l += 1;
        }
    }
}

/// One oracle verdict, used by the CLI oracle tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    pub oracle_name: String,
    pub instance_descriptor: String,
    pub oracle_value: f64,
    pub candidate_value: f64,
    pub ratio_or_gap: f64,
    pub pass: bool,
}

// ── Baseline comparison ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRow {
    pub request: String,
    pub plan_cost: f64,
    pub plan_ttft: Seconds,
    pub plan_tpot: Seconds,
    pub cpu_cost: f64,
    pub gpu_cost: f64,
    pub mix_cost: f64,
    pub fetch_cost: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub total_plan: f64,
    pub total_cpu: f64,
    pub total_gpu: f64,
    pub total_mix: f64,
    pub total_fetch: f64,
    /// Cost reduction versus the cheapest baseline, percent.
    pub reduction_vs_best_percent: f64,
}

/// Plan and simulate every trace, run the four deployment baselines on the
/// same traces, and aggregate.
pub fn compare_baselines(
    model: &ModelSpec,
    platform: &PlatformSpec,
    profile: &ExpertLatencyProfile,
    baselines: &BaselineProfiles,
    slo: &SloSpec,
    traces: &[RoutingTrace],
    seed: u64,
    params: &PlanParams,
) -> Result<CompareReport> {
    if traces.is_empty() {
        return Err(Error::InvalidInput("compare_baselines: need at least one trace".into()));
    }
    let mut rows = Vec::with_capacity(traces.len());
    let (mut tp, mut tc, mut tg, mut tm, mut tf) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, trace) in traces.iter().enumerate() {
        let activation = trace_to_activation(trace, Phase::Prefill)?;
        let n_in = trace.n_in();
        let n_out = trace.n_out().max(1);
        let report = plan(model, platform, profile, slo, &activation, n_in, n_out, params)?;
        let sim = simulate(
            &report.plan,
            model,
            platform,
            profile,
            trace,
            seed.wrapping_add(i as u64),
        )?;
        let mut costs = [0.0f64; 4];
        for (slot, kind) in [
            BaselineKind::Cpu,
            BaselineKind::Gpu,
            BaselineKind::Mix,
            BaselineKind::Fetch,
        ]
        .iter()
        .enumerate()
        {
            let (cost, _) = baseline_cost(
                *kind, model, platform, profile, baselines, trace, n_in, n_out,
            )?;
            costs[slot] = cost.total;
        }
        tp += sim.realized_cost.total;
        tc += costs[0];
        tg += costs[1];
        tm += costs[2];
        tf += costs[3];
        rows.push(CompareRow {
            request: trace.prompt_id.clone(),
            plan_cost: sim.realized_cost.total,
            plan_ttft: sim.realized_ttft,
            plan_tpot: sim.realized_tpot,
            cpu_cost: costs[0],
            gpu_cost: costs[1],
            mix_cost: costs[2],
            fetch_cost: costs[3],
        });
    }
    let best = tc.min(tg).min(tm).min(tf);
    Ok(CompareReport {
        rows,
        total_plan: tp,
        total_cpu: tc,
        total_gpu: tg,
        total_mix: tm,
        total_fetch: tf,
        reduction_vs_best_percent: (best - tp) / best * 100.0,
    })
}

/// Write a comparison report as CSV: one row per request plus a TOTAL row.
pub fn write_compare_csv(report: &CompareReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record([
        "request", "plan_cost", "plan_ttft", "plan_tpot", "cpu_cost", "gpu_cost", "mix_cost",
        "fetch_cost",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.request.clone(),
            format!("{:.6e}", r.plan_cost),
            format!("{:.6}", r.plan_ttft),
            format!("{:.6}", r.plan_tpot),
            format!("{:.6e}", r.cpu_cost),
            format!("{:.6e}", r.gpu_cost),
            format!("{:.6e}", r.mix_cost),
            format!("{:.6e}", r.fetch_cost),
        ])?;
    }
    w.write_record([
        "TOTAL".to_string(),
        format!("{:.6e}", report.total_plan),
        String::new(),
        format!("{:.2}", report.reduction_vs_best_percent),
        format!("{:.6e}", report.total_cpu),
        format!("{:.6e}", report.total_gpu),
        format!("{:.6e}", report.total_mix),
        format!("{:.6e}", report.total_fetch),
    ])?;
    w.flush().map_err(|e| Error::Io(e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{preset_bundle, Preset, SpecProfile};
    use crate::curve::Curve;
    use crate::perf::evaluate_plan;
    use crate::trace::{sample_routing, ActivationMatrix};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn toy() -> (ModelSpec, PlatformSpec, ExpertLatencyProfile, ActivationMatrix) {
        let model = ModelSpec {
            num_layers: 2,
            experts_per_layer: vec![4, 4],
            token_embedding_bytes: 1_000,
            kv_cache_bytes_per_token: vec![0, 0],
            non_expert_memory_bytes: vec![2_000, 2_000],
            expert_memory_bytes: vec![vec![10_000_000; 4]; 2],
            top_k: 1,
            non_expert_prefill_curve: vec![Curve::linear(0.01, 4096.0); 2],
            swap_latency_curve: Curve::linear(1.0e-5, 4096.0),
            non_expert_decode_seconds: vec![0.02, 0.02],
        };
        let platform = PlatformSpec {
            memory_grid_main: vec![
                200_000_000, 400_000_000, 600_000_000, 800_000_000, 1_000_000_000,
            ],
            memory_grid_remote: vec![200_000_000, 400_000_000, 600_000_000, 800_000_000],
            grid_step_bytes: 200_000_000,
            cpu_price_per_mb_second: 1.0e-8,
            gpu_price_per_mb_second: 3.0e-8,
            network_bandwidth_bytes_per_second: 1.25e8,
            payload_limit_bytes: 6_000_000,
            invocation_overhead_mean_seconds: vec![0.05, 0.05],
            invocation_overhead_dispersion: 0.05,
            max_replicas: 4,
            cold_start_curve: Curve::new(vec![1.0, 2.0e9], vec![0.5, 1.5]).unwrap(),
            vcpu_per_gb: 1,
        };
        let layers = (0..2)
            .map(|_| {
                platform
                    .memory_grid_main
                    .iter()
                    .map(|&m| {
                        let gb = m as f64 / crate::BYTES_PER_GB;
                        let t = 0.5 * (-3.0 * gb).exp() + 0.05;
                        SpecProfile {
                            batch_curve: Curve::linear(t, 4096.0),
                            single_token_seconds: t,
                        }
                    })
                    .collect()
            })
            .collect();
        let profile = ExpertLatencyProfile { layers };
        let activation = ActivationMatrix {
            rows: vec![vec![0.4, 0.3, 0.2, 0.1], vec![0.1, 0.2, 0.3, 0.4]],
        };
        (model, platform, profile, activation)
    }

    fn toy_plan() -> DeploymentPlan {
        DeploymentPlan {
            remote_flags: vec![vec![false, false, true, true], vec![true, false, false, false]],
            remote_mem_spec: vec![Some(1), Some(2)],
            replica_count: vec![2, 1],
            main_mem_spec: 3,
            replica_partition: vec![vec![vec![2], vec![3]], vec![vec![0]]],
        }
    }

    fn toy_trace(seed: u64) -> RoutingTrace {
        let (model, _, _, activation) = toy();
        let mut t = sample_routing(&activation, 8, model.top_k, seed).unwrap();
        t.decode = sample_routing(&activation, 4, model.top_k, seed ^ 0xabcd).unwrap().prefill;
        t
    }

    #[test]
    fn zero_dispersion_equals_analytic() {
        let (model, mut platform, profile, _) = toy();
        platform.invocation_overhead_dispersion = 0.0;
        let trace = toy_trace(1);
        let sim = simulate(&toy_plan(), &model, &platform, &profile, &trace, 99).unwrap();
        let analytic = evaluate_plan(
            &toy_plan(),
            &model,
            &platform,
            &profile,
            Workload::Trace(&trace),
            trace.n_in(),
            trace.n_out(),
        )
        .unwrap();
        assert_relative_eq!(sim.realized_ttft, analytic.latency.ttft, max_relative = 1e-12);
        assert_relative_eq!(sim.realized_tpot, analytic.latency.tpot, max_relative = 1e-12);
        assert_relative_eq!(
            sim.realized_cost.total,
            analytic.cost.total,
            max_relative = 1e-12
        );
    }

    #[test]
    fn simulation_is_deterministic_per_seed_and_dominates_analytic() {
        let (model, platform, profile, _) = toy();
        let trace = toy_trace(2);
        let a = simulate(&toy_plan(), &model, &platform, &profile, &trace, 5).unwrap();
        let b = simulate(&toy_plan(), &model, &platform, &profile, &trace, 5).unwrap();
        assert_eq!(a.realized_ttft, b.realized_ttft);
        assert_eq!(a.overhead_samples, b.overhead_samples);
        let c = simulate(&toy_plan(), &model, &platform, &profile, &trace, 6).unwrap();
        assert_ne!(a.realized_ttft, c.realized_ttft);
        // Positive-excess overhead model: realized >= analytic-at-mean.
        let analytic = evaluate_plan(
            &toy_plan(),
            &model,
            &platform,
            &profile,
            Workload::Trace(&trace),
            trace.n_in(),
            trace.n_out(),
        )
        .unwrap();
        assert!(a.realized_ttft >= analytic.latency.ttft - 1e-9);
        assert!(a.realized_tpot >= analytic.latency.tpot - 1e-9);
        for (l, mean) in platform.invocation_overhead_mean_seconds.iter().enumerate() {
            let _ = l;
            assert!(a.overhead_samples.iter().all(|&t| t > 0.0));
            let _ = mean;
        }
    }

    #[test]
    fn mean_realized_tpot_tracks_analytic() {
        let (model, platform, profile, _) = toy();
        let trace = toy_trace(3);
        let analytic = evaluate_plan(
            &toy_plan(),
            &model,
            &platform,
            &profile,
            Workload::Trace(&trace),
            trace.n_in(),
            trace.n_out(),
        )
        .unwrap();
        let mean: f64 = (0..200)
            .map(|s| {
                simulate(&toy_plan(), &model, &platform, &profile, &trace, s)
                    .unwrap()
                    .realized_tpot
            })
            .sum::<f64>()
            / 200.0;
        assert_relative_eq!(mean, analytic.latency.tpot, max_relative = 0.03);
    }

    #[test]
    fn payload_violation_is_a_hard_error() {
        let (model, mut platform, profile, _) = toy();
        platform.payload_limit_bytes = 1_500; // two routed tokens overflow it
        let trace = toy_trace(4);
        let err = simulate(&toy_plan(), &model, &platform, &profile, &trace, 1).unwrap_err();
        assert!(err.to_string().contains("payload"), "{err}");
    }

    #[test]
    fn partition_oracle_examples() {
        assert_relative_eq!(
            oracle_partition(&[3.0, 3.0, 2.0, 2.0, 2.0], 2).unwrap(),
            6.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(oracle_partition(&[5.0], 3).unwrap(), 5.0, max_relative = 1e-12);
        assert_relative_eq!(
            oracle_partition(&[2.0; 6], 3).unwrap(),
            4.0,
            max_relative = 1e-12
        );
        assert_eq!(oracle_partition(&[], 2).unwrap(), 0.0);
        assert!(matches!(oracle_partition(&[1.0; 15], 2), Err(Error::OracleCap(_))));
        assert!(matches!(oracle_partition(&[1.0; 4], 5), Err(Error::OracleCap(_))));
    }

    #[test]
    fn lpt_respects_approximation_ratio_against_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..500 {
            let n = rng.gen_range(1..=10usize);
            let z = rng.gen_range(1..=4usize);
            let loads: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=100) as f64).collect();
            let tasks: Vec<(usize, f64)> = loads.iter().cloned().enumerate().collect();
            let (_, lpt) = lpt_partition(&tasks, z).unwrap();
            let opt = oracle_partition(&loads, z).unwrap();
            let ratio_cap = 4.0 / 3.0 - 1.0 / (3.0 * z as f64);
            assert!(
                lpt <= opt * ratio_cap + 1e-9,
                "LPT {lpt} vs OPT {opt} at z={z} loads {loads:?}"
            );
        }
    }

    #[test]
    fn grid_oracle_prefers_all_local_when_remote_is_useless() {
        let (model, mut platform, profile, activation) = toy();
        // Make remote calls ruinously slow: all-local must win.
        platform.invocation_overhead_mean_seconds = vec![50.0, 50.0];
        let slo = SloSpec { ttft_limit_seconds: 1e6, tpot_limit_seconds: 1e6 };
        let caps = OracleCaps { max_candidates: 2_000_000, ..OracleCaps::default() };
        let (best, _) = oracle_grid_plan(
            &model, &platform, &profile, &slo, &activation, 8, 4, &caps,
        )
        .unwrap()
        .unwrap();
        assert!(best.remote_flags.iter().flatten().all(|&r| !r));
    }

    #[test]
    fn grid_oracle_lower_bounds_planner() {
        let (model, platform, profile, activation) = toy();
        let slo = SloSpec { ttft_limit_seconds: 5.0, tpot_limit_seconds: 0.5 };
        let report = plan(
            &model,
            &platform,
            &profile,
            &slo,
            &activation,
            8,
            4,
            &PlanParams::default(),
        )
        .unwrap();
        let caps = OracleCaps { max_candidates: 2_000_000, ..OracleCaps::default() };
        let (_, oracle_cost) = oracle_grid_plan(
            &model, &platform, &profile, &slo, &activation, 8, 4, &caps,
        )
        .unwrap()
        .expect("oracle should find a feasible plan");
        // The oracle minimizes over expected-mode-feasible plans, a superset
        // of what the worst-case-safe planner may return, so it lower-bounds
        // the planner's cost.
        assert!(
            oracle_cost <= report.eval.cost.total + 1e-12,
            "planner {} vs oracle {oracle_cost}",
            report.eval.cost.total
        );
    }

    #[test]
    fn infeasible_slo_consistent_between_planner_and_oracle() {
        let (model, platform, profile, activation) = toy();
        let slo = SloSpec { ttft_limit_seconds: 0.01, tpot_limit_seconds: 0.001 };
        assert!(plan(
            &model,
            &platform,
            &profile,
            &slo,
            &activation,
            8,
            4,
            &PlanParams::default()
        )
        .is_err());
        let caps = OracleCaps { max_candidates: 2_000_000, ..OracleCaps::default() };
        let found = oracle_grid_plan(
            &model, &platform, &profile, &slo, &activation, 8, 4, &caps,
        )
        .unwrap();
        assert!(found.is_none());
    }

    #[test]
    fn compare_baselines_produces_rows_and_reduction() {
        let (model, platform, profile, _) = toy();
        let slo = SloSpec { ttft_limit_seconds: 5.0, tpot_limit_seconds: 0.5 };
        let baselines = BaselineProfiles {
            gpu_expert: (0..2)
                .map(|_| SpecProfile {
                    batch_curve: Curve::linear(0.01, 4096.0),
                    single_token_seconds: 0.01,
                })
                .collect(),
            cpu_non_expert_prefill_curve: vec![Curve::linear(0.15, 4096.0); 2],
            cpu_non_expert_decode_seconds: vec![0.3; 2],
            fetch_gpu_buffer_bytes: 10_000_000,
            fetch_bandwidth_bytes_per_second: 16.0e9,
        };
        let traces: Vec<RoutingTrace> = (0..3).map(toy_trace).collect();
        let report = compare_baselines(
            &model,
            &platform,
            &profile,
            &baselines,
            &slo,
            &traces,
            7,
            &PlanParams::default(),
        )
        .unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report.total_plan > 0.0);
        let best = report
            .total_cpu
            .min(report.total_gpu)
            .min(report.total_mix)
            .min(report.total_fetch);
        assert_relative_eq!(
            report.reduction_vs_best_percent,
            (best - report.total_plan) / best * 100.0,
            max_relative = 1e-12
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("compare.csv");
        write_compare_csv(&report, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 + 1);
        assert!(text.lines().last().unwrap().starts_with("TOTAL"));
    }

    #[test]
    fn preset_round_trips_through_simulation() {
        // Smoke: small preset plans and simulates end to end.
        let bundle = preset_bundle(Preset::Small8x12, 5);
        let activation = ActivationMatrix::uniform(&bundle.model.experts_per_layer);
        let report = plan(
            &bundle.model,
            &bundle.platform,
            &bundle.profile,
            &bundle.slo,
            &activation,
            64,
            16,
            &PlanParams::default(),
        )
        .unwrap();
        let trace = sample_routing(&activation, 64, bundle.model.top_k, 9).unwrap();
        let mut trace = trace;
        trace.decode =
            sample_routing(&activation, 16, bundle.model.top_k, 10).unwrap().prefill;
        let sim = simulate(
            &report.plan,
            &bundle.model,
            &bundle.platform,
            &bundle.profile,
            &trace,
            11,
        )
        .unwrap();
        assert!(sim.realized_cost.total > 0.0);
        assert!(sim.realized_ttft > 0.0);
    }
}
