//! Static model, platform, SLO, and latency-profile inputs.
//!
//! Everything here is immutable after load and shared read-only by the
//! planner, the analytic model, and the simulator. All byte quantities are
//! integers; all times are seconds as doubles. See `schema/config.md` in the
//! repository root for the JSON layout.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::curve::Curve;
use crate::error::{Error, Result};
use crate::{Bytes, Seconds};

/// `hidden_size` values of `bits`-wide activations, in bytes per token.
pub fn embedding_bytes(hidden_size: u64, bits: u64) -> Bytes {
    hidden_size * bits / 8
}

/// Static description of an MoE model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub num_layers: usize,
    /// Experts per layer, length `num_layers`.
    pub experts_per_layer: Vec<usize>,
    /// Bytes per token embedding (`D`).
    pub token_embedding_bytes: Bytes,
    /// Per-layer kv-cache bytes per token (`a_l`).
    pub kv_cache_bytes_per_token: Vec<Bytes>,
    /// Per-layer non-expert module memory, GPU-resident.
    pub non_expert_memory_bytes: Vec<Bytes>,
    /// Per-layer, per-expert weight memory.
    pub expert_memory_bytes: Vec<Vec<Bytes>>,
    /// Experts activated per token per layer.
    pub top_k: usize,
    /// Per-layer prefill curve of the non-expert module, `n -> seconds`.
    pub non_expert_prefill_curve: Vec<Curve>,
    /// GPU<->CPU transfer time for `n` tokens.
    pub swap_latency_curve: Curve,
    /// Per-layer single-token decode time of the non-expert module.
    pub non_expert_decode_seconds: Vec<Seconds>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let l = self.num_layers;
        if l == 0 {
            return Err(Error::config("num_layers", "must be positive"));
        }
        let check_len = |name: &str, len: usize| -> Result<()> {
            if len != l {
                return Err(Error::config(name, format!("length {len} != num_layers {l}")));
            }
            Ok(())
        };
        check_len("experts_per_layer", self.experts_per_layer.len())?;
        check_len("kv_cache_bytes_per_token", self.kv_cache_bytes_per_token.len())?;
        check_len("non_expert_memory_bytes", self.non_expert_memory_bytes.len())?;
        check_len("expert_memory_bytes", self.expert_memory_bytes.len())?;
        check_len("non_expert_prefill_curve", self.non_expert_prefill_curve.len())?;
        check_len("non_expert_decode_seconds", self.non_expert_decode_seconds.len())?;
        if self.top_k == 0 {
            return Err(Error::config("top_k", "must be positive"));
        }
        if self.token_embedding_bytes == 0 {
            return Err(Error::config("token_embedding_bytes", "must be positive"));
        }
        for (i, &k) in self.experts_per_layer.iter().enumerate() {
            if k < self.top_k {
                return Err(Error::config(
                    "experts_per_layer",
                    format!("layer {i} has {k} experts < top_k {}", self.top_k),
                ));
            }
            if self.expert_memory_bytes[i].len() != k {
                return Err(Error::config(
                    "expert_memory_bytes",
                    format!("layer {i} expects {k} expert entries"),
                ));
            }
            if self.expert_memory_bytes[i].iter().any(|&m| m == 0) {
                return Err(Error::config(
                    "expert_memory_bytes",
                    format!("layer {i} has a zero-size expert"),
                ));
            }
        }
        for (i, c) in self.non_expert_prefill_curve.iter().enumerate() {
            c.validate(&format!("non_expert_prefill_curve[{i}]"))?;
        }
        self.swap_latency_curve.validate("swap_latency_curve")?;
        if self.non_expert_decode_seconds.iter().any(|&t| t < 0.0) {
            return Err(Error::config("non_expert_decode_seconds", "must be non-negative"));
        }
        Ok(())
    }

    /// Total expert weight bytes in layer `l`.
    pub fn layer_expert_bytes(&self, l: usize) -> Bytes {
        self.expert_memory_bytes[l].iter().sum()
    }

    /// Total expert weight bytes across all layers.
    pub fn total_expert_bytes(&self) -> Bytes {
        (0..self.num_layers).map(|l| self.layer_expert_bytes(l)).sum()
    }

    /// Total non-expert (GPU-resident) weight bytes.
    pub fn total_non_expert_bytes(&self) -> Bytes {
        self.non_expert_memory_bytes.iter().sum()
    }
}

/// Serverless platform parameters: memory ladders, pricing, network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformSpec {
    /// Main-model memory ladder, strictly increasing bytes.
    pub memory_grid_main: Vec<Bytes>,
    /// Remote-expert ladder; must be a strict prefix of the main ladder.
    pub memory_grid_remote: Vec<Bytes>,
    pub grid_step_bytes: Bytes,
    /// Price of 1 MB of CPU memory for 1 second.
    pub cpu_price_per_mb_second: f64,
    /// Price of 1 MB of GPU memory for 1 second.
    pub gpu_price_per_mb_second: f64,
    pub network_bandwidth_bytes_per_second: f64,
    pub payload_limit_bytes: Bytes,
    /// Per-layer mean of the warm invocation overhead `t_l^rem`.
    pub invocation_overhead_mean_seconds: Vec<Seconds>,
    /// Simulator-only spread of `t_l^rem`; the analytic model uses the mean.
    pub invocation_overhead_dispersion: f64,
    pub max_replicas: usize,
    /// Cold-start time as a function of allocated main-model bytes.
    pub cold_start_curve: Curve,
    /// Platform assumption: vCPUs scale with memory, 1 per GB.
    pub vcpu_per_gb: u32,
}

impl PlatformSpec {
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if self.memory_grid_main.len() < 2 {
            return Err(Error::config("memory_grid_main", "needs at least 2 specs"));
        }
        for w in self.memory_grid_main.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::config("memory_grid_main", "must be strictly increasing"));
            }
        }
        if self.memory_grid_remote.len() >= self.memory_grid_main.len() {
            return Err(Error::config(
                "memory_grid_remote",
                "remote grid must be strict prefix of main grid",
            ));
        }
        if self.memory_grid_remote.is_empty()
            || self.memory_grid_remote[..] != self.memory_grid_main[..self.memory_grid_remote.len()]
        {
            return Err(Error::config(
                "memory_grid_remote",
                "remote grid must be strict prefix of main grid",
            ));
        }
        if self.grid_step_bytes == 0 {
            return Err(Error::config("grid_step_bytes", "must be positive"));
        }
        if self.cpu_price_per_mb_second <= 0.0 || self.gpu_price_per_mb_second <= 0.0 {
            return Err(Error::config("pricing", "prices must be positive"));
        }
        if self.network_bandwidth_bytes_per_second <= 0.0 {
            return Err(Error::config("network_bandwidth_bytes_per_second", "must be positive"));
        }
        if self.payload_limit_bytes == 0 {
            return Err(Error::config("payload_limit_bytes", "must be positive"));
        }
        if self.invocation_overhead_mean_seconds.len() != num_layers {
            return Err(Error::config(
                "invocation_overhead_mean_seconds",
                format!("length must equal num_layers {num_layers}"),
            ));
        }
        if self.invocation_overhead_dispersion < 0.0 {
            return Err(Error::config("invocation_overhead_dispersion", "must be non-negative"));
        }
        if self.max_replicas == 0 {
            return Err(Error::config("max_replicas", "must be positive"));
        }
        self.cold_start_curve.validate("cold_start_curve")?;
        Ok(())
    }

    pub fn main_spec_bytes(&self, v: usize) -> Bytes {
        self.memory_grid_main[v]
    }

    pub fn remote_spec_bytes(&self, v: usize) -> Bytes {
        self.memory_grid_remote[v]
    }

    /// Smallest main-grid index whose bytes are >= `bytes`.
    pub fn smallest_main_spec_at_least(&self, bytes: f64) -> Option<usize> {
        self.memory_grid_main.iter().position(|&m| m as f64 >= bytes)
    }

    /// Smallest remote-grid index whose bytes are >= `bytes`.
    pub fn smallest_remote_spec_at_least(&self, bytes: f64) -> Option<usize> {
        self.memory_grid_remote.iter().position(|&m| m as f64 >= bytes)
    }

    pub fn cold_start_seconds(&self, main_bytes: Bytes) -> Seconds {
        self.cold_start_curve.eval(main_bytes as f64)
    }
}

/// Latency SLOs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SloSpec {
    pub ttft_limit_seconds: Seconds,
    pub tpot_limit_seconds: Seconds,
}

impl SloSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ttft_limit_seconds <= 0.0 || self.tpot_limit_seconds <= 0.0 {
            return Err(Error::config("slo", "limits must be strictly positive"));
        }
        Ok(())
    }
}

/// Profiled expert latency under one memory specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecProfile {
    /// Batch compute time `n -> seconds` for one expert.
    pub batch_curve: Curve,
    /// Single-token compute time for one expert.
    pub single_token_seconds: Seconds,
}

/// Expert compute latency per (layer, memory spec). Experts within a layer
/// share a profile; indices follow the main memory grid, which covers the
/// remote grid as its prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertLatencyProfile {
    /// `layers[l][v]` profiles layer `l` under main-grid spec `v`.
    pub layers: Vec<Vec<SpecProfile>>,
}

impl ExpertLatencyProfile {
    pub fn validate(&self, num_layers: usize, num_specs: usize) -> Result<()> {
        if self.layers.len() != num_layers {
            return Err(Error::config("profile.layers", "length must equal num_layers"));
        }
        for (l, specs) in self.layers.iter().enumerate() {
            if specs.len() != num_specs {
                return Err(Error::config(
                    "profile.layers",
                    format!("layer {l}: expected one profile per main grid spec ({num_specs})"),
                ));
            }
            for (v, p) in specs.iter().enumerate() {
                p.batch_curve.validate(&format!("profile[{l}][{v}].batch_curve"))?;
                let b1 = p.batch_curve.eval(1.0);
                let rel = (b1 - p.single_token_seconds).abs()
                    / p.single_token_seconds.abs().max(1e-300);
                if rel > 1e-9 {
                    return Err(Error::config(
                        "profile",
                        format!("layer {l} spec {v}: batch_curve(1) != single_token_seconds"),
                    ));
                }
            }
            // More memory (and vCPU) never slower.
            for v in 1..specs.len() {
                if specs[v].single_token_seconds > specs[v - 1].single_token_seconds + 1e-12 {
                    return Err(Error::config(
                        "profile",
                        format!("layer {l}: latency increases from spec {} to {v}", v - 1),
                    ));
                }
                for probe in [1.0, 16.0, 256.0, 4096.0] {
                    if specs[v].batch_curve.eval(probe)
                        > specs[v - 1].batch_curve.eval(probe) + 1e-12
                    {
                        return Err(Error::config(
                            "profile",
                            format!("layer {l}: batch latency increases with memory at n={probe}"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Batch compute time for one expert of layer `l` under main-grid spec
    /// `v` processing `n` tokens.
    pub fn batch_seconds(&self, l: usize, v: usize, n: f64) -> Seconds {
        self.layers[l][v].batch_curve.eval(n)
    }

    pub fn single_token_seconds(&self, l: usize, v: usize) -> Seconds {
        self.layers[l][v].single_token_seconds
    }
}

/// Latency profiles for the comparison baselines: experts on GPU (Fetch/GPU)
/// and non-expert modules on CPU (CPU baseline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineProfiles {
    /// Per-layer expert profile when the expert runs on the GPU.
    pub gpu_expert: Vec<SpecProfile>,
    /// Per-layer non-expert prefill curve when the whole model runs on CPU.
    pub cpu_non_expert_prefill_curve: Vec<Curve>,
    /// Per-layer non-expert decode time on CPU.
    pub cpu_non_expert_decode_seconds: Vec<Seconds>,
    /// GPU buffer bytes Fetch keeps for actively loaded experts.
    pub fetch_gpu_buffer_bytes: Bytes,
    /// Host-to-GPU bandwidth for Fetch's on-demand expert streaming.
    pub fetch_bandwidth_bytes_per_second: f64,
}

impl BaselineProfiles {
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if self.gpu_expert.len() != num_layers
            || self.cpu_non_expert_prefill_curve.len() != num_layers
            || self.cpu_non_expert_decode_seconds.len() != num_layers
        {
            return Err(Error::config("baseline_profiles", "per-layer lengths must match model"));
        }
        for (l, p) in self.gpu_expert.iter().enumerate() {
            p.batch_curve.validate(&format!("baseline_profiles.gpu_expert[{l}]"))?;
        }
        for (l, c) in self.cpu_non_expert_prefill_curve.iter().enumerate() {
            c.validate(&format!("baseline_profiles.cpu_non_expert_prefill_curve[{l}]"))?;
        }
        if !(self.fetch_bandwidth_bytes_per_second > 0.0) {
            return Err(Error::config(
                "baseline_profiles.fetch_bandwidth_bytes_per_second",
                "must be positive",
            ));
        }
        Ok(())
    }
}

/// Everything a run needs, as stored in one JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigBundle {
    pub model: ModelSpec,
    pub platform: PlatformSpec,
    pub slo: SloSpec,
    pub profile: ExpertLatencyProfile,
    pub baseline_profiles: BaselineProfiles,
}

impl ConfigBundle {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.platform.validate(self.model.num_layers)?;
        self.slo.validate()?;
        self.profile.validate(self.model.num_layers, self.platform.memory_grid_main.len())?;
        self.baseline_profiles.validate(self.model.num_layers)?;
        Ok(())
    }
}

/// Load and validate a JSON config. Invariant violations are errors naming
/// the offending field.
pub fn load_config(path: impl AsRef<Path>) -> Result<ConfigBundle> {
    let text = std::fs::read_to_string(path)?;
    let bundle: ConfigBundle = serde_json::from_str(&text)?;
    bundle.validate()?;
    Ok(bundle)
}

/// Write a config as pretty JSON; `load_config` round-trips it exactly.
pub fn save_config(bundle: &ConfigBundle, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(bundle)?;
    std::fs::write(path, text)?;
    Ok(())
}

// ── Synthetic presets ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 12 layers x 8 experts, top-2 routing. GPT2-scale.
    Small8x12,
    /// 27 layers x 64 experts, top-6 routing. Deepseek-v2-lite scale.
    Large64x27,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small-8x12" => Ok(Preset::Small8x12),
            "large-64x27" => Ok(Preset::Large64x27),
            other => Err(Error::InvalidInput(format!("unknown preset `{other}`"))),
        }
    }
}

struct PresetParams {
    num_layers: usize,
    experts: usize,
    top_k: usize,
    token_bytes: Bytes,
    kv_bytes: Bytes,
    non_expert_bytes: Bytes,
    expert_bytes: Bytes,
    grid_main: (Bytes, Bytes),
    grid_remote_max: Bytes,
    // Ground-truth memory scaling of per-token expert time, memory in GB:
    // t(m) = theta1 * exp(-theta2 * m) + theta3.
    theta1: f64,
    theta2: f64,
    theta3: f64,
    non_expert_prefill_slope: f64,
    non_expert_decode: f64,
    invocation_overhead: f64,
    ttft_limit: f64,
    tpot_limit: f64,
}

impl Preset {
    fn params(self) -> PresetParams {
        match self {
            Preset::Small8x12 => PresetParams {
                num_layers: 12,
                experts: 8,
                top_k: 2,
                token_bytes: embedding_bytes(768, 16),
                kv_bytes: 3_072,
                non_expert_bytes: 40_000_000,
                expert_bytes: 10_000_000,
                grid_main: (200_000_000, 5_000_000_000),
                grid_remote_max: 2_000_000_000,
                theta1: 0.012,
                theta2: 3.0,
                theta3: 0.0015,
                non_expert_prefill_slope: 1.0e-4,
                non_expert_decode: 5.0e-4,
                invocation_overhead: 0.015,
                ttft_limit: 20.0,
                tpot_limit: 0.40,
            },
            Preset::Large64x27 => PresetParams {
                num_layers: 27,
                experts: 64,
                top_k: 6,
                token_bytes: embedding_bytes(2048, 16),
                kv_bytes: 8_192,
                non_expert_bytes: 38_000_000,
                expert_bytes: 20_000_000,
                grid_main: (1_000_000_000, 40_000_000_000),
                grid_remote_max: 5_000_000_000,
                theta1: 0.010,
                theta2: 2.4,
                theta3: 0.0010,
                non_expert_prefill_slope: 2.0e-4,
                non_expert_decode: 8.0e-4,
                invocation_overhead: 0.003,
                ttft_limit: 60.0,
                tpot_limit: 1.2,
            },
        }
    }
}

fn grid(lo: Bytes, hi: Bytes, step: Bytes) -> Vec<Bytes> {
    let mut g = Vec::new();
    let mut m = lo;
    while m <= hi {
        g.push(m);
        m += step;
    }
    g
}

/// Deterministic jitter in `[1-spread, 1+spread]` from a seed and stream id.
fn jitter(seed: u64, stream: u64, spread: f64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9e3779b97f4a7c15));
    1.0 + spread * (rng.gen::<f64>() * 2.0 - 1.0)
}

/// Build a synthetic model and latency profile for a named preset.
/// Deterministic per seed: the same seed yields a byte-identical bundle.
pub fn synthetic_model(preset: Preset, seed: u64) -> (ModelSpec, ExpertLatencyProfile) {
    let b = preset_bundle(preset, seed);
    (b.model, b.profile)
}

/// Full config bundle for a preset, including platform, SLOs, and baseline
/// profiles.
pub fn preset_bundle(preset: Preset, seed: u64) -> ConfigBundle {
    let p = preset.params();
    let step = 100_000_000u64; // 100 MB ladder step
    let grid_main = grid(p.grid_main.0, p.grid_main.1, step);
    let grid_remote = grid(p.grid_main.0, p.grid_remote_max, step);

    let curve_points = [1.0, 4.0, 16.0, 64.0, 256.0, 1024.0, 4096.0];
    let mut layers = Vec::with_capacity(p.num_layers);
    let mut theta_jitter = Vec::with_capacity(p.num_layers);
    for l in 0..p.num_layers {
        theta_jitter.push((
            p.theta1 * jitter(seed, 3 * l as u64 + 1, 0.10),
            p.theta2 * jitter(seed, 3 * l as u64 + 2, 0.10),
            p.theta3 * jitter(seed, 3 * l as u64 + 3, 0.10),
        ));
    }
    for l in 0..p.num_layers {
        let (t1, t2, t3) = theta_jitter[l];
        let mut specs = Vec::with_capacity(grid_main.len());
        for &m in &grid_main {
            let gb = m as f64 / crate::BYTES_PER_GB;
            let single = t1 * (-t2 * gb).exp() + t3;
            let batch = Curve {
                points: curve_points.to_vec(),
                values: curve_points.iter().map(|&n| single * n).collect(),
            };
            specs.push(SpecProfile { batch_curve: batch, single_token_seconds: single });
        }
        layers.push(specs);
    }
    let profile = ExpertLatencyProfile { layers };

    let model = ModelSpec {
        num_layers: p.num_layers,
        experts_per_layer: vec![p.experts; p.num_layers],
        token_embedding_bytes: p.token_bytes,
        kv_cache_bytes_per_token: vec![p.kv_bytes; p.num_layers],
        non_expert_memory_bytes: vec![p.non_expert_bytes; p.num_layers],
        expert_memory_bytes: (0..p.num_layers)
            .map(|l| {
                (0..p.experts)
                    .map(|k| {
                        let j = jitter(seed, (1000 + l * p.experts + k) as u64, 0.05);
                        (p.expert_bytes as f64 * j) as Bytes
                    })
                    .collect()
            })
            .collect(),
        top_k: p.top_k,
        non_expert_prefill_curve: (0..p.num_layers)
            .map(|l| {
                let s = p.non_expert_prefill_slope * jitter(seed, (2000 + l) as u64, 0.05);
                Curve::linear(s, 8192.0)
            })
            .collect(),
        swap_latency_curve: Curve::affine(5.0e-5, 2.0e-7, 8192.0),
        non_expert_decode_seconds: (0..p.num_layers)
            .map(|l| p.non_expert_decode * jitter(seed, (3000 + l) as u64, 0.05))
            .collect(),
    };

    let cpu_price = 1.67e-8; // per MB-second
    let platform = PlatformSpec {
        memory_grid_main: grid_main.clone(),
        memory_grid_remote: grid_remote,
        grid_step_bytes: step,
        cpu_price_per_mb_second: cpu_price,
        gpu_price_per_mb_second: 3.0 * cpu_price,
        network_bandwidth_bytes_per_second: 1.25e8, // ~1 Gbps
        payload_limit_bytes: 6_000_000,             // 6 MB
        invocation_overhead_mean_seconds: vec![p.invocation_overhead; p.num_layers],
        invocation_overhead_dispersion: 0.05,
        max_replicas: 8,
        cold_start_curve: Curve::affine(0.5, 1.0 / 2.0e9, p.grid_main.1 as f64),
        vcpu_per_gb: 1,
    };

    let slo = SloSpec { ttft_limit_seconds: p.ttft_limit, tpot_limit_seconds: p.tpot_limit };

    // Baselines: experts ~2x faster on the fractional serverless GPU than on
    // a top-spec CPU instance; non-expert modules ~15x slower on CPU than on
    // GPU.
    let gpu_expert = (0..p.num_layers)
        .map(|l| {
            let top = profile.layers[l].last().unwrap();
            let single = top.single_token_seconds / 2.0;
            SpecProfile {
                batch_curve: Curve {
                    points: curve_points.to_vec(),
                    values: curve_points.iter().map(|&n| single * n).collect(),
                },
                single_token_seconds: single,
            }
        })
        .collect();
    let baseline_profiles = BaselineProfiles {
        gpu_expert,
        cpu_non_expert_prefill_curve: (0..p.num_layers)
            .map(|l| {
                let s = 15.0 * p.non_expert_prefill_slope * jitter(seed, (2000 + l) as u64, 0.05);
                Curve::linear(s, 8192.0)
            })
            .collect(),
        cpu_non_expert_decode_seconds: (0..p.num_layers)
            .map(|l| 15.0 * p.non_expert_decode * jitter(seed, (3000 + l) as u64, 0.05))
            .collect(),
        fetch_gpu_buffer_bytes: (p.top_k as u64 + 2) * p.expert_bytes * p.num_layers as u64,
        fetch_bandwidth_bytes_per_second: 16.0e9, // PCIe-class host-to-GPU link
    };

    let bundle = ConfigBundle { model, platform, slo, profile, baseline_profiles };
    bundle.validate().expect("preset bundle is valid by construction");
    bundle
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_bytes_hidden_4096_bf16() {
        assert_eq!(embedding_bytes(4096, 16), 8192);
    }

    #[test]
    fn presets_match_scales() {
        let (m, _) = synthetic_model(Preset::Small8x12, 7);
        assert_eq!(m.num_layers, 12);
        assert_eq!(m.experts_per_layer[0], 8);
        assert_eq!(m.top_k, 2);
        let (m, _) = synthetic_model(Preset::Large64x27, 7);
        assert_eq!(m.num_layers, 27);
        assert_eq!(m.experts_per_layer[0], 64);
        assert_eq!(m.top_k, 6);
    }

    #[test]
    fn preset_deterministic_per_seed() {
        let a = preset_bundle(Preset::Small8x12, 42);
        let b = preset_bundle(Preset::Small8x12, 42);
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
        let c = preset_bundle(Preset::Small8x12, 43);
        assert_ne!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&c).unwrap()
        );
    }

    #[test]
    fn unknown_preset_errors() {
        assert!("medium-16x16".parse::<Preset>().is_err());
    }

    #[test]
    fn config_roundtrip_exact() {
        let bundle = preset_bundle(Preset::Small8x12, 11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        save_config(&bundle, &path).unwrap();
        let loaded = load_config(&path).unwrap();
        assert_eq!(bundle, loaded);
    }

    #[test]
    fn remote_grid_equal_to_main_rejected() {
        let mut bundle = preset_bundle(Preset::Small8x12, 1);
        bundle.platform.memory_grid_remote = bundle.platform.memory_grid_main.clone();
        let err = bundle.validate().unwrap_err();
        assert!(err.to_string().contains("strict prefix"), "{err}");
    }

    #[test]
    fn remote_grid_non_prefix_rejected() {
        let mut bundle = preset_bundle(Preset::Small8x12, 1);
        bundle.platform.memory_grid_remote[0] += 1;
        assert!(bundle.validate().is_err());
    }

    #[test]
    fn monotone_decreasing_profile_accepted() {
        let bundle = preset_bundle(Preset::Small8x12, 1);
        // By construction latency decreases along the grid.
        assert!(bundle.validate().is_ok());
        let p = &bundle.profile;
        assert!(p.single_token_seconds(0, 0) > p.single_token_seconds(0, 10));
    }

    #[test]
    fn increasing_profile_rejected() {
        let mut bundle = preset_bundle(Preset::Small8x12, 1);
        bundle.profile.layers[0][1].single_token_seconds =
            bundle.profile.layers[0][0].single_token_seconds * 2.0;
        assert!(bundle.validate().is_err());
    }

    #[test]
    fn grid_index_bytes_bijection() {
        let bundle = preset_bundle(Preset::Small8x12, 1);
        let p = &bundle.platform;
        for (v, &m) in p.memory_grid_main.iter().enumerate() {
            assert_eq!(p.main_spec_bytes(v), m);
            assert_eq!(p.smallest_main_spec_at_least(m as f64), Some(v));
        }
        assert_eq!(p.smallest_main_spec_at_least(f64::MAX), None);
    }
}
