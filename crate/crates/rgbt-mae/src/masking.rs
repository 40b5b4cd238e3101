//! Progressive masking: turns training progress plus the fitted mixture
//! into a sampling function over score space, and turns that function plus
//! a per-pair score map into exact-budget visible/masked patch sets.
//!
//! The schedule starts from a near-point-mass at score 0 (information-rich
//! patches visible), widens component by component until it equals the
//! fitted mixture at mid-training, then pushes component means to 1.0 one
//! by one so visible patches drift into low-information regions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cmss::CmssMap;
use crate::error::{Error, Result};
use crate::gmm::GmmState;
use crate::patch::Modality;
use crate::util::lerp;

pub const DEFAULT_MASK_RATIO: f64 = 0.9;
pub const INIT_SIGMA2: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PhaseLabel {
    Warmup,
    /// 1-based ramp-in sub-phase
    RampIn(usize),
    Mid,
    /// 1-based ramp-out sub-phase
    RampOut(usize),
}

/// Phase boundaries of the schedule, as fractions of total training.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScheduleConfig {
    pub warmup_end: f64,
    pub mid: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { warmup_end: 0.05, mid: 0.50 }
    }
}

/// The sampling function: a mixture over score space with a modality-
/// balance mean bias. `uniform` flags the warmup fallback where visible
/// patches are drawn uniformly instead.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SamplerConfig {
    pub active_k: usize,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub weights: Vec<f64>,
    pub mu_bias: f64,
    pub phase: PhaseLabel,
    pub uniform: bool,
}

impl SamplerConfig {
    /// Point mass at `x`.
    pub fn point_mass(x: f64) -> Self {
        SamplerConfig {
            active_k: 1,
            means: vec![x],
            variances: vec![0.0],
            weights: vec![1.0],
            mu_bias: 0.0,
            phase: PhaseLabel::Mid,
            uniform: false,
        }
    }

    fn with_mu_bias(&self, bias: f64) -> Self {
        let mut c = self.clone();
        c.mu_bias = bias;
        c
    }

    /// Effective component mean after bias, clipped to `[-0.2, 1.2]`.
    pub fn effective_mean(&self, k: usize) -> f64 {
        (self.means[k] + self.mu_bias).clamp(-0.2, 1.2)
    }

    /// Draw `n` points from the mixture, clipped to `[0, 1]`.
    pub fn sample_points(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut k = self.active_k - 1;
            let mut acc = 0.0;
            for (j, &w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = j;
                    break;
                }
            }
            let z: f64 = StandardNormal.sample(rng);
            let x = self.effective_mean(k) + self.variances[k].sqrt() * z;
            out.push(x.clamp(0.0, 1.0));
        }
        out
    }

    /// Analytic CDF of the clipped sampling distribution restricted to the
    /// open interval; callers comparing against draws handle the boundary
    /// atoms (clipping moves tail mass onto 0 and 1).
    pub fn cdf(&self, x: f64) -> f64 {
        let mut p = 0.0;
        for k in 0..self.active_k {
            let sd = self.variances[k].sqrt();
            let c = if sd > 0.0 {
                crate::util::normal_cdf((x - self.effective_mean(k)) / sd)
            } else if x >= self.effective_mean(k) {
                1.0
            } else {
                0.0
            };
            p += self.weights[k] * c;
        }
        p
    }
}

/// Evaluate the schedule at `progress` in `[0, 1]` for a fitted mixture.
pub fn schedule_at(progress: f64, gmm: &GmmState, cfg: &ScheduleConfig) -> Result<SamplerConfig> {
    if !(0.0..=1.0).contains(&progress) || !progress.is_finite() {
        return Err(Error::InvalidConfig(format!("progress {progress} outside [0, 1]")));
    }
    let k_total = gmm.k();

    if progress < cfg.warmup_end {
        return Ok(SamplerConfig {
            active_k: 1,
            means: vec![0.0],
            variances: vec![INIT_SIGMA2],
            weights: vec![1.0],
            mu_bias: 0.0,
            phase: PhaseLabel::Warmup,
            uniform: true,
        });
    }

    if progress < cfg.mid {
        // ramp-in: components activate one by one, ascending fitted mean
        let sub = (progress - cfg.warmup_end) / (cfg.mid - cfg.warmup_end);
        let idx = ((sub * k_total as f64).floor() as usize).min(k_total - 1);
        let t = sub * k_total as f64 - idx as f64;
        let active = idx + 1;
        let mut means = Vec::with_capacity(active);
        let mut variances = Vec::with_capacity(active);
        for j in 0..active {
            if j < idx {
                means.push(gmm.means[j]);
                variances.push(gmm.variances[j]);
            } else {
                means.push(lerp(0.0, gmm.means[j], t));
                variances.push(lerp(INIT_SIGMA2, gmm.variances[j], t));
            }
        }
        let wsum: f64 = gmm.weights[..active].iter().sum();
        let weights = gmm.weights[..active].iter().map(|&w| w / wsum).collect();
        return Ok(SamplerConfig {
            active_k: active,
            means,
            variances,
            weights,
            mu_bias: 0.0,
            phase: PhaseLabel::RampIn(active),
            uniform: false,
        });
    }

    // at mid the config equals the fitted mixture; past it, means move to
    // 1.0 one by one (ascending), variances held at their fitted values
    let sub = (progress - cfg.mid) / (1.0 - cfg.mid);
    let idx = ((sub * k_total as f64).floor() as usize).min(k_total - 1);
    let t = (sub * k_total as f64 - idx as f64).min(1.0);
    let mut means = Vec::with_capacity(k_total);
    for j in 0..k_total {
        if j < idx {
            means.push(1.0);
        } else if j == idx {
            means.push(lerp(gmm.means[j], 1.0, t));
        } else {
            means.push(gmm.means[j]);
        }
    }
    let phase = if progress == cfg.mid { PhaseLabel::Mid } else { PhaseLabel::RampOut(idx + 1) };
    Ok(SamplerConfig {
        active_k: k_total,
        means,
        variances: gmm.variances.clone(),
        weights: gmm.weights.clone(),
        mu_bias: 0.0,
        phase,
        uniform: false,
    })
}

/// Progress values at sub-phase boundaries (between warmup end and 1.0).
pub fn schedule_boundaries(cfg: &ScheduleConfig, k: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for j in 0..=k {
        out.push(cfg.warmup_end + (cfg.mid - cfg.warmup_end) * j as f64 / k as f64);
    }
    for j in 1..=k {
        out.push(cfg.mid + (1.0 - cfg.mid) * j as f64 / k as f64);
    }
    out
}

/// Midpoints of the `2k + 1` curriculum sub-phases: the `k` ramp-in
/// sub-phases, the mid point itself, and the `k` ramp-out sub-phases.
pub fn subphase_midpoints(cfg: &ScheduleConfig, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * k + 1);
    let ramp_in = (cfg.mid - cfg.warmup_end) / k as f64;
    for j in 0..k {
        out.push(cfg.warmup_end + ramp_in * (j as f64 + 0.5));
    }
    out.push(cfg.mid);
    let ramp_out = (1.0 - cfg.mid) / k as f64;
    for j in 0..k {
        out.push(cfg.mid + ramp_out * (j as f64 + 0.5));
    }
    out
}

/// Masking budget: base ratio plus the adaptive per-modality bias.
/// The two modality biases are exact opposites.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaskBudget {
    pub base_ratio: f64,
    /// added to the RGB ratio; thermal gets the negation
    pub rgb_bias: f64,
}

impl MaskBudget {
    pub fn new(base_ratio: f64, rgb_bias: f64) -> Result<Self> {
        let b = MaskBudget { base_ratio, rgb_bias };
        for m in [Modality::Rgb, Modality::Thermal] {
            let r = b.ratio(m);
            if !(0.0..1.0).contains(&r) || r == 0.0 {
                return Err(Error::InvalidConfig(format!("mask ratio {r} outside (0, 1)")));
            }
        }
        Ok(b)
    }

    pub fn ratio(&self, modality: Modality) -> f64 {
        match modality {
            Modality::Rgb => self.base_ratio + self.rgb_bias,
            Modality::Thermal => self.base_ratio - self.rgb_bias,
        }
    }

    pub fn masked_count(&self, n_patches: usize, modality: Modality) -> usize {
        (n_patches as f64 * self.ratio(modality)).round() as usize
    }
}

/// Visible/masked partition of one modality's patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub grid_side: usize,
    pub modality: Modality,
    /// true = visible (fed to the encoder)
    pub visible: Vec<bool>,
    pub masked_count: usize,
    pub seed: u64,
}

impl MaskPlan {
    pub fn visible_indices(&self) -> Vec<usize> {
        self.visible
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| if v { Some(i) } else { None })
            .collect()
    }

    pub fn visible_count(&self) -> usize {
        self.visible.len() - self.masked_count
    }
}

fn uniform_visible(n: usize, v: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    // partial Fisher-Yates over patch indices
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..v {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut visible = vec![false; n];
    for &i in &idx[..v] {
        visible[i] = true;
    }
    visible
}

/// Choose the visible set: draw one sampling point per visible slot and
/// let each point (in draw order) claim the unused patch with the nearest
/// score, ties to the lowest row-major index. Warmup configs and
/// degenerate maps fall back to uniform selection.
pub fn select_visible(
    cmss: &CmssMap,
    cfg: &SamplerConfig,
    budget: &MaskBudget,
    modality: Modality,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> Result<MaskPlan> {
    let n = cmss.len();
    let masked = budget.masked_count(n, modality);
    let v = n as i64 - masked as i64;
    if v <= 0 || v >= n as i64 {
        return Err(Error::InvalidConfig(format!(
            "visible count {v} out of range for {n} patches (ratio {})",
            budget.ratio(modality)
        )));
    }
    let v = v as usize;

    let visible = if cfg.uniform || cmss.degenerate {
        uniform_visible(n, v, rng)
    } else {
        // the mean bias only steers the thermal draw
        let effective = match modality {
            Modality::Thermal => cfg.clone(),
            Modality::Rgb => cfg.with_mu_bias(0.0),
        };
        let points = effective.sample_points(v, rng);
        let mut taken = vec![false; n];
        for x in points {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for (i, &val) in cmss.values.iter().enumerate() {
                if taken[i] {
                    continue;
                }
                let d = (val - x).abs();
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            taken[best] = true;
        }
        taken
    };

    Ok(MaskPlan { grid_side: cmss.grid_side, modality, visible, masked_count: masked, seed })
}

/// Ablation masking modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BaselineMode {
    Random,
    LowCmss,
    HighCmss,
}

/// Fixed-strategy mask baselines: uniform, or point-mass samplers at the
/// extremes of the score range.
pub fn baseline_mask(
    mode: BaselineMode,
    cmss: &CmssMap,
    r: f64,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> Result<MaskPlan> {
    let budget = MaskBudget::new(r, 0.0)?;
    match mode {
        BaselineMode::Random => {
            let n = cmss.len();
            let masked = budget.masked_count(n, Modality::Rgb);
            let v = n as i64 - masked as i64;
            if v <= 0 || v >= n as i64 {
                return Err(Error::InvalidConfig(format!("visible count {v} out of range")));
            }
            Ok(MaskPlan {
                grid_side: cmss.grid_side,
                modality: Modality::Rgb,
                visible: uniform_visible(n, v as usize, rng),
                masked_count: masked,
                seed,
            })
        }
        BaselineMode::LowCmss => {
            select_visible(cmss, &SamplerConfig::point_mass(0.0), &budget, Modality::Rgb, rng, seed)
        }
        BaselineMode::HighCmss => {
            select_visible(cmss, &SamplerConfig::point_mass(1.0), &budget, Modality::Rgb, rng, seed)
        }
    }
}

/// Exponential moving averages of the two modality losses. Both EMAs start
/// equal (set from the first observed mean) so the biases start at zero.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossStats {
    pub ema_rgb: f64,
    pub ema_thermal: f64,
    pub ema_decay: f64,
    pub initialized: bool,
}

impl LossStats {
    pub fn new(decay: f64) -> Self {
        LossStats { ema_rgb: 0.0, ema_thermal: 0.0, ema_decay: decay, initialized: false }
    }

    pub fn update(&mut self, loss_rgb: f64, loss_thermal: f64) {
        if !self.initialized {
            let m = 0.5 * (loss_rgb + loss_thermal);
            self.ema_rgb = m;
            self.ema_thermal = m;
            self.initialized = true;
        }
        self.ema_rgb = self.ema_decay * self.ema_rgb + (1.0 - self.ema_decay) * loss_rgb;
        self.ema_thermal = self.ema_decay * self.ema_thermal + (1.0 - self.ema_decay) * loss_thermal;
    }
}

/// Gains and clamps for the adaptive modality balancing.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BiasGains {
    pub gamma_r: f64,
    pub gamma_mu: f64,
    pub r_bias_max: f64,
    pub mu_bias_max: f64,
}

impl Default for BiasGains {
    fn default() -> Self {
        BiasGains { gamma_r: 0.1, gamma_mu: 0.2, r_bias_max: 0.05, mu_bias_max: 0.1 }
    }
}

/// Map the relative modality loss gap onto a mask-budget bias and a
/// sampling-mean bias. A modality that reconstructs worse is masked less,
/// and its visible sampling is pulled toward low scores (high information).
pub fn update_modality_bias(
    stats: &LossStats,
    gains: &BiasGains,
    base_ratio: f64,
) -> Result<(MaskBudget, f64)> {
    let delta = (stats.ema_thermal - stats.ema_rgb) / (stats.ema_thermal + stats.ema_rgb + 1e-12);
    let r_shift = (gains.gamma_r * delta).clamp(-gains.r_bias_max, gains.r_bias_max);
    let mu_bias = -(gains.gamma_mu * delta).clamp(-gains.mu_bias_max, gains.mu_bias_max);
    // thermal harder (delta > 0): thermal masked less, rgb masked more
    let budget = MaskBudget::new(base_ratio, r_shift)?;
    Ok((budget, mu_bias))
}
