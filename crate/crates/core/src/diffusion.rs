//! Toy denoising-diffusion harness.
//!
//! Pixel-space videos stand in for latents at desk scale. The denoiser
//! combines pseudo-3D convolutions (1x3x3 kernels), optional temporal
//! attention, sparse causal attention with the low-rank bypass path, and a
//! stack of temporal blocks, conditioned on a timestep embedding and a
//! synthetic class embedding by additive feature modulation.

use crate::attention::{
    attention_graph, mixed_attention_graph, AttnParams, AttnVars, BypassAttnParams, BypassVars,
    Phi,
};
use crate::config::MambaPlacement;
use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::io::Archive;
use crate::mamba::{BlockStack, MambaBlockVars, PaddingMode};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::video::VideoTensor;
use std::collections::BTreeMap;

// ---- schedule ----

/// Forward-process noise schedule with linear beta ramp.
#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    pub betas: Vec<f64>,      // beta_t for t = 1..=T at index t-1
    pub alpha_bars: Vec<f64>, // cumulative products, same indexing
}

impl DiffusionSchedule {
    pub fn linear(t_steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if t_steps == 0 || beta_min <= 0.0 || beta_max >= 1.0 || beta_max < beta_min {
            return Err(Error::arg("DiffusionSchedule", "invalid beta ramp"));
        }
        let mut betas = Vec::with_capacity(t_steps);
        let mut alpha_bars = Vec::with_capacity(t_steps);
        let mut prod = 1.0;
        for i in 0..t_steps {
            let frac = if t_steps == 1 {
                0.0
            } else {
                i as f64 / (t_steps - 1) as f64
            };
            let beta = beta_min + frac * (beta_max - beta_min);
            prod *= 1.0 - beta;
            betas.push(beta);
            alpha_bars.push(prod);
        }
        Ok(DiffusionSchedule { betas, alpha_bars })
    }

    /// Default toy schedule: 100 steps, beta ramping 1e-4 -> 7e-2, which puts
    /// the terminal signal level alpha_bar_T below 0.05.
    pub fn default_toy() -> Self {
        DiffusionSchedule::linear(100, 1e-4, 7e-2).expect("valid default schedule")
    }

    pub fn t_steps(&self) -> usize {
        self.betas.len()
    }

    /// alpha_bar at step t, with alpha_bar(0) = 1 (the clean-data level).
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }
}

/// z_t = sqrt(alpha_bar_t) z_0 + sqrt(1 - alpha_bar_t) eps with unit
/// Gaussian eps; returns both.
pub fn forward_diffuse(
    z0: &VideoTensor,
    t: usize,
    schedule: &DiffusionSchedule,
    rng: &mut Rng,
) -> Result<(VideoTensor, VideoTensor)> {
    if t == 0 || t > schedule.t_steps() {
        return Err(Error::arg(
            "forward_diffuse",
            format!("t = {t} outside 1..={}", schedule.t_steps()),
        ));
    }
    let ab = schedule.alpha_bar(t);
    let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut eps = Tensor::zeros(z0.tensor().shape());
    rng.fill_gaussian(eps.data_mut());
    let zt = z0
        .tensor()
        .zip_map(&eps, |z, e| signal * z + noise * e);
    Ok((
        VideoTensor::new(zt)?,
        VideoTensor::new(eps)?,
    ))
}

// ---- condition embeddings ----

/// Fixed synthetic conditioning vectors, one unit-norm embedding per class
/// plus a distinct null embedding for unconditional passes.
#[derive(Debug, Clone)]
pub struct ConditionSet {
    pub embeddings: Vec<Tensor>, // [dim] each
    pub null: Tensor,
    pub dim: usize,
}

impl ConditionSet {
    pub fn new(classes: usize, dim: usize) -> Self {
        let unit = |seed: u64| {
            let mut rng = Rng::new(seed);
            let mut v = Tensor::zeros(&[dim]);
            rng.fill_gaussian(v.data_mut());
            let n = v.frob_norm().max(1e-12);
            v.scale(1.0 / n)
        };
        ConditionSet {
            embeddings: (0..classes).map(|c| unit(0xC0ED + c as u64)).collect(),
            null: unit(0x9011),
            dim,
        }
    }
}

// ---- denoiser ----

#[derive(Debug, Clone)]
pub struct DenoiserConfig {
    pub in_channels: usize,
    pub width: usize,
    pub state_dim: usize,
    pub depth: usize,
    pub rank: usize,
    pub phi: Phi,
    pub padding: PaddingMode,
    pub placement: MambaPlacement,
    pub t_embed_dim: usize,
    pub cond_dim: usize,
}

impl DenoiserConfig {
    pub fn from_experiment(cfg: &crate::config::ExperimentConfig) -> Self {
        DenoiserConfig {
            in_channels: 3,
            width: cfg.model.width,
            state_dim: cfg.model.state_dim,
            depth: cfg.model.mamba_depth,
            rank: cfg.model.rank,
            phi: if cfg.model.phi_learnable {
                // start the logit at the configured value
                Phi::Learnable(logit(cfg.model.phi.clamp(1e-6, 1.0 - 1e-6)))
            } else {
                Phi::Fixed(cfg.model.phi)
            },
            padding: cfg.padding_mode(),
            placement: cfg.placement(),
            t_embed_dim: 8,
            cond_dim: 8,
        }
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// The toy video denoiser. Base attention projections are frozen by design;
/// the bypass factors and the temporal blocks always train, and the rest of
/// the backbone trains unless frozen by the training options.
#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    pub cfg: DenoiserConfig,
    pub conv_in_w: Tensor,
    pub conv_in_b: Tensor,
    pub conv_out_w: Tensor,
    pub conv_out_b: Tensor,
    pub t_embed_w: Tensor,
    pub t_embed_b: Tensor,
    pub c_embed_w: Tensor,
    pub c_embed_b: Tensor,
    pub temporal_attn: AttnParams,
    pub causal_base: AttnParams,
    pub bypass: BypassAttnParams,
    pub mamba: BlockStack,
}

pub struct DenoiserVars {
    pub conv_in_w: VarId,
    pub conv_in_b: VarId,
    pub conv_out_w: VarId,
    pub conv_out_b: VarId,
    pub t_embed_w: VarId,
    pub t_embed_b: VarId,
    pub c_embed_w: VarId,
    pub c_embed_b: VarId,
    pub temporal: AttnVars,
    pub causal: AttnVars,
    pub bypass: BypassVars,
    pub mamba: Vec<MambaBlockVars>,
}

impl ToyDenoiser {
    pub fn init(cfg: DenoiserConfig, rng: &mut Rng) -> Result<Self> {
        let (cin, w) = (cfg.in_channels, cfg.width);
        let causal_base = AttnParams::init(w, rng);
        let bypass = crate::attention::svd_init(&causal_base, cfg.rank, cfg.phi)?;
        let sc = 1.0 / ((cin * 9) as f64).sqrt();
        let so = 0.05 / ((w * 9) as f64).sqrt();
        Ok(ToyDenoiser {
            conv_in_w: Tensor::randn(&[w, cin, 3, 3], rng, sc),
            conv_in_b: Tensor::zeros(&[w]),
            conv_out_w: Tensor::randn(&[cin, w, 3, 3], rng, so),
            conv_out_b: Tensor::zeros(&[cin]),
            t_embed_w: Tensor::randn(&[cfg.t_embed_dim, w], rng, 0.3),
            t_embed_b: Tensor::zeros(&[w]),
            c_embed_w: Tensor::randn(&[cfg.cond_dim, w], rng, 0.3),
            c_embed_b: Tensor::zeros(&[w]),
            temporal_attn: AttnParams::init(w, rng),
            causal_base,
            mamba: BlockStack::init(cfg.depth, w, w, cfg.state_dim, cfg.padding, rng)?,
            bypass,
            cfg,
        })
    }

    /// Sinusoidal embedding of the (integer) diffusion step.
    pub fn timestep_features(&self, t: usize) -> Tensor {
        let dim = self.cfg.t_embed_dim;
        let mut v = Tensor::zeros(&[1, dim]);
        for i in 0..dim / 2 {
            let freq = (10_000f64).powf(-(2.0 * i as f64) / dim as f64);
            v.data_mut()[2 * i] = (t as f64 * freq).sin();
            v.data_mut()[2 * i + 1] = (t as f64 * freq).cos();
        }
        v
    }

    /// Attach every parameter to the graph. The trainable set is: bypass
    /// factors (plus phi when learnable) and temporal blocks always; the
    /// backbone too unless `freeze_backbone`. Base attention projections are
    /// never trainable.
    pub fn bind(
        &self,
        g: &mut Graph,
        freeze_backbone: bool,
    ) -> (DenoiserVars, Vec<(String, VarId)>) {
        let bb = !freeze_backbone;
        let mut trainable: Vec<(String, VarId)> = Vec::new();
        let conv_in_w = g.input(self.conv_in_w.clone(), bb);
        let conv_in_b = g.input(self.conv_in_b.clone(), bb);
        let conv_out_w = g.input(self.conv_out_w.clone(), bb);
        let conv_out_b = g.input(self.conv_out_b.clone(), bb);
        let t_embed_w = g.input(self.t_embed_w.clone(), bb);
        let t_embed_b = g.input(self.t_embed_b.clone(), bb);
        let c_embed_w = g.input(self.c_embed_w.clone(), bb);
        let c_embed_b = g.input(self.c_embed_b.clone(), bb);
        let temporal = self.temporal_attn.bind(g, bb);
        if bb {
            for (name, id) in [
                ("backbone.conv_in.w", conv_in_w),
                ("backbone.conv_in.b", conv_in_b),
                ("backbone.conv_out.w", conv_out_w),
                ("backbone.conv_out.b", conv_out_b),
                ("backbone.t_embed.w", t_embed_w),
                ("backbone.t_embed.b", t_embed_b),
                ("backbone.c_embed.w", c_embed_w),
                ("backbone.c_embed.b", c_embed_b),
                ("backbone.temporal_attn.w_q", temporal.w_q),
                ("backbone.temporal_attn.w_k", temporal.w_k),
                ("backbone.temporal_attn.w_v", temporal.w_v),
            ] {
                trainable.push((name.to_string(), id));
            }
        }
        // base projections stay frozen in every mode
        let causal = self.causal_base.bind(g, false);
        let bypass = self.bypass.bind(g, true);
        trainable.push(("bypass.w_q_lr".to_string(), bypass.w_q_lr));
        trainable.push(("bypass.w_k_lr".to_string(), bypass.w_k_lr));
        if let Some(rho) = bypass.rho {
            trainable.push(("bypass.phi_logit".to_string(), rho));
        }
        let mut mamba = Vec::new();
        for (bi, block) in self.mamba.blocks.iter().enumerate() {
            let (vars, named) = block.bind(g, true);
            for (suffix, id) in named {
                trainable.push((format!("mamba.{bi}.{suffix}"), id));
            }
            mamba.push(vars);
        }
        (
            DenoiserVars {
                conv_in_w,
                conv_in_b,
                conv_out_w,
                conv_out_b,
                t_embed_w,
                t_embed_b,
                c_embed_w,
                c_embed_b,
                temporal,
                causal,
                bypass,
                mamba,
            },
            trainable,
        )
    }

    /// Noise prediction on the graph.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        z_t: VarId,
        t: usize,
        cond: &Tensor,
        vars: &DenoiserVars,
    ) -> Result<VarId> {
        let shape = g.shape(z_t).to_vec();
        let (tt, _c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let width = self.cfg.width;

        let mut hvar = g.conv2d_per_frame(z_t, vars.conv_in_w, vars.conv_in_b);

        // timestep + condition injection as per-channel shifts
        let tfeat = g.constant(self.timestep_features(t));
        let temb = g.matmul(tfeat, vars.t_embed_w);
        let temb = flatten_row(g, temb, width);
        let temb = g.add(temb, vars.t_embed_b);
        hvar = g.add_channel_bias(hvar, temb);
        let cfeat = g.constant(cond.reshape(&[1, self.cfg.cond_dim])?);
        let cemb = g.matmul(cfeat, vars.c_embed_w);
        let cemb = flatten_row(g, cemb, width);
        let cemb = g.add(cemb, vars.c_embed_b);
        hvar = g.add_channel_bias(hvar, cemb);
        hvar = g.silu(hvar);

        if matches!(self.cfg.placement, MambaPlacement::InsertAfterTemporalAttention) {
            let attn_out = temporal_attention_graph(g, hvar, &vars.temporal, tt, width, h, w);
            hvar = g.add(hvar, attn_out);
        }
        hvar = self.mamba.forward_graph(g, hvar, &vars.mamba)?;

        let sc = sparse_causal_mixed_graph(g, hvar, &vars.causal, &vars.bypass, tt, width, h, w);
        hvar = g.add(hvar, sc);

        hvar = g.silu(hvar);
        Ok(g.conv2d_per_frame(hvar, vars.conv_out_w, vars.conv_out_b))
    }

    /// Plain inference: predict the noise in `z_t`.
    pub fn predict(&self, z_t: &VideoTensor, t: usize, cond: &Tensor) -> Result<VideoTensor> {
        let mut g = Graph::new();
        let zv = g.constant(z_t.tensor().clone());
        let (vars, _) = self.bind(&mut g, true);
        let out = self.forward_graph(&mut g, zv, t, cond, &vars)?;
        VideoTensor::new(g.value(out).clone())
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut v: Vec<(String, Tensor)> = vec![
            ("backbone.conv_in.w".into(), self.conv_in_w.clone()),
            ("backbone.conv_in.b".into(), self.conv_in_b.clone()),
            ("backbone.conv_out.w".into(), self.conv_out_w.clone()),
            ("backbone.conv_out.b".into(), self.conv_out_b.clone()),
            ("backbone.t_embed.w".into(), self.t_embed_w.clone()),
            ("backbone.t_embed.b".into(), self.t_embed_b.clone()),
            ("backbone.c_embed.w".into(), self.c_embed_w.clone()),
            ("backbone.c_embed.b".into(), self.c_embed_b.clone()),
            ("backbone.temporal_attn.w_q".into(), self.temporal_attn.w_q.clone()),
            ("backbone.temporal_attn.w_k".into(), self.temporal_attn.w_k.clone()),
            ("backbone.temporal_attn.w_v".into(), self.temporal_attn.w_v.clone()),
            ("attn.base.w_q".into(), self.causal_base.w_q.clone()),
            ("attn.base.w_k".into(), self.causal_base.w_k.clone()),
            ("attn.base.w_v".into(), self.causal_base.w_v.clone()),
            ("bypass.w_q_lr".into(), self.bypass.w_q_lr.clone()),
            ("bypass.w_k_lr".into(), self.bypass.w_k_lr.clone()),
            ("bypass.phi".into(), Tensor::scalar(self.bypass.phi.value())),
        ];
        if let Phi::Learnable(rho) = self.bypass.phi {
            v.push(("bypass.phi_logit".into(), Tensor::scalar(rho)));
        }
        for (bi, block) in self.mamba.blocks.iter().enumerate() {
            for (suffix, t) in block.named() {
                v.push((format!("mamba.{bi}.{suffix}"), t.clone()));
            }
        }
        v
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new();
        for (name, t) in self.named_params() {
            a.insert(name, t);
        }
        a
    }

    /// Restore parameters from a checkpoint written by [`Self::to_archive`].
    pub fn load_from_archive(&mut self, archive: &Archive) -> Result<()> {
        let names: Vec<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
        for name in names {
            if name == "bypass.phi" {
                // derived entry; the logit below is authoritative when learnable
                if let (Phi::Fixed(_), Some(t)) = (&self.bypass.phi, archive.get(&name)) {
                    self.bypass.phi = Phi::Fixed(t.value());
                }
                continue;
            }
            let stored = archive
                .get(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint missing entry {name}")))?;
            if name == "bypass.phi_logit" {
                self.bypass.phi = Phi::Learnable(stored.value());
                continue;
            }
            let dst = self
                .param_mut(&name)
                .ok_or_else(|| Error::Format(format!("unknown checkpoint entry {name}")))?;
            if dst.shape() != stored.shape() {
                return Err(Error::Format(format!(
                    "checkpoint entry {name} has shape {:?}, expected {:?}",
                    stored.shape(),
                    dst.shape()
                )));
            }
            *dst = stored.clone();
        }
        Ok(())
    }

    /// Write a gradient-descent update into the parameter named `name`.
    fn apply_update(&mut self, name: &str, update: impl FnOnce(&mut [f64])) -> Result<()> {
        if name == "bypass.phi_logit" {
            if let Phi::Learnable(ref mut rho) = self.bypass.phi {
                update(std::slice::from_mut(rho));
                return Ok(());
            }
            return Err(Error::arg("apply_update", "phi is not learnable"));
        }
        let t = self
            .param_mut(name)
            .ok_or_else(|| Error::arg("apply_update", format!("unknown parameter {name}")))?;
        update(t.data_mut());
        Ok(())
    }

    fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let direct: &mut Tensor = match name {
            "backbone.conv_in.w" => &mut self.conv_in_w,
            "backbone.conv_in.b" => &mut self.conv_in_b,
            "backbone.conv_out.w" => &mut self.conv_out_w,
            "backbone.conv_out.b" => &mut self.conv_out_b,
            "backbone.t_embed.w" => &mut self.t_embed_w,
            "backbone.t_embed.b" => &mut self.t_embed_b,
            "backbone.c_embed.w" => &mut self.c_embed_w,
            "backbone.c_embed.b" => &mut self.c_embed_b,
            "backbone.temporal_attn.w_q" => &mut self.temporal_attn.w_q,
            "backbone.temporal_attn.w_k" => &mut self.temporal_attn.w_k,
            "backbone.temporal_attn.w_v" => &mut self.temporal_attn.w_v,
            "attn.base.w_q" => &mut self.causal_base.w_q,
            "attn.base.w_k" => &mut self.causal_base.w_k,
            "attn.base.w_v" => &mut self.causal_base.w_v,
            "bypass.w_q_lr" => &mut self.bypass.w_q_lr,
            "bypass.w_k_lr" => &mut self.bypass.w_k_lr,
            _ => {
                let rest = name.strip_prefix("mamba.")?;
                let (idx, suffix) = rest.split_once('.')?;
                let block = self.mamba.blocks.get_mut(idx.parse::<usize>().ok()?)?;
                return block
                    .named_mut()
                    .into_iter()
                    .find(|(s, _)| *s == suffix)
                    .map(|(_, t)| t);
            }
        };
        Some(direct)
    }
}

fn flatten_row(g: &mut Graph, row: VarId, width: usize) -> VarId {
    let idx: Vec<usize> = (0..width).collect();
    g.gather(row, idx, &[width])
}

/// Temporal self-attention: at every spatial position, the pixels of the t
/// frames attend to one another.
fn temporal_attention_graph(
    g: &mut Graph,
    video: VarId,
    attn: &AttnVars,
    t: usize,
    c: usize,
    h: usize,
    w: usize,
) -> VarId {
    let hw = h * w;
    let mut outputs = Vec::with_capacity(hw);
    for p in 0..hw {
        let mut idx = Vec::with_capacity(t * c);
        for ti in 0..t {
            for ci in 0..c {
                idx.push((ti * c + ci) * hw + p);
            }
        }
        let tokens = g.gather(video, idx, &[t, c]);
        outputs.push(attention_graph(g, tokens, tokens, tokens, attn));
    }
    let mut stacked = outputs[0];
    for &o in &outputs[1..] {
        stacked = g.concat_rows(stacked, o);
    }
    // stacked rows are ordered (position, frame); route back to [t,c,h,w]
    let mut idx = vec![0usize; t * c * hw];
    for p in 0..hw {
        for ti in 0..t {
            for ci in 0..c {
                idx[(ti * c + ci) * hw + p] = (p * t + ti) * c + ci;
            }
        }
    }
    g.gather(stacked, idx, &[t, c, h, w])
}

/// Sparse causal attention with the bypass path: frame 0 attends to itself,
/// frame i to keys/values from frames 0 and i-1.
fn sparse_causal_mixed_graph(
    g: &mut Graph,
    video: VarId,
    base: &AttnVars,
    bp: &BypassVars,
    t: usize,
    c: usize,
    h: usize,
    w: usize,
) -> VarId {
    let hw = h * w;
    let frame_tokens: Vec<VarId> = (0..t)
        .map(|ti| {
            let mut idx = Vec::with_capacity(hw * c);
            for p in 0..hw {
                for ci in 0..c {
                    idx.push((ti * c + ci) * hw + p);
                }
            }
            g.gather(video, idx, &[hw, c])
        })
        .collect();
    let mut outputs = Vec::with_capacity(t);
    for ti in 0..t {
        let kv = if ti == 0 {
            frame_tokens[0]
        } else {
            g.concat_rows(frame_tokens[0], frame_tokens[ti - 1])
        };
        outputs.push(mixed_attention_graph(g, frame_tokens[ti], kv, kv, base, bp));
    }
    let mut stacked = outputs[0];
    for &o in &outputs[1..] {
        stacked = g.concat_rows(stacked, o);
    }
    // stacked rows are ordered (frame, position)
    let mut idx = vec![0usize; t * c * hw];
    for ti in 0..t {
        for p in 0..hw {
            for ci in 0..c {
                idx[(ti * c + ci) * hw + p] = (ti * hw + p) * c + ci;
            }
        }
    }
    g.gather(stacked, idx, &[t, c, h, w])
}

// ---- objectives ----

/// Epsilon-prediction loss on the graph for a fixed draw of (t, eps).
pub fn loss_graph(
    g: &mut Graph,
    denoiser: &ToyDenoiser,
    vars: &DenoiserVars,
    z0: &VideoTensor,
    cond: &Tensor,
    t: usize,
    eps: &VideoTensor,
    schedule: &DiffusionSchedule,
) -> Result<VarId> {
    let ab = schedule.alpha_bar(t);
    let zt = z0
        .tensor()
        .zip_map(eps.tensor(), |z, e| ab.sqrt() * z + (1.0 - ab).sqrt() * e);
    let zt_var = g.constant(zt);
    let pred = denoiser.forward_graph(g, zt_var, t, cond, vars)?;
    let target = g.constant(eps.tensor().clone());
    Ok(g.mse(pred, target))
}

/// Single-sample training loss: draws t uniformly and eps ~ N(0, I), then
/// returns the mean squared error between the true and predicted noise.
pub fn training_loss(
    denoiser: &ToyDenoiser,
    z0: &VideoTensor,
    cond: &Tensor,
    schedule: &DiffusionSchedule,
    rng: &mut Rng,
) -> Result<f64> {
    let t = 1 + rng.below(schedule.t_steps());
    let mut eps = Tensor::zeros(z0.tensor().shape());
    rng.fill_gaussian(eps.data_mut());
    let eps = VideoTensor::new(eps)?;
    let mut g = Graph::new();
    let (vars, _) = denoiser.bind(&mut g, true);
    let loss = loss_graph(&mut g, denoiser, &vars, z0, cond, t, &eps, schedule)?;
    Ok(g.value(loss).value())
}

// ---- DDIM ----

/// Deterministic (eta = 0) update between any two noise levels, given a
/// noise estimate at the source level.
pub fn ddim_update(
    z: &VideoTensor,
    eps: &VideoTensor,
    from_t: usize,
    to_t: usize,
    schedule: &DiffusionSchedule,
) -> VideoTensor {
    let ab_from = schedule.alpha_bar(from_t);
    let ab_to = schedule.alpha_bar(to_t);
    let z0_pred = z
        .tensor()
        .zip_map(eps.tensor(), |zt, e| (zt - (1.0 - ab_from).sqrt() * e) / ab_from.sqrt());
    let out = z0_pred
        .zip_map(eps.tensor(), |z0, e| ab_to.sqrt() * z0 + (1.0 - ab_to).sqrt() * e);
    VideoTensor::new(out).unwrap()
}

/// One DDIM denoising step t -> t_prev (strictly downward; t_prev = t is the
/// identity).
pub fn ddim_step(
    denoiser: &ToyDenoiser,
    z_t: &VideoTensor,
    t: usize,
    t_prev: usize,
    cond: &Tensor,
    schedule: &DiffusionSchedule,
) -> Result<VideoTensor> {
    if t_prev > t || t == 0 || t > schedule.t_steps() {
        return Err(Error::arg(
            "ddim_step",
            format!("need t >= t_prev >= 0, got t = {t}, t_prev = {t_prev}"),
        ));
    }
    if t_prev == t {
        return Ok(z_t.clone());
    }
    let eps = denoiser.predict(z_t, t, cond)?;
    Ok(ddim_update(z_t, &eps, t, t_prev, schedule))
}

/// Classifier-free guidance: eps_uncond + s (eps_cond - eps_uncond), with
/// the unconditional branch driven by the null embedding. s = 1 returns the
/// conditional prediction exactly; s = 0 the unconditional one.
pub fn cfg_predict(
    denoiser: &ToyDenoiser,
    z_t: &VideoTensor,
    t: usize,
    cond: &Tensor,
    null: &Tensor,
    scale: f64,
) -> Result<VideoTensor> {
    if scale == 1.0 {
        return denoiser.predict(z_t, t, cond);
    }
    let eps_u = denoiser.predict(z_t, t, null)?;
    if scale == 0.0 {
        return Ok(eps_u);
    }
    let eps_c = denoiser.predict(z_t, t, cond)?;
    let guided = eps_u
        .tensor()
        .zip_map(eps_c.tensor(), |u, c| u + scale * (c - u));
    VideoTensor::new(guided)
}

/// Descending sampling grid T = tau_0 > tau_1 > ... > 0 with `steps` steps.
pub fn time_grid(t_steps: usize, steps: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = (0..=steps)
        .map(|i| ((steps - i) as f64 * t_steps as f64 / steps as f64).round() as usize)
        .collect();
    ts.dedup();
    ts
}

/// DDIM sampling from pure noise with classifier-free guidance.
pub fn sample_ddim(
    denoiser: &ToyDenoiser,
    shape: (usize, usize, usize, usize),
    cond: &Tensor,
    null: &Tensor,
    guidance: f64,
    steps: usize,
    schedule: &DiffusionSchedule,
    rng: &mut Rng,
) -> Result<VideoTensor> {
    let (t, c, h, w) = shape;
    let mut z = Tensor::zeros(&[t, c, h, w]);
    rng.fill_gaussian(z.data_mut());
    let mut z = VideoTensor::new(z)?;
    let grid = time_grid(schedule.t_steps(), steps);
    for win in grid.windows(2) {
        let (cur, next) = (win[0], win[1]);
        let eps = cfg_predict(denoiser, &z, cur, cond, null, guidance)?;
        z = ddim_update(&z, &eps, cur, next, schedule);
    }
    Ok(z)
}

/// Deterministic DDIM inversion 0 -> T using the model's own predictions.
pub fn ddim_inversion(
    denoiser: &ToyDenoiser,
    z0: &VideoTensor,
    cond: &Tensor,
    steps: usize,
    schedule: &DiffusionSchedule,
) -> Result<VideoTensor> {
    let mut grid = time_grid(schedule.t_steps(), steps);
    grid.reverse(); // ascending 0 .. T
    let mut z = z0.clone();
    for win in grid.windows(2) {
        let (cur, next) = (win[0], win[1]);
        let eps = denoiser.predict(&z, cur.max(1), cond)?;
        z = ddim_update(&z, &eps, cur, next, schedule);
    }
    Ok(z)
}

// ---- synthetic data ----

#[derive(Debug, Clone, Copy)]
pub struct DataSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub samples_per_class: usize,
}

impl DataSpec {
    pub fn validate(&self) -> Result<()> {
        if !(4..=16).contains(&self.frames) {
            return Err(Error::arg("DataSpec", "frames must lie in [4, 16]"));
        }
        if self.height != self.width || !(16..=32).contains(&self.height) {
            return Err(Error::arg("DataSpec", "need square frames with side in [16, 32]"));
        }
        if self.classes == 0 || self.classes > 3 {
            return Err(Error::arg("DataSpec", "classes must be 1..=3"));
        }
        if self.samples_per_class == 0 {
            return Err(Error::arg("DataSpec", "samples_per_class must be positive"));
        }
        Ok(())
    }
}

const BACKGROUND: f64 = -0.3;

/// Deterministic synthetic videos: moving rectangles (translate, wrapping),
/// orbiting disks (rotate), and color-cycling rectangles (color-shift).
/// Three channels throughout.
pub fn make_synthetic_dataset(spec: &DataSpec, rng: &mut Rng) -> Result<Vec<(VideoTensor, usize)>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.classes * spec.samples_per_class);
    for class in 0..spec.classes {
        for _ in 0..spec.samples_per_class {
            let video = match class {
                0 => translate_sample(spec, rng),
                1 => rotate_sample(spec, rng),
                _ => color_shift_sample(spec, rng),
            };
            out.push((video, class));
        }
    }
    Ok(out)
}

fn base_color(rng: &mut Rng) -> [f64; 3] {
    [
        rng.uniform_in(0.4, 1.0),
        rng.uniform_in(0.4, 1.0),
        rng.uniform_in(0.4, 1.0),
    ]
}

fn translate_sample(spec: &DataSpec, rng: &mut Rng) -> VideoTensor {
    let (t, h, w) = (spec.frames, spec.height, spec.width);
    let mut v = VideoTensor::new(Tensor::full(&[t, 3, h, w], BACKGROUND)).unwrap();
    let rect_h = 3 + rng.below(h / 3);
    let rect_w = 3 + rng.below(w / 3);
    let y0 = rng.below(h);
    let x0 = rng.below(w);
    let vy = 1 + rng.below(3);
    let vx = 1 + rng.below(3);
    let color = base_color(rng);
    for ti in 0..t {
        let oy = (y0 + ti * vy) % h;
        let ox = (x0 + ti * vx) % w;
        for dy in 0..rect_h {
            for dx in 0..rect_w {
                let (y, x) = ((oy + dy) % h, (ox + dx) % w);
                for (ci, &col) in color.iter().enumerate() {
                    v.set(ti, ci, y, x, col);
                }
            }
        }
    }
    v
}

fn rotate_sample(spec: &DataSpec, rng: &mut Rng) -> VideoTensor {
    let (t, h, w) = (spec.frames, spec.height, spec.width);
    let mut v = VideoTensor::new(Tensor::full(&[t, 3, h, w], BACKGROUND)).unwrap();
    let radius = rng.uniform_in(2.0, (h as f64) / 6.0);
    let orbit = rng.uniform_in((h as f64) / 6.0, (h as f64) / 3.0);
    let phase = rng.uniform_in(0.0, std::f64::consts::TAU);
    let omega = rng.uniform_in(0.3, 0.9);
    let color = base_color(rng);
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    for ti in 0..t {
        let ang = phase + omega * ti as f64;
        let oy = cy + orbit * ang.sin();
        let ox = cx + orbit * ang.cos();
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as f64 - oy).powi(2) + (x as f64 - ox).powi(2);
                if d2 <= radius * radius {
                    for (ci, &col) in color.iter().enumerate() {
                        v.set(ti, ci, y, x, col);
                    }
                }
            }
        }
    }
    v
}

fn color_shift_sample(spec: &DataSpec, rng: &mut Rng) -> VideoTensor {
    let (t, h, w) = (spec.frames, spec.height, spec.width);
    let mut v = VideoTensor::new(Tensor::full(&[t, 3, h, w], BACKGROUND)).unwrap();
    let rect_h = h / 2 + rng.below(h / 4);
    let rect_w = w / 2 + rng.below(w / 4);
    let y0 = rng.below(h - rect_h);
    let x0 = rng.below(w - rect_w);
    let kappa = rng.uniform_in(0.1, 0.35);
    let phases = [0.0, std::f64::consts::TAU / 3.0, 2.0 * std::f64::consts::TAU / 3.0];
    let amp = rng.uniform_in(0.5, 1.0);
    for ti in 0..t {
        for (ci, &ph) in phases.iter().enumerate() {
            let col = amp * (0.5 + 0.5 * (std::f64::consts::TAU * (kappa * ti as f64) + ph).cos());
            for y in y0..y0 + rect_h {
                for x in x0..x0 + rect_w {
                    v.set(ti, ci, y, x, col);
                }
            }
        }
    }
    v
}

// ---- optimizer and training loop ----

/// Adam with bias correction; state is keyed by parameter name.
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: u64,
    state: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            state: BTreeMap::new(),
        }
    }

    /// Call once per optimization step, before the per-parameter updates.
    pub fn begin_step(&mut self) {
        self.steps += 1;
    }

    pub fn update(&mut self, name: &str, param: &mut [f64], grad: &[f64]) {
        assert_eq!(param.len(), grad.len());
        let (m, v) = self
            .state
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; param.len()], vec![0.0; param.len()]));
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for i in 0..param.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            param[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
    pub freeze_backbone: bool,
    pub cond_drop_prob: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// (step, loss) pairs, one per optimization step.
    pub losses: Vec<f64>,
}

/// Run the optimizer over the dataset. Deterministic given the seed.
pub fn train(
    denoiser: &mut ToyDenoiser,
    dataset: &[(VideoTensor, usize)],
    conditions: &ConditionSet,
    schedule: &DiffusionSchedule,
    opts: &TrainOptions,
) -> Result<TrainResult> {
    if dataset.is_empty() {
        return Err(Error::arg("train", "empty dataset"));
    }
    let mut rng = Rng::new(opts.seed);
    let mut adam = Adam::new(opts.lr);
    let mut losses = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let (video, class) = &dataset[rng.below(dataset.len())];
        let cond = if rng.uniform() < opts.cond_drop_prob {
            conditions.null.clone()
        } else {
            conditions.embeddings[*class].clone()
        };
        let t = 1 + rng.below(schedule.t_steps());
        let mut eps = Tensor::zeros(video.tensor().shape());
        rng.fill_gaussian(eps.data_mut());
        let eps = VideoTensor::new(eps)?;

        let mut g = Graph::new();
        let (vars, trainable) = denoiser.bind(&mut g, opts.freeze_backbone);
        let loss = loss_graph(&mut g, denoiser, &vars, video, &cond, t, &eps, schedule)?;
        let loss_value = g.value(loss).value();
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        losses.push(loss_value);
        g.backward(loss)?;

        adam.begin_step();
        for (name, var) in &trainable {
            let grad = g.adjoint(*var).expect("gradient missing").to_vec();
            denoiser.apply_update(name, |param| adam.update(name, param, &grad))?;
        }
    }
    Ok(TrainResult { losses })
}

/// Deterministic evaluation loss over a fixed (t, eps) grid per sample.
pub fn validation_loss(
    denoiser: &ToyDenoiser,
    dataset: &[(VideoTensor, usize)],
    conditions: &ConditionSet,
    schedule: &DiffusionSchedule,
    seed: u64,
) -> Result<f64> {
    let t_grid: Vec<usize> = {
        let t = schedule.t_steps();
        vec![t / 10 + 1, 3 * t / 10, t / 2, 7 * t / 10, 9 * t / 10]
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for (si, (video, class)) in dataset.iter().enumerate() {
        let cond = &conditions.embeddings[*class];
        for (ti, &t) in t_grid.iter().enumerate() {
            let mut rng = Rng::new(seed ^ ((si as u64) << 20) ^ ti as u64);
            let mut eps = Tensor::zeros(video.tensor().shape());
            rng.fill_gaussian(eps.data_mut());
            let eps = VideoTensor::new(eps.clone())?;
            let ab = schedule.alpha_bar(t);
            let zt = video
                .tensor()
                .zip_map(eps.tensor(), |z, e| ab.sqrt() * z + (1.0 - ab).sqrt() * e);
            let pred = denoiser.predict(&VideoTensor::new(zt)?, t, cond)?;
            let diff = pred.tensor().sub(eps.tensor());
            total += diff.data().iter().map(|x| x * x).sum::<f64>() / diff.numel() as f64;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Smoothed loss (mean of a window at the start/end); the training smoke
/// metric.
pub fn smoothed(losses: &[f64], window: usize) -> (f64, f64) {
    let w = window.min(losses.len());
    let head: f64 = losses[..w].iter().sum::<f64>() / w as f64;
    let tail: f64 = losses[losses.len() - w..].iter().sum::<f64>() / w as f64;
    (head, tail)
}
