//! Four-branch temporal block: pad, flip, shared Conv -> SiLU -> selective
//! scan pipeline, inverse flip, sum, crop, residual.
//!
//! One parameter set serves all four branches; directionality comes entirely
//! from the flips. The SSM output projection is zero-initialized so a fresh
//! block is an exact identity map, which lets blocks be inserted into a
//! trained network without disturbing it.

use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::rng::Rng;
use crate::ssm::SelectiveParams;
use crate::tensor::Tensor;
use crate::video::{crop_gather, flip_perm, ScanLayout, ScanOrder, VideoTensor};

pub const CONV_KERNEL_WIDTH: usize = 4;

/// How frame boundaries are marked before scanning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PaddingMode {
    /// No padding; tokens of adjacent frames abut directly.
    None,
    /// One-pixel ring holding a fixed, non-trainable value.
    FixedToken(f64),
    /// One-pixel ring holding the learnable per-channel embedding.
    Learnable,
}

/// Parameters of one temporal block. All four flip branches share them.
#[derive(Debug, Clone)]
pub struct MambaBlockParams {
    pub theta_frame: Tensor, // [c] learnable border embedding
    pub w_in: Tensor,        // [c, d] input channel projection
    pub w_gate: Tensor,      // [c, d] gating projection
    pub w_conv: Tensor,      // [d, 4] depthwise causal conv along the token axis
    pub b_conv: Tensor,      // [d]
    pub sel: SelectiveParams,
    pub w_out: Tensor, // [d, c] output projection, zero-initialized
    pub padding: PaddingMode,
}

impl MambaBlockParams {
    /// Random initialization with zero output projection (identity block).
    pub fn init(c: usize, d: usize, n: usize, padding: PaddingMode, rng: &mut Rng) -> Self {
        let sc = 1.0 / (c as f64).sqrt();
        MambaBlockParams {
            theta_frame: Tensor::zeros(&[c]),
            w_in: Tensor::randn(&[c, d], rng, sc),
            w_gate: Tensor::randn(&[c, d], rng, sc),
            w_conv: Tensor::randn(&[d, CONV_KERNEL_WIDTH], rng, 0.5),
            b_conv: Tensor::zeros(&[d]),
            sel: SelectiveParams::init(d, n, rng),
            w_out: Tensor::zeros(&[d, c]),
            padding,
        }
    }

    /// Randomize the output projection (used by tests that need gradients to
    /// reach the upstream parameters).
    pub fn randomize_output(&mut self, rng: &mut Rng) {
        let shape = self.w_out.shape().to_vec();
        self.w_out = Tensor::randn(&shape, rng, 1.0 / (shape[0] as f64).sqrt());
    }

    pub fn channels(&self) -> usize {
        self.w_in.shape()[0]
    }

    pub fn inner_dim(&self) -> usize {
        self.w_in.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        let named = self.named();
        named.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Named views of every parameter tensor, used for checkpoints and the
    /// optimizer. theta_frame is included only in learnable-padding mode.
    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v: Vec<(&'static str, &Tensor)> = vec![
            ("w_in", &self.w_in),
            ("w_gate", &self.w_gate),
            ("w_conv", &self.w_conv),
            ("b_conv", &self.b_conv),
            ("a", &self.sel.a),
            ("w_delta", &self.sel.w_delta),
            ("bias_delta", &self.sel.bias_delta),
            ("w_b", &self.sel.w_b),
            ("bias_b", &self.sel.bias_b),
            ("w_c", &self.sel.w_c),
            ("bias_c", &self.sel.bias_c),
            ("w_out", &self.w_out),
        ];
        if matches!(self.padding, PaddingMode::Learnable) {
            v.push(("theta_frame", &self.theta_frame));
        }
        v
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut v: Vec<(&'static str, &mut Tensor)> = vec![
            ("w_in", &mut self.w_in),
            ("w_gate", &mut self.w_gate),
            ("w_conv", &mut self.w_conv),
            ("b_conv", &mut self.b_conv),
            ("a", &mut self.sel.a),
            ("w_delta", &mut self.sel.w_delta),
            ("bias_delta", &mut self.sel.bias_delta),
            ("w_b", &mut self.sel.w_b),
            ("bias_b", &mut self.sel.bias_b),
            ("w_c", &mut self.sel.w_c),
            ("bias_c", &mut self.sel.bias_c),
            ("w_out", &mut self.w_out),
        ];
        if matches!(self.padding, PaddingMode::Learnable) {
            v.push(("theta_frame", &mut self.theta_frame));
        }
        v
    }
}

/// Graph-side handles to one block's parameters.
#[derive(Debug, Clone, Copy)]
pub struct MambaBlockVars {
    pub theta: VarId,
    pub w_in: VarId,
    pub w_gate: VarId,
    pub w_conv: VarId,
    pub b_conv: VarId,
    pub a: VarId,
    pub w_delta: VarId,
    pub bias_delta: VarId,
    pub w_b: VarId,
    pub bias_b: VarId,
    pub w_c: VarId,
    pub bias_c: VarId,
    pub w_out: VarId,
}

impl MambaBlockParams {
    /// Add every parameter as a graph leaf. Returns the handles plus the
    /// (name, id) pairs of the tensors that should receive gradient updates.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> (MambaBlockVars, Vec<(&'static str, VarId)>) {
        let theta = match self.padding {
            PaddingMode::Learnable => g.input(self.theta_frame.clone(), trainable),
            PaddingMode::FixedToken(v) => {
                g.constant(Tensor::full(&[self.channels()], v))
            }
            PaddingMode::None => g.constant(Tensor::zeros(&[self.channels()])),
        };
        let vars = MambaBlockVars {
            theta,
            w_in: g.input(self.w_in.clone(), trainable),
            w_gate: g.input(self.w_gate.clone(), trainable),
            w_conv: g.input(self.w_conv.clone(), trainable),
            b_conv: g.input(self.b_conv.clone(), trainable),
            a: g.input(self.sel.a.clone(), trainable),
            w_delta: g.input(self.sel.w_delta.clone(), trainable),
            bias_delta: g.input(self.sel.bias_delta.clone(), trainable),
            w_b: g.input(self.sel.w_b.clone(), trainable),
            bias_b: g.input(self.sel.bias_b.clone(), trainable),
            w_c: g.input(self.sel.w_c.clone(), trainable),
            bias_c: g.input(self.sel.bias_c.clone(), trainable),
            w_out: g.input(self.w_out.clone(), trainable),
        };
        let mut named = vec![
            ("w_in", vars.w_in),
            ("w_gate", vars.w_gate),
            ("w_conv", vars.w_conv),
            ("b_conv", vars.b_conv),
            ("a", vars.a),
            ("w_delta", vars.w_delta),
            ("bias_delta", vars.bias_delta),
            ("w_b", vars.w_b),
            ("bias_b", vars.bias_b),
            ("w_c", vars.w_c),
            ("bias_c", vars.bias_c),
            ("w_out", vars.w_out),
        ];
        if matches!(self.padding, PaddingMode::Learnable) {
            named.push(("theta_frame", vars.theta));
        }
        (vars, named)
    }
}

/// One branch on an already padded video node: flip_i, flatten in the base
/// order, depthwise causal conv, SiLU, selective scan, gate, project, and
/// unflatten. Output has the padded shape; the caller inverse-flips and sums.
pub fn branch_forward_graph(
    g: &mut Graph,
    x_padded: VarId,
    branch: usize,
    vars: &MambaBlockVars,
) -> Result<VarId> {
    let shape = g.shape(x_padded).to_vec();
    let (t, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let perm = flip_perm(branch, t, c, h, w)?;
    let flipped = g.gather(x_padded, perm, &shape);

    let layout = ScanLayout::build(ScanOrder::SpatialFwdTemporalFwd, t, h, w);
    let m = t * h * w;
    let tokens = g.gather(flipped, layout.token_gather(c), &[m, c]);

    let u0 = g.matmul(tokens, vars.w_in);
    let gate = g.matmul(tokens, vars.w_gate);
    let u1 = g.causal_conv1d(u0, vars.w_conv, vars.b_conv);
    let u2 = g.silu(u1);

    // per-token step sizes and projections from the pipeline input
    let pre_delta = g.matmul(u2, vars.w_delta);
    let pre_delta = g.add_row_bias(pre_delta, vars.bias_delta);
    let delta = g.softplus(pre_delta);
    let b = g.matmul(u2, vars.w_b);
    let b = g.add_row_bias(b, vars.bias_b);
    let cc = g.matmul(u2, vars.w_c);
    let cc = g.add_row_bias(cc, vars.bias_c);
    let y = g.selective_scan(u2, delta, b, cc, vars.a);

    let gate_act = g.silu(gate);
    let gated = g.mul(y, gate_act);
    let out_tokens = g.matmul(gated, vars.w_out);
    Ok(g.gather(out_tokens, layout.video_gather(c), &shape))
}

/// Sum the four branch outputs after restoring their orientation: branch 0
/// passes through unchanged, branches 1..3 are inverse-flipped first.
pub fn fuse_graph(g: &mut Graph, branches: [VarId; 4]) -> Result<VarId> {
    let shape = g.shape(branches[0]).to_vec();
    for b in &branches[1..] {
        if g.shape(*b) != shape.as_slice() {
            return Err(Error::shape("fuse", "branch outputs differ in shape"));
        }
    }
    let (t, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let mut acc = branches[0];
    for (i, &b) in branches.iter().enumerate().skip(1) {
        let perm = flip_perm(i, t, c, h, w)?;
        let restored = g.gather(b, perm, &shape);
        acc = g.add(acc, restored);
    }
    Ok(acc)
}

/// Full block on a graph: optional pad, four branches, fuse, optional crop,
/// residual connection around the whole thing.
pub fn block_forward_graph(
    g: &mut Graph,
    x: VarId,
    vars: &MambaBlockVars,
    padding: PaddingMode,
) -> Result<VarId> {
    let padded = match padding {
        PaddingMode::None => x,
        _ => g.pad_frames(x, vars.theta),
    };
    let b0 = branch_forward_graph(g, padded, 0, vars)?;
    let b1 = branch_forward_graph(g, padded, 1, vars)?;
    let b2 = branch_forward_graph(g, padded, 2, vars)?;
    let b3 = branch_forward_graph(g, padded, 3, vars)?;
    let fused = fuse_graph(g, [b0, b1, b2, b3])?;
    let inner = match padding {
        PaddingMode::None => fused,
        _ => {
            let pshape = g.shape(fused).to_vec();
            let (t, c, hp, wp) = (pshape[0], pshape[1], pshape[2], pshape[3]);
            let idx = crop_gather(t, c, hp, wp);
            g.gather(fused, idx, &[t, c, hp - 2, wp - 2])
        }
    };
    Ok(g.add(x, inner))
}

// ---- plain-tensor wrappers (single implementation: they run the graph) ----

/// Branch pipeline on plain tensors; `x_padded` must already carry the ring
/// when padding is in use.
pub fn branch_forward(
    x_padded: &VideoTensor,
    branch: usize,
    params: &MambaBlockParams,
) -> Result<VideoTensor> {
    if x_padded.dims().1 != params.channels() {
        return Err(Error::shape(
            "branch_forward",
            format!(
                "video has {} channels, block expects {}",
                x_padded.dims().1,
                params.channels()
            ),
        ));
    }
    let mut g = Graph::new();
    let x = g.constant(x_padded.tensor().clone());
    let (vars, _) = params.bind(&mut g, false);
    let y = branch_forward_graph(&mut g, x, branch, &vars)?;
    VideoTensor::new(g.value(y).clone())
}

/// Fuse four plain branch outputs.
pub fn fuse(branches: &[VideoTensor; 4]) -> Result<VideoTensor> {
    let mut g = Graph::new();
    let ids = [
        g.constant(branches[0].tensor().clone()),
        g.constant(branches[1].tensor().clone()),
        g.constant(branches[2].tensor().clone()),
        g.constant(branches[3].tensor().clone()),
    ];
    let y = fuse_graph(&mut g, ids)?;
    VideoTensor::new(g.value(y).clone())
}

/// Verification hook: fuse with the sign of the restored branches flipped.
/// Exists so the oracle suite can demonstrate it catches a broken fusion.
#[doc(hidden)]
pub fn fuse_with_fault(branches: &[VideoTensor; 4]) -> Result<VideoTensor> {
    let mut g = Graph::new();
    let b0 = g.constant(branches[0].tensor().clone());
    let shape = branches[0].tensor().shape().to_vec();
    let (t, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let mut acc = b0;
    for i in 1..4 {
        let b = g.constant(branches[i].tensor().clone());
        let perm = flip_perm(i, t, c, h, w)?;
        let restored = g.gather(b, perm, &shape);
        acc = g.sub(acc, restored);
    }
    VideoTensor::new(g.value(acc).clone())
}

/// Full block on a plain video.
pub fn block_forward(x: &VideoTensor, params: &MambaBlockParams) -> Result<VideoTensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.tensor().clone());
    let (vars, _) = params.bind(&mut g, false);
    let y = block_forward_graph(&mut g, xv, &vars, params.padding)?;
    VideoTensor::new(g.value(y).clone())
}

/// Residual stack of blocks applied in sequence.
#[derive(Debug, Clone)]
pub struct BlockStack {
    pub blocks: Vec<MambaBlockParams>,
}

impl BlockStack {
    pub fn init(
        depth: usize,
        c: usize,
        d: usize,
        n: usize,
        padding: PaddingMode,
        rng: &mut Rng,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::arg("BlockStack::init", "depth must be at least 1"));
        }
        Ok(BlockStack {
            blocks: (0..depth)
                .map(|_| MambaBlockParams::init(c, d, n, padding, rng))
                .collect(),
        })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.param_count()).sum()
    }

    pub fn forward_graph(
        &self,
        g: &mut Graph,
        x: VarId,
        vars: &[MambaBlockVars],
    ) -> Result<VarId> {
        let mut h = x;
        for (block, v) in self.blocks.iter().zip(vars) {
            h = block_forward_graph(g, h, v, block.padding)?;
        }
        Ok(h)
    }
}

/// Apply the stack to a plain video.
pub fn stack_forward(x: &VideoTensor, stack: &BlockStack) -> Result<VideoTensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.tensor().clone());
    let mut vars = Vec::new();
    for b in &stack.blocks {
        vars.push(b.bind(&mut g, false).0);
    }
    let y = stack.forward_graph(&mut g, xv, &vars)?;
    VideoTensor::new(g.value(y).clone())
}
