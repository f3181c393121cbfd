// quick timing breakdown of the forward path pieces
use std::time::Instant;
use tmamba_core::attention::{AttnParams, BypassAttnParams, Phi};
use tmamba_core::graph::Graph;
use tmamba_core::mamba::{MambaBlockParams, PaddingMode, block_forward_graph};
use tmamba_core::rng::Rng;
use tmamba_core::ssm::{SelectiveParams, selective_scan};
use tmamba_core::tensor::Tensor;

fn time_ms(label: &str, reps: usize, mut f: impl FnMut()) {
    let t0 = Instant::now();
    for _ in 0..reps { f(); }
    println!("{label}: {:.2} ms", t0.elapsed().as_secs_f64()*1000.0/reps as f64);
}

fn main() {
    let mut rng = Rng::new(0);
    let (t, c, h, w) = (4usize, 16usize, 16usize, 16usize);

    // one mamba block forward on the graph
    let params = MambaBlockParams::init(c, c, 8, PaddingMode::Learnable, &mut rng);
    let x = Tensor::randn(&[t, c, h, w], &mut rng, 1.0);
    time_ms("mamba block fwd (graph)", 10, || {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (vars, _) = params.bind(&mut g, false);
        let y = block_forward_graph(&mut g, xv, &vars, PaddingMode::Learnable).unwrap();
        std::hint::black_box(g.value(y).data()[0]);
    });

    // raw selective scan at the block size
    let sel = SelectiveParams::init(c, 8, &mut rng);
    let tokens = Tensor::randn(&[t*(h+2)*(w+2), c], &mut rng, 1.0);
    time_ms("raw selective scan 1296 tokens", 10, || {
        std::hint::black_box(selective_scan(&sel, &tokens).unwrap().data()[0]);
    });

    // matmuls at block scale
    let a = Tensor::randn(&[1296, 16], &mut rng, 1.0);
    let b = Tensor::randn(&[16, 16], &mut rng, 1.0);
    time_ms("matmul 1296x16x16", 100, || {
        std::hint::black_box(a.matmul(&b).unwrap().data()[0]);
    });

    // one frame of mixed attention at denoiser scale
    let base = AttnParams::init(16, &mut rng);
    let bp = BypassAttnParams::random_init(16, 12, Phi::Fixed(0.5), &mut rng);
    let q = Tensor::randn(&[256, 16], &mut rng, 1.0);
    let kv = Tensor::randn(&[512, 16], &mut rng, 1.0);
    time_ms("mixed attention frame (graph)", 10, || {
        let mut g = Graph::new();
        let qv = g.constant(q.clone());
        let kvv = g.constant(kv.clone());
        let basev = base.bind(&mut g, false);
        let bpv = bp.bind(&mut g, false);
        let o = tmamba_core::attention::mixed_attention_graph(&mut g, qv, kvv, kvv, &basev, &bpv);
        std::hint::black_box(g.value(o).data()[0]);
    });

    // scores matmul alone
    let qq = Tensor::randn(&[256, 16], &mut rng, 1.0);
    let kk = Tensor::randn(&[16, 512], &mut rng, 1.0);
    time_ms("matmul 256x16x512", 100, || {
        std::hint::black_box(qq.matmul(&kk).unwrap().data()[0]);
    });
    // softmax at scores scale via graph
    let scores = Tensor::randn(&[256, 512], &mut rng, 1.0);
    time_ms("softmax_rows 256x512 (graph)", 100, || {
        let mut g = Graph::new();
        let s = g.constant(scores.clone());
        let p = g.softmax_rows(s);
        std::hint::black_box(g.value(p).data()[0]);
    });
    // gather at video scale
    let vid = Tensor::randn(&[t, c, h+2, w+2], &mut rng, 1.0);
    let perm: Vec<usize> = (0..vid.numel()).rev().collect();
    time_ms("gather 20736 elems (graph)", 100, || {
        let mut g = Graph::new();
        let v = g.constant(vid.clone());
        let y = g.gather(v, perm.clone(), vid.shape());
        std::hint::black_box(g.value(y).data()[0]);
    });
}
