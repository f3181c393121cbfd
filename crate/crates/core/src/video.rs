//! Video grid <-> token sequence mapping.
//!
//! A video is a rank-4 tensor [t, c, h, w]. Flattening walks the grid
//! spatial-first: all pixels of a frame (row-major or reversed), then the
//! next frame (forward or reversed temporal order). The four resulting scan
//! orders are exactly realized by three flips of the input plus the identity,
//! which is what the four-branch block in [`crate::mamba`] exploits.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Rank-4 video tensor newtype; shape is [t, c, h, w].
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor(Tensor);

impl VideoTensor {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.rank() != 4 {
            return Err(Error::shape(
                "VideoTensor::new",
                format!("rank {} != 4", t.rank()),
            ));
        }
        Ok(VideoTensor(t))
    }

    pub fn zeros(t: usize, c: usize, h: usize, w: usize) -> Self {
        VideoTensor(Tensor::zeros(&[t, c, h, w]))
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.0.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor {
        &mut self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn at(&self, t: usize, c: usize, h: usize, w: usize) -> f64 {
        let (_, ch, hh, ww) = self.dims();
        self.0.data()[((t * ch + c) * hh + h) * ww + w]
    }

    pub fn set(&mut self, t: usize, c: usize, h: usize, w: usize, v: f64) {
        let (_, ch, hh, ww) = self.dims();
        self.0.data_mut()[((t * ch + c) * hh + h) * ww + w] = v;
    }
}

/// The four spatial-first scan orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanOrder {
    SpatialFwdTemporalFwd,
    SpatialFwdTemporalRev,
    SpatialRevTemporalFwd,
    SpatialRevTemporalRev,
}

impl ScanOrder {
    pub const ALL: [ScanOrder; 4] = [
        ScanOrder::SpatialFwdTemporalFwd,
        ScanOrder::SpatialFwdTemporalRev,
        ScanOrder::SpatialRevTemporalFwd,
        ScanOrder::SpatialRevTemporalRev,
    ];

    fn spatial_reversed(self) -> bool {
        matches!(
            self,
            ScanOrder::SpatialRevTemporalFwd | ScanOrder::SpatialRevTemporalRev
        )
    }

    fn temporal_reversed(self) -> bool {
        matches!(
            self,
            ScanOrder::SpatialFwdTemporalRev | ScanOrder::SpatialRevTemporalRev
        )
    }

    /// The scan order realized by flattening `flip(x, i)` in the base order.
    pub fn from_branch(i: usize) -> ScanOrder {
        match i {
            0 => ScanOrder::SpatialFwdTemporalFwd,
            1 => ScanOrder::SpatialFwdTemporalRev,
            2 => ScanOrder::SpatialRevTemporalFwd,
            3 => ScanOrder::SpatialRevTemporalRev,
            _ => panic!("branch index out of range"),
        }
    }
}

/// Bijection between grid positions (t, h, w) and sequence positions.
#[derive(Debug, Clone)]
pub struct ScanLayout {
    /// forward_index[grid_flat] = sequence position
    pub forward_index: Vec<usize>,
    /// inverse_index[sequence position] = grid_flat
    pub inverse_index: Vec<usize>,
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl ScanLayout {
    pub fn build(order: ScanOrder, t: usize, h: usize, w: usize) -> ScanLayout {
        let hw = h * w;
        let total = t * hw;
        let mut forward = vec![0usize; total];
        let mut inverse = vec![0usize; total];
        for seq in 0..total {
            let frame_pos = seq / hw;
            let pix_pos = seq % hw;
            let ti = if order.temporal_reversed() {
                t - 1 - frame_pos
            } else {
                frame_pos
            };
            let pi = if order.spatial_reversed() {
                hw - 1 - pix_pos
            } else {
                pix_pos
            };
            let grid = ti * hw + pi;
            forward[grid] = seq;
            inverse[seq] = grid;
        }
        ScanLayout {
            forward_index: forward,
            inverse_index: inverse,
            t,
            h,
            w,
        }
    }

    /// Element-level gather indices for [t,c,h,w] -> [t*h*w, c] tokens.
    pub fn token_gather(&self, c: usize) -> Vec<usize> {
        let hw = self.h * self.w;
        let mut idx = Vec::with_capacity(self.t * hw * c);
        for seq in 0..self.t * hw {
            let grid = self.inverse_index[seq];
            let ti = grid / hw;
            let pi = grid % hw;
            for ci in 0..c {
                idx.push((ti * c + ci) * hw + pi);
            }
        }
        idx
    }

    /// Element-level gather indices for [t*h*w, c] tokens -> [t,c,h,w].
    pub fn video_gather(&self, c: usize) -> Vec<usize> {
        let hw = self.h * self.w;
        let mut idx = vec![0usize; self.t * hw * c];
        for seq in 0..self.t * hw {
            let grid = self.inverse_index[seq];
            let ti = grid / hw;
            let pi = grid % hw;
            for ci in 0..c {
                idx[(ti * c + ci) * hw + pi] = seq * c + ci;
            }
        }
        idx
    }
}

/// Learnable frame-border embedding, one value per channel, shared by all
/// border positions of every frame.
#[derive(Debug, Clone)]
pub struct FramePadding {
    pub theta_frame: Tensor, // [c]
}

impl FramePadding {
    pub fn zeros(c: usize) -> Self {
        FramePadding {
            theta_frame: Tensor::zeros(&[c]),
        }
    }
}

/// Pad every frame with a one-pixel ring of theta values:
/// [t,c,h,w] -> [t,c,h+2,w+2]. Plain-tensor counterpart of
/// [`crate::graph::Graph::pad_frames`].
pub fn pad_frames(video: &VideoTensor, padding: &FramePadding) -> VideoTensor {
    let (t, c, h, w) = video.dims();
    assert_eq!(padding.theta_frame.shape(), &[c]);
    let mut out = VideoTensor::zeros(t, c, h + 2, w + 2);
    for ti in 0..t {
        for ci in 0..c {
            let theta = padding.theta_frame.data()[ci];
            for i in 0..h + 2 {
                for j in 0..w + 2 {
                    let v = if i == 0 || j == 0 || i == h + 1 || j == w + 1 {
                        theta
                    } else {
                        video.at(ti, ci, i - 1, j - 1)
                    };
                    out.set(ti, ci, i, j, v);
                }
            }
        }
    }
    out
}

/// Crop the one-pixel border back off: [t,c,h,w] -> [t,c,h-2,w-2].
pub fn crop_border(video: &VideoTensor) -> VideoTensor {
    let (t, c, h, w) = video.dims();
    assert!(h > 2 && w > 2, "nothing to crop");
    let mut out = VideoTensor::zeros(t, c, h - 2, w - 2);
    for ti in 0..t {
        for ci in 0..c {
            for i in 0..h - 2 {
                for j in 0..w - 2 {
                    out.set(ti, ci, i, j, video.at(ti, ci, i + 1, j + 1));
                }
            }
        }
    }
    out
}

/// Element gather indices realizing the interior crop, for the graph path.
pub fn crop_gather(t: usize, c: usize, hp: usize, wp: usize) -> Vec<usize> {
    let (h, w) = (hp - 2, wp - 2);
    let mut idx = Vec::with_capacity(t * c * h * w);
    for ti in 0..t {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    idx.push(((ti * c + ci) * hp + i + 1) * wp + j + 1);
                }
            }
        }
    }
    idx
}

/// Flatten a video into a token sequence under a scan order. Each token is
/// the channel vector at one (t, h, w) grid position; the result is
/// [t*h*w, c] along with the layout for unflattening.
pub fn flatten(video: &VideoTensor, order: ScanOrder) -> (Tensor, ScanLayout) {
    let (t, c, h, w) = video.dims();
    let layout = ScanLayout::build(order, t, h, w);
    let idx = layout.token_gather(c);
    let mut data = Vec::with_capacity(idx.len());
    for &i in &idx {
        data.push(video.tensor().data()[i]);
    }
    (Tensor::new(vec![t * h * w, c], data).unwrap(), layout)
}

/// Inverse of [`flatten`] for the layout it returned.
pub fn unflatten(tokens: &Tensor, layout: &ScanLayout, c: usize) -> VideoTensor {
    let idx = layout.video_gather(c);
    let mut data = Vec::with_capacity(idx.len());
    for &i in &idx {
        data.push(tokens.data()[i]);
    }
    VideoTensor::new(Tensor::new(vec![layout.t, c, layout.h, layout.w], data).unwrap()).unwrap()
}

/// Element permutation for branch `i`'s flip on a [t,c,h,w] video:
/// out[e] = in[perm[e]].
///
/// flip_0 = identity, flip_1 = temporal reversal, flip_2 = spatial reversal
/// (180-degree rotation, i.e. reversal of the row-major pixel order), and
/// flip_3 = both. Every flip is an involution, and together they form the
/// Klein four-group.
pub fn flip_perm(i: usize, t: usize, c: usize, h: usize, w: usize) -> Result<Vec<usize>> {
    if i > 3 {
        return Err(Error::arg("flip", format!("branch index {i} out of range")));
    }
    let temporal = i == 1 || i == 3;
    let spatial = i == 2 || i == 3;
    let hw = h * w;
    let mut perm = Vec::with_capacity(t * c * hw);
    for ti in 0..t {
        let st = if temporal { t - 1 - ti } else { ti };
        for ci in 0..c {
            for p in 0..hw {
                let sp = if spatial { hw - 1 - p } else { p };
                perm.push((st * c + ci) * hw + sp);
            }
        }
    }
    Ok(perm)
}

/// Apply flip `i` to a video.
pub fn flip(video: &VideoTensor, i: usize) -> Result<VideoTensor> {
    let (t, c, h, w) = video.dims();
    let perm = flip_perm(i, t, c, h, w)?;
    let mut data = Vec::with_capacity(perm.len());
    for &p in &perm {
        data.push(video.tensor().data()[p]);
    }
    VideoTensor::new(Tensor::new(vec![t, c, h, w], data).unwrap())
}

/// Inverse of [`flip`]; flips are involutions, so this is `flip` itself.
pub fn unflip(video: &VideoTensor, i: usize) -> Result<VideoTensor> {
    flip(video, i)
}
