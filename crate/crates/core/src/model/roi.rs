//! Region-of-interest alignment: bilinear resampling of a box of the feature map back to a
//! fixed grid, averaging `ratio x ratio` sample points per output bin.
//!
//! Sampling follows the half-pixel-aligned convention: feature cell `(r, c)` has its center at
//! continuous coordinate `(c + 0.5, r + 0.5)`. Samples farther than one cell outside the map read
//! as zero, samples within that margin clamp to the border. Because box coordinates are host
//! values, the op is linear in the feature map and its backward pass is the exact transpose.

use std::sync::Arc;

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor};

use crate::error::{Error, Result};

/// Box in continuous feature-map coordinates (x right, y down), tied to a batch item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiBox {
    pub batch: usize,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Minimum box side; thinner boxes are widened symmetrically.
pub const ROI_EPS: f64 = 1e-6;

/// Sparse linear map from input cells to output bins.
#[derive(Debug)]
pub struct RoiTable {
    batch: usize,
    channels: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    roi_batch: Vec<usize>,
    /// `starts[r * bins + o]..starts[r * bins + o + 1]` indexes `cells`/`weights`.
    starts: Vec<usize>,
    cells: Vec<u32>,
    weights: Vec<f64>,
}

fn widen(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo >= ROI_EPS {
        (lo, hi)
    } else {
        let c = 0.5 * (lo + hi);
        (c - ROI_EPS / 2.0, c + ROI_EPS / 2.0)
    }
}

/// Bilinear taps for a sample at continuous index-space `(y, x)` (cell centers at integers).
fn bilinear_taps(y: f64, x: f64, h: usize, w: usize, out: &mut Vec<(u32, f64)>, scale: f64) {
    let (hf, wf) = (h as f64, w as f64);
    if y < -1.0 || y > hf || x < -1.0 || x > wf {
        return;
    }
    let (y, x) = (y.max(0.0), x.max(0.0));
    let (mut y0, mut x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1);
    let (mut ly, mut lx) = (y - y0 as f64, x - x0 as f64);
    if y0 >= h - 1 {
        y0 = h - 1;
        y1 = h - 1;
        ly = 0.0;
    } else {
        y1 = y0 + 1;
    }
    if x0 >= w - 1 {
        x0 = w - 1;
        x1 = w - 1;
        lx = 0.0;
    } else {
        x1 = x0 + 1;
    }
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    for (r, c, wt) in [(y0, x0, hy * hx), (y0, x1, hy * lx), (y1, x0, ly * hx), (y1, x1, ly * lx)] {
        if wt != 0.0 {
            out.push(((r * w + c) as u32, wt * scale));
        }
    }
}

impl RoiTable {
    pub fn new(
        input_dims: (usize, usize, usize, usize),
        boxes: &[RoiBox],
        out_h: usize,
        out_w: usize,
        ratio: usize,
    ) -> Result<Self> {
        let (batch, channels, in_h, in_w) = input_dims;
        if ratio == 0 || out_h == 0 || out_w == 0 || in_h == 0 || in_w == 0 {
            return Err(Error::Config("roi align needs positive sizes and sampling ratio".into()));
        }
        let bins = out_h * out_w;
        let mut starts = Vec::with_capacity(boxes.len() * bins + 1);
        let mut cells = Vec::new();
        let mut weights = Vec::new();
        let mut taps = Vec::with_capacity(4 * ratio * ratio);
        let mut roi_batch = Vec::with_capacity(boxes.len());
        starts.push(0);
        for b in boxes {
            if b.batch >= batch {
                return Err(Error::Argument(format!("roi batch index {} out of range", b.batch)));
            }
            if ![b.x1, b.y1, b.x2, b.y2].iter().all(|v| v.is_finite()) {
                return Err(Error::Argument("roi box has non-finite coordinates".into()));
            }
            roi_batch.push(b.batch);
            let (x1, x2) = widen(b.x1, b.x2);
            let (y1, y2) = widen(b.y1, b.y2);
            let (bin_w, bin_h) = ((x2 - x1) / out_w as f64, (y2 - y1) / out_h as f64);
            let scale = 1.0 / (ratio * ratio) as f64;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    taps.clear();
                    for iy in 0..ratio {
                        let y = y1 - 0.5 + (oy as f64 + (iy as f64 + 0.5) / ratio as f64) * bin_h;
                        for ix in 0..ratio {
                            let x = x1 - 0.5 + (ox as f64 + (ix as f64 + 0.5) / ratio as f64) * bin_w;
                            bilinear_taps(y, x, in_h, in_w, &mut taps, scale);
                        }
                    }
                    taps.sort_by_key(|t| t.0);
                    let mut last = u32::MAX;
                    for &(cell, w) in &taps {
                        if cell == last {
                            *weights.last_mut().expect("merged tap follows a pushed tap") += w;
                        } else {
                            cells.push(cell);
                            weights.push(w);
                            last = cell;
                        }
                    }
                    starts.push(cells.len());
                }
            }
        }
        Ok(RoiTable {
            batch,
            channels,
            in_h,
            in_w,
            out_h,
            out_w,
            roi_batch,
            starts,
            cells,
            weights,
        })
    }

    pub fn num_rois(&self) -> usize {
        self.roi_batch.len()
    }
}

trait Elem: Copy + Default + std::ops::AddAssign + std::ops::Mul<Output = Self> {
    fn from_f64(v: f64) -> Self;
}

impl Elem for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Elem for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout, what: &str) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => candle_core::bail!("{what} expects a contiguous input"),
    }
}

impl RoiTable {
    fn gather<T: Elem>(&self, input: &[T]) -> Vec<T> {
        let (bins, plane) = (self.out_h * self.out_w, self.in_h * self.in_w);
        let weights: Vec<T> = self.weights.iter().map(|&w| T::from_f64(w)).collect();
        let mut out = vec![T::default(); self.num_rois() * self.channels * bins];
        for (r, &b) in self.roi_batch.iter().enumerate() {
            for c in 0..self.channels {
                let src = &input[(b * self.channels + c) * plane..][..plane];
                let dst = &mut out[(r * self.channels + c) * bins..][..bins];
                for (o, d) in dst.iter_mut().enumerate() {
                    let (s, e) = (self.starts[r * bins + o], self.starts[r * bins + o + 1]);
                    let mut acc = T::default();
                    for k in s..e {
                        acc += weights[k] * src[self.cells[k] as usize];
                    }
                    *d = acc;
                }
            }
        }
        out
    }

    fn scatter<T: Elem>(&self, grad: &[T]) -> Vec<T> {
        let (bins, plane) = (self.out_h * self.out_w, self.in_h * self.in_w);
        let weights: Vec<T> = self.weights.iter().map(|&w| T::from_f64(w)).collect();
        let mut out = vec![T::default(); self.batch * self.channels * plane];
        for (r, &b) in self.roi_batch.iter().enumerate() {
            for c in 0..self.channels {
                let src = &grad[(r * self.channels + c) * bins..][..bins];
                let dst = &mut out[(b * self.channels + c) * plane..][..plane];
                for (o, &g) in src.iter().enumerate() {
                    let (s, e) = (self.starts[r * bins + o], self.starts[r * bins + o + 1]);
                    for k in s..e {
                        dst[self.cells[k] as usize] += weights[k] * g;
                    }
                }
            }
        }
        out
    }
}

struct RoiAlignOp(Arc<RoiTable>);
struct RoiAlignTransposeOp(Arc<RoiTable>);

impl CustomOp1 for RoiAlignOp {
    fn name(&self) -> &'static str {
        "roi-align"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let t = &self.0;
        let expected = [t.batch, t.channels, t.in_h, t.in_w];
        if layout.dims() != expected {
            candle_core::bail!("roi-align input {:?} does not match table {:?}", layout.dims(), expected);
        }
        let shape = Shape::from((t.num_rois(), t.channels, t.out_h, t.out_w));
        let out = match storage {
            CpuStorage::F32(d) => CpuStorage::F32(t.gather(contiguous(d, layout, "roi-align")?)),
            CpuStorage::F64(d) => CpuStorage::F64(t.gather(contiguous(d, layout, "roi-align")?)),
            _ => candle_core::bail!("roi-align supports f32 and f64"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad_res.contiguous()?.apply_op1(RoiAlignTransposeOp(self.0.clone()))?))
    }
}

impl CustomOp1 for RoiAlignTransposeOp {
    fn name(&self) -> &'static str {
        "roi-align-transpose"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let t = &self.0;
        let expected = [t.num_rois(), t.channels, t.out_h, t.out_w];
        if layout.dims() != expected {
            candle_core::bail!("roi-align transpose input {:?} does not match {:?}", layout.dims(), expected);
        }
        let shape = Shape::from((t.batch, t.channels, t.in_h, t.in_w));
        let out = match storage {
            CpuStorage::F32(d) => CpuStorage::F32(t.scatter(contiguous(d, layout, "roi-align")?)),
            CpuStorage::F64(d) => CpuStorage::F64(t.scatter(contiguous(d, layout, "roi-align")?)),
            _ => candle_core::bail!("roi-align supports f32 and f64"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad_res.contiguous()?.apply_op1(RoiAlignOp(self.0.clone()))?))
    }
}

/// Resample each box of `input: (B, C, H, W)` to `(R, C, out_h, out_w)`.
pub fn roi_align(input: &Tensor, boxes: &[RoiBox], out_h: usize, out_w: usize, ratio: usize) -> Result<Tensor> {
    let table = RoiTable::new(input.dims4()?, boxes, out_h, out_w, ratio)?;
    Ok(input.contiguous()?.apply_op1(RoiAlignOp(Arc::new(table)))?)
}
