//! The template-conditioned pose generator and its discriminator.

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{Conv2d, Linear};

use super::attention::Decoder;
use super::backbone::Backbone;
use super::layers::{conv, linear, Mlp};
use super::params::{Init, ParamStore};
use super::roi::{roi_align, RoiBox};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::pose::{Pose, BOX_EPS, NUM_KEYPOINTS, POSE_DIM};
use crate::scene::PreparedInput;

/// Stack prepared inputs into `(3B, 3, S, S)`, the three crops of a sample adjacent.
pub fn crops_to_tensor(inputs: &[&PreparedInput], dtype: DType) -> Result<Tensor> {
    let s = inputs
        .first()
        .ok_or_else(|| Error::Argument("empty batch".into()))?
        .crops[0]
        .size;
    let mut data = Vec::with_capacity(inputs.len() * 9 * s * s);
    for inp in inputs {
        for c in &inp.crops {
            if c.size != s {
                return Err(Error::Argument("mixed crop sizes in one batch".into()));
            }
            data.extend_from_slice(&c.data);
        }
    }
    Ok(Tensor::from_vec(data, (inputs.len() * 3, 3, s, s), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Normalize `(..., M, 2)` point sets to the unit box, differentiably. Extents below the box
/// epsilon are widened about their center, matching [`crate::pose::normalize`].
pub fn normalize_points(points: &Tensor) -> Result<Tensor> {
    let axis = points.rank() - 2;
    let hi = points.max_keepdim(axis)?;
    let lo = points.min_keepdim(axis)?;
    let center = ((&hi + &lo)? * 0.5)?;
    let extent = (hi - lo)?.maximum(BOX_EPS)?;
    Ok(points.broadcast_sub(&center)?.broadcast_div(&extent)?)
}

/// Shared backbone over the three crops, channel fusion and the compatibility classifier.
#[derive(Debug, Clone)]
pub struct Foundation {
    backbone: Backbone,
    fuse: Conv2d,
    classifier: Linear,
}

pub struct FoundationOutput {
    /// `(B, C, H_f, W_f)`
    pub fmap: Tensor,
    /// `(B, C)`
    pub pooled: Tensor,
    /// `(B, K)`, in `(0, 1)`
    pub scores: Tensor,
}

impl Foundation {
    pub fn new(p: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let backbone = Backbone::new(
            p,
            "backbone",
            cfg.backbone,
            3,
            &cfg.backbone_channels,
            cfg.convs_per_stage,
            cfg.lateral_channels,
        )?;
        let fuse = conv(p, "foundation.fuse", 3 * cfg.lateral_channels, cfg.channels, 1, 1, 0)?;
        let classifier = linear(p, "foundation.classifier", cfg.channels, cfg.num_templates)?;
        Ok(Foundation {
            backbone,
            fuse,
            classifier,
        })
    }

    /// Fused stride-8 map of `(3B, 3, S, S)` crops, `(B, C, S/8, S/8)`.
    pub fn feature_map(&self, crops: &Tensor) -> Result<Tensor> {
        let (n, _, _, _) = crops.dims4()?;
        if n % 3 != 0 {
            return Err(Error::Config(format!("crop batch of {n} is not a multiple of 3")));
        }
        let p8 = self.backbone.forward(crops, false)?.p8;
        let (_, l, h, w) = p8.dims4()?;
        let stacked = p8.reshape((n / 3, 3 * l, h, w))?;
        Ok(self.fuse.forward(&stacked)?)
    }

    pub fn forward(&self, crops: &Tensor) -> Result<FoundationOutput> {
        let fmap = self.feature_map(crops)?;
        let pooled = fmap.mean(D::Minus1)?.mean(D::Minus1)?;
        let scores = candle_nn::ops::sigmoid(&self.classifier.forward(&pooled)?)?;
        Ok(FoundationOutput { fmap, pooled, scores })
    }
}

/// Options that pin stop-gradient quantities, used for finite-difference checks.
#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    /// Per `(sample, template)` scales used to place the ROI boxes instead of the predicted ones.
    pub fixed_scales: Option<Vec<[f64; 2]>>,
}

/// All generator outputs for a batch of `B` samples and `K` templates.
pub struct ModelOutput {
    pub fmap: Tensor,
    pub pooled: Tensor,
    /// `(B, K)`
    pub scores: Tensor,
    /// Scale decoder embeddings `(B, K, d)`.
    pub u: Tensor,
    /// `(B, K, 2)` in `[0, 2]`
    pub scales: Tensor,
    /// Offset decoder embeddings `(B, K, d)`.
    pub u_prime: Tensor,
    /// `(B, K, 2M)` in `[-0.5, 0.5]`
    pub offsets: Tensor,
    /// Normalized refined templates `(B, K, M, 2)`.
    pub norm_poses: Tensor,
    /// Scaled poses in the crop frame `(B, K, M, 2)`.
    pub poses: Tensor,
    /// Scales the ROI boxes were built from.
    pub roi_scales: Vec<[f64; 2]>,
}

/// Host-side prediction for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub scales: Vec<[f64; 2]>,
    pub offsets: Vec<Vec<f64>>,
    /// Refined poses, crop frame.
    pub poses: Vec<Pose>,
    pub u: Vec<Vec<f64>>,
    pub u_prime: Vec<Vec<f64>>,
}

fn rows3(t: &Tensor) -> Result<Vec<Vec<Vec<f64>>>> {
    Ok(t.to_dtype(DType::F64)?.to_vec3()?)
}

impl ModelOutput {
    pub fn batch_size(&self) -> usize {
        self.scores.dims()[0]
    }

    /// `Q_i = [N(T_i + D_i), s_i, f]` for every sample and template, `(B, K, 2M + 2 + C)`.
    pub fn disc_inputs(&self) -> Result<Tensor> {
        let (b, k, _, _) = self.norm_poses.dims4()?;
        let c = self.pooled.dims()[1];
        let pose = self.norm_poses.reshape((b, k, POSE_DIM))?;
        let f = self.pooled.unsqueeze(1)?.broadcast_as((b, k, c))?.contiguous()?;
        Ok(Tensor::cat(&[&pose, &self.scales, &f], 2)?)
    }

    pub fn predictions(&self) -> Result<Vec<Prediction>> {
        let scores = self.scores.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        let scales = rows3(&self.scales)?;
        let offsets = rows3(&self.offsets)?;
        let (b, k, _, _) = self.poses.dims4()?;
        let poses = rows3(&self.poses.reshape((b, k, POSE_DIM))?)?;
        let u = rows3(&self.u)?;
        let up = rows3(&self.u_prime)?;
        (0..b)
            .map(|i| {
                Ok(Prediction {
                    scores: scores[i].clone(),
                    scales: scales[i].iter().map(|s| [s[0], s[1]]).collect(),
                    offsets: offsets[i].clone(),
                    poses: poses[i].iter().map(|p| Pose::from_flat(p)).collect::<Result<_>>()?,
                    u: u[i].clone(),
                    u_prime: up[i].clone(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct PoseModel {
    config: ModelConfig,
    pub(crate) foundation: Foundation,
    queries: Tensor,
    pub(crate) scale_decoder: Decoder,
    scale_head: Mlp,
    pub(crate) offset_decoder: Decoder,
    offset_head: Mlp,
    /// `(1, K, M, 2)`
    templates: Tensor,
}

impl PoseModel {
    pub fn new(p: &mut ParamStore, config: &ModelConfig, templates: &[Pose]) -> Result<Self> {
        config.validate()?;
        if templates.len() != config.num_templates {
            return Err(Error::Config(format!(
                "model expects {} templates, library has {}",
                config.num_templates,
                templates.len()
            )));
        }
        let (k, d) = (config.num_templates, config.embed_dim);
        let foundation = Foundation::new(p, config)?;
        let queries = p.var("scale_decoder.queries", &[k, d], Init::Normal(1.0))?;
        let scale_decoder = Decoder::new(
            p,
            "scale_decoder",
            config.channels,
            d,
            config.heads,
            config.ffn_dim,
            config.scale_layers,
            true,
            config.feature_size,
        )?;
        let scale_head = Mlp::new(p, "scale_head", &[d, config.mlp_hidden, config.mlp_hidden, 2])?;
        let offset_decoder = Decoder::new(
            p,
            "offset_decoder",
            config.channels,
            d,
            config.heads,
            config.ffn_dim,
            config.offset_layers,
            false,
            config.feature_size,
        )?;
        let offset_head = Mlp::new(p, "offset_head", &[d, config.mlp_hidden, config.mlp_hidden, POSE_DIM])?;
        let flat: Vec<f64> = templates.iter().flat_map(|t| t.to_flat()).collect();
        let templates = Tensor::from_vec(flat, (1, k, NUM_KEYPOINTS, 2), &Device::Cpu)?.to_dtype(p.dtype())?;
        Ok(PoseModel {
            config: config.clone(),
            foundation,
            queries,
            scale_decoder,
            scale_head,
            offset_decoder,
            offset_head,
            templates,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn queries(&self) -> &Tensor {
        &self.queries
    }

    /// ROI boxes in feature-map coordinates: axis-aligned, centered on the target, side
    /// `s * H_f` (the crop side spans the whole feature map).
    pub fn roi_boxes(&self, scales: &[[f64; 2]]) -> Vec<RoiBox> {
        let k = self.config.num_templates;
        let hf = self.config.feature_size as f64;
        scales
            .iter()
            .enumerate()
            .map(|(i, &[sx, sy])| RoiBox {
                batch: i / k,
                x1: (0.5 - sx / 2.0) * hf,
                y1: (0.5 - sy / 2.0) * hf,
                x2: (0.5 + sx / 2.0) * hf,
                y2: (0.5 + sy / 2.0) * hf,
            })
            .collect()
    }

    /// Scale decoding from explicit queries `(B, K, d)`.
    pub fn decode_scales(&self, queries: &Tensor, fmap: &Tensor) -> Result<(Tensor, Tensor)> {
        let u = self.scale_decoder.forward(queries, fmap)?;
        let scales = (candle_nn::ops::sigmoid(&self.scale_head.forward(&u)?)? * 2.0)?;
        Ok((u, scales))
    }

    /// Offset decoding of `u: (B, K, d)` against per-template maps `(B*K, C, H_f, W_f)`.
    pub fn decode_offsets(&self, u: &Tensor, fprime: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, k, d) = u.dims3()?;
        let up = self
            .offset_decoder
            .forward(&u.reshape((b * k, 1, d))?, fprime)?
            .reshape((b, k, d))?;
        let offsets = (self.offset_head.forward(&up)?.tanh()? * 0.5)?;
        Ok((up, offsets))
    }

    pub fn forward(&self, crops: &Tensor, opts: &ForwardOptions) -> Result<ModelOutput> {
        let found = self.foundation.forward(crops)?;
        let b = found.fmap.dims()[0];
        let (k, d) = (self.config.num_templates, self.config.embed_dim);
        let queries = self.queries.unsqueeze(0)?.broadcast_as((b, k, d))?.contiguous()?;
        self.forward_from(found, &queries, opts)
    }

    /// Everything after the foundation, with explicit queries.
    pub fn forward_from(&self, found: FoundationOutput, queries: &Tensor, opts: &ForwardOptions) -> Result<ModelOutput> {
        let FoundationOutput { fmap, pooled, scores } = found;
        let b = fmap.dims()[0];
        let k = self.config.num_templates;
        let (u, scales) = self.decode_scales(queries, &fmap)?;

        let roi_scales = match &opts.fixed_scales {
            Some(s) if s.len() == b * k => s.clone(),
            Some(s) => {
                return Err(Error::Argument(format!("{} fixed scales for {} boxes", s.len(), b * k)));
            }
            None => {
                let v = scales.detach().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
                v.chunks(2).map(|c| [c[0], c[1]]).collect()
            }
        };
        let hf = self.config.feature_size;
        let fprime = roi_align(&fmap, &self.roi_boxes(&roi_scales), hf, hf, self.config.roi_sampling)?;
        let (u_prime, offsets) = self.decode_offsets(&u, &fprime)?;

        let pts = self
            .templates
            .broadcast_add(&offsets.reshape((b, k, NUM_KEYPOINTS, 2))?)?;
        let norm_poses = normalize_points(&pts)?;
        let poses = norm_poses.broadcast_mul(&scales.reshape((b, k, 1, 2))?)?;
        Ok(ModelOutput {
            fmap,
            pooled,
            scores,
            u,
            scales,
            u_prime,
            offsets,
            norm_poses,
            poses,
            roi_scales,
        })
    }
}

/// MLP judging whether `(pose, scale, scene)` came from the ground-truth template.
#[derive(Debug, Clone)]
pub struct Discriminator {
    mlp: Mlp,
    input: usize,
}

impl Discriminator {
    pub fn new(p: &mut ParamStore, config: &ModelConfig) -> Result<Self> {
        let input = config.disc_input();
        Ok(Discriminator {
            mlp: Mlp::new(p, "disc", &[input, config.mlp_hidden, config.mlp_hidden, 1])?,
            input,
        })
    }

    /// Probabilities for `(..., 2M + 2 + C)` inputs, shape `(...)`.
    pub fn forward(&self, q: &Tensor) -> Result<Tensor> {
        let last = *q.dims().last().unwrap_or(&0);
        if last != self.input {
            return Err(Error::Config(format!(
                "discriminator expects {} inputs, got {last}",
                self.input
            )));
        }
        Ok(candle_nn::ops::sigmoid(&self.mlp.forward(q)?)?.squeeze(D::Minus1)?)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::BackboneKind;
    use crate::pose::normalize;
    use rand::{Rng, SeedableRng};

    pub(crate) fn tiny_config(k: usize) -> ModelConfig {
        ModelConfig {
            num_templates: k,
            crop_size: 32,
            feature_size: 4,
            channels: 8,
            embed_dim: 8,
            heads: 2,
            scale_layers: 2,
            offset_layers: 1,
            mlp_hidden: 16,
            ffn_dim: 16,
            backbone: BackboneKind::SmallCnn,
            backbone_channels: vec![4, 6, 8],
            convs_per_stage: 1,
            lateral_channels: 6,
            roi_sampling: 2,
            heatmap_sigma: 1.0,
            teacher_channels: vec![4, 8],
        }
    }

    pub(crate) fn random_templates(k: usize, seed: u64) -> Vec<Pose> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..k)
            .map(|_| {
                let v: Vec<f64> = (0..POSE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
                normalize(&Pose::from_flat(&v).unwrap()).unwrap()
            })
            .collect()
    }

    fn random_crops(b: usize, s: usize, seed: u64, dtype: DType) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f32> = (0..b * 9 * s * s).map(|_| rng.random_range(0.0..1.0)).collect();
        Tensor::from_vec(v, (3 * b, 3, s, s), &Device::Cpu).unwrap().to_dtype(dtype).unwrap()
    }

    #[test]
    fn shapes_and_ranges() {
        let cfg = tiny_config(3);
        let mut p = ParamStore::new(DType::F32, 0);
        let m = PoseModel::new(&mut p, &cfg, &random_templates(3, 0)).unwrap();
        let zeros = Tensor::zeros((6, 3, 32, 32), DType::F32, &Device::Cpu).unwrap();
        let out = m.forward(&zeros, &ForwardOptions::default()).unwrap();
        assert_eq!(out.fmap.dims(), &[2, 8, 4, 4]);
        assert_eq!(out.pooled.dims(), &[2, 8]);
        assert_eq!(out.scores.dims(), &[2, 3]);
        assert_eq!(out.u.dims(), &[2, 3, 8]);
        assert_eq!(out.offsets.dims(), &[2, 3, POSE_DIM]);
        for s in 0..20 {
            let out = m.forward(&random_crops(2, 32, s, DType::F32), &ForwardOptions::default()).unwrap();
            for pred in out.predictions().unwrap() {
                assert!(pred.scores.iter().all(|&c| c > 0.0 && c < 1.0));
                assert!(pred.scales.iter().flatten().all(|&v| (0.0..=2.0).contains(&v)));
                assert!(pred.offsets.iter().flatten().all(|&v| v.abs() <= 0.5));
                assert!(pred.poses.iter().all(|p| p.max_abs_coord() <= 1.0 + 1e-6));
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_config(2);
        let mut p = ParamStore::new(DType::F32, 0);
        let m = PoseModel::new(&mut p, &cfg, &random_templates(2, 0)).unwrap();
        let x = random_crops(2, 32, 1, DType::F32);
        let a = m.forward(&x, &ForwardOptions::default()).unwrap().predictions().unwrap();
        let b = m.forward(&x, &ForwardOptions::default()).unwrap().predictions().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn refined_poses_match_host_refinement() {
        let cfg = tiny_config(3);
        let templates = random_templates(3, 4);
        let mut p = ParamStore::new(DType::F64, 2);
        let m = PoseModel::new(&mut p, &cfg, &templates).unwrap();
        let out = m.forward(&random_crops(2, 32, 5, DType::F64), &ForwardOptions::default()).unwrap();
        for pred in out.predictions().unwrap() {
            for i in 0..3 {
                let off = crate::pose::Offsets::new(&pred.offsets[i]).unwrap();
                let s = crate::pose::Scale::new(pred.scales[i][0], pred.scales[i][1]).unwrap();
                let host = crate::pose::refine(&templates[i], &off, &s).unwrap();
                assert!(host.max_abs_diff(&pred.poses[i]) < 1e-9);
            }
        }
    }

    #[test]
    fn query_permutation_permutes_outputs() {
        let cfg = tiny_config(3);
        let mut p = ParamStore::new(DType::F64, 0);
        let m = PoseModel::new(&mut p, &cfg, &random_templates(3, 0)).unwrap();
        let found = m.foundation.forward(&random_crops(1, 32, 9, DType::F64)).unwrap();
        let q = m.queries().unsqueeze(0).unwrap();
        let perm = Tensor::new(&[2u32, 0, 1], &Device::Cpu).unwrap();
        let qp = q.index_select(&perm, 1).unwrap();
        let (u, s) = m.decode_scales(&q, &found.fmap).unwrap();
        let (up, sp) = m.decode_scales(&qp, &found.fmap).unwrap();
        let diff = |a: &Tensor, b: &Tensor| {
            (a.index_select(&perm, 1).unwrap() - b)
                .unwrap()
                .abs()
                .unwrap()
                .max_all()
                .unwrap()
                .to_scalar::<f64>()
                .unwrap()
        };
        assert!(diff(&u, &up) < 1e-12);
        assert!(diff(&s, &sp) < 1e-12);
    }

    #[test]
    fn zero_feature_map_reduces_cross_attention_to_value_path() {
        let cfg = tiny_config(3);
        let mut p = ParamStore::new(DType::F64, 0);
        let m = PoseModel::new(&mut p, &cfg, &random_templates(3, 0)).unwrap();
        let fmap = Tensor::zeros((1, 8, 4, 4), DType::F64, &Device::Cpu).unwrap();
        let q = m.queries().unsqueeze(0).unwrap();
        let u = m.scale_decoder.forward(&q, &fmap).unwrap();

        // ablated decoder: cross-attention replaced by its value path on one memory slot
        let memory = m.scale_decoder.memory(&fmap).unwrap().narrow(1, 0, 1).unwrap();
        let mut x = q.clone();
        for layer in m.scale_decoder.layers() {
            if let Some((attn, norm)) = layer.self_attention() {
                x = norm.forward(&(&x + attn.forward(&x, &x, &x).unwrap()).unwrap()).unwrap();
            }
            let cross = layer.cross_attention().uniform_memory_output(&memory).unwrap();
            let cross = cross.broadcast_as(x.dims()).unwrap();
            x = layer.forward_tail(&x, &cross).unwrap();
        }
        let d = (u - x).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn offset_decoder_isolates_templates() {
        let cfg = tiny_config(3);
        let mut p = ParamStore::new(DType::F64, 0);
        let m = PoseModel::new(&mut p, &cfg, &random_templates(3, 0)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut rand = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
        };
        let u = rand(&[1, 3, 8]);
        let fp = rand(&[3, 8, 4, 4]);
        let (_, d0) = m.decode_offsets(&u, &fp).unwrap();
        // perturb template 1's map only
        let bump = Tensor::cat(
            &[
                Tensor::zeros((1, 8, 4, 4), DType::F64, &Device::Cpu).unwrap(),
                rand(&[1, 8, 4, 4]),
                Tensor::zeros((1, 8, 4, 4), DType::F64, &Device::Cpu).unwrap(),
            ],
            0,
        )
        .unwrap();
        let (_, d1) = m.decode_offsets(&u, &(fp + bump).unwrap()).unwrap();
        let d0: Vec<Vec<f64>> = d0.squeeze(0).unwrap().to_vec2().unwrap();
        let d1: Vec<Vec<f64>> = d1.squeeze(0).unwrap().to_vec2().unwrap();
        assert_eq!(d0[0], d1[0]);
        assert_eq!(d0[2], d1[2]);
        assert_ne!(d0[1], d1[1]);
    }

    #[test]
    fn swapping_query_rows_swaps_scales_and_offsets_not_scores() {
        let cfg = tiny_config(3);
        let templates = random_templates(3, 1);
        let mut p = ParamStore::new(DType::F64, 0);
        let m = PoseModel::new(&mut p, &cfg, &templates).unwrap();
        let x = random_crops(1, 32, 2, DType::F64);
        let q = m.queries().unsqueeze(0).unwrap();
        let perm = Tensor::new(&[1u32, 0, 2], &Device::Cpu).unwrap();
        let o = m.forward_from(m.foundation.forward(&x).unwrap(), &q, &Default::default()).unwrap();
        let os = m
            .forward_from(m.foundation.forward(&x).unwrap(), &q.index_select(&perm, 1).unwrap(), &Default::default())
            .unwrap();
        let a = &o.predictions().unwrap()[0];
        let b = &os.predictions().unwrap()[0];
        assert_eq!(a.scores, b.scores);
        for (i, j) in [(0, 1), (1, 0), (2, 2)] {
            for c in 0..2 {
                assert!((a.scales[i][c] - b.scales[j][c]).abs() < 1e-12);
            }
            for c in 0..POSE_DIM {
                assert!((a.offsets[i][c] - b.offsets[j][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn discriminator_range_and_shape() {
        let cfg = tiny_config(2);
        let mut p = ParamStore::new(DType::F64, 0);
        let d = Discriminator::new(&mut p, &cfg).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let v: Vec<f64> = (0..5 * cfg.disc_input()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let q = Tensor::from_vec(v, (5, cfg.disc_input()), &Device::Cpu).unwrap();
        let out: Vec<f64> = d.forward(&q).unwrap().to_vec1().unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|&x| x > 0.0 && x < 1.0));
        assert_eq!(out, d.forward(&q).unwrap().to_vec1::<f64>().unwrap());
        let bad = Tensor::zeros((1, 3), DType::F64, &Device::Cpu).unwrap();
        assert!(d.forward(&bad).is_err());
    }
}
