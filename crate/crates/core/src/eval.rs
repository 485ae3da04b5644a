//! PCK, MSE, top-k selection and best-of-top-k reports.
//!
//! Every method is scored from a [`PredictionDump`]: per sample, candidate poses in the pixel
//! frame ordered by descending compatibility. Single-pose methods provide one candidate.

use std::fmt::Write as _;
use std::path::Path;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::network::{ForwardOptions, PoseModel};
use crate::pose::{torso_diameter, Pose, POSE_DIM};
use crate::scene::SceneSample;
use crate::train::data::{crops_of, PreparedSample};

pub const DEFAULT_ALPHA: f64 = 0.2;
pub const DEFAULT_KS: [usize; 3] = [1, 3, 5];

/// Fraction of keypoints within `alpha` torso diameters of the ground truth (boundary inclusive).
///
/// A zero torso gives a zero threshold, so only exactly coincident keypoints count.
pub fn pck(pred: &Pose, gt: &Pose, alpha: f64) -> f64 {
    let thr = alpha * torso_diameter(gt);
    let hits = pred
        .keypoints()
        .iter()
        .zip(gt.keypoints())
        .filter(|(p, g)| (p[0] - g[0]).hypot(p[1] - g[1]) <= thr)
        .count();
    hits as f64 / pred.keypoints().len() as f64
}

/// Mean over all coordinates of squared differences after dividing by the image height.
pub fn mse(pred: &Pose, gt: &Pose, image_height: f64) -> f64 {
    let p = pred.to_flat();
    let g = gt.to_flat();
    p.iter()
        .zip(g.iter())
        .map(|(a, b)| ((a - b) / image_height).powi(2))
        .sum::<f64>()
        / POSE_DIM as f64
}

/// Indices of the `k` highest scores, descending; ties go to the lower index.
pub fn topk_select(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Candidate poses of one sample, best first, in the pixel frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub id: String,
    pub poses: Vec<Pose>,
    /// Scores matching `poses`, if the method produces any.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<f64>,
}

/// Predictions of one method over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionDump {
    pub method: String,
    pub samples: Vec<SamplePrediction>,
}

impl PredictionDump {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::dataset::write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, format!("line {}: {e}", e.line())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    /// Best PCK among the top-k candidates, one entry per evaluated k.
    pub pck: Vec<f64>,
    /// Best MSE among the top-k candidates, one entry per evaluated k.
    pub mse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub ks: Vec<usize>,
    pub pck: Vec<f64>,
    /// Mean MSE per k, times `mse_multiplier`.
    pub mse: Vec<f64>,
    pub mse_multiplier: f64,
    pub records: Vec<SampleRecord>,
}

/// Options of [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub alpha: f64,
    pub mse_multiplier: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: DEFAULT_KS.to_vec(),
            alpha: DEFAULT_ALPHA,
            mse_multiplier: 1.0,
        }
    }
}

/// Best-of-top-k PCK and MSE, each optimized independently per sample, averaged over samples.
pub fn evaluate(dump: &PredictionDump, samples: &[SceneSample], opts: &EvalOptions) -> Result<EvalReport> {
    if opts.ks.is_empty() || opts.ks.contains(&0) {
        return Err(Error::Argument("ks must be non-empty and positive".into()));
    }
    if dump.samples.len() != samples.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} samples",
            dump.samples.len(),
            samples.len()
        )));
    }
    let mut records = Vec::with_capacity(samples.len());
    for (pred, s) in dump.samples.iter().zip(samples) {
        if pred.id != s.id {
            return Err(Error::Argument(format!("prediction {} does not match sample {}", pred.id, s.id)));
        }
        if pred.poses.is_empty() {
            return Err(Error::Argument(format!("no candidate poses for sample {}", s.id)));
        }
        let h = s.image_height();
        let pcks: Vec<f64> = pred.poses.iter().map(|p| pck(p, &s.gt_pose, opts.alpha)).collect();
        let mses: Vec<f64> = pred.poses.iter().map(|p| mse(p, &s.gt_pose, h)).collect();
        let best = |k: usize, v: &[f64], better: fn(f64, f64) -> f64, init: f64| {
            v.iter().take(k).fold(init, |a, &b| better(a, b))
        };
        records.push(SampleRecord {
            id: s.id.clone(),
            pck: opts.ks.iter().map(|&k| best(k, &pcks, f64::max, f64::NEG_INFINITY)).collect(),
            mse: opts.ks.iter().map(|&k| best(k, &mses, f64::min, f64::INFINITY)).collect(),
        });
    }
    let n = records.len().max(1) as f64;
    let mean = |f: &dyn Fn(&SampleRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let pck: Vec<f64> = (0..opts.ks.len()).map(|j| mean(&|r| r.pck[j])).collect();
    let mse: Vec<f64> = (0..opts.ks.len())
        .map(|j| mean(&|r| r.mse[j]) * opts.mse_multiplier)
        .collect();
    Ok(EvalReport {
        method: dump.method.clone(),
        ks: opts.ks.clone(),
        pck,
        mse,
        mse_multiplier: opts.mse_multiplier,
        records,
    })
}

impl EvalReport {
    /// `method,k,pck,mse` rows.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "k", "pck", "mse"])?;
        for (j, k) in self.ks.iter().enumerate() {
            w.write_record([
                self.method.clone(),
                k.to_string(),
                format!("{}", self.pck[j]),
                format!("{}", self.mse[j]),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Argument(e.to_string()))?;
        Ok(String::from_utf8(bytes).unwrap_or_default())
    }

    /// Per-sample `id,k,pck,mse` rows.
    pub fn records_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "k", "pck", "mse"])?;
        for r in &self.records {
            for (j, k) in self.ks.iter().enumerate() {
                w.write_record([r.id.clone(), k.to_string(), format!("{}", r.pck[j]), format!("{}", r.mse[j])])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Argument(e.to_string()))?;
        Ok(String::from_utf8(bytes).unwrap_or_default())
    }

    pub fn pretty(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<14}", self.method);
        for k in &self.ks {
            let _ = write!(s, " | Top-{k:<2} PCK   MSE     ");
        }
        s.push('\n');
        let _ = write!(s, "{:<14}", "");
        for j in 0..self.ks.len() {
            let _ = write!(s, " |     {:.4}  {:.5}", self.pck[j], self.mse[j]);
        }
        s.push('\n');
        s
    }
}

/// Candidate poses from the full model, sorted by compatibility and mapped to pixels.
pub fn model_predictions(
    model: &PoseModel,
    scenes: &[SceneSample],
    prepared: &[PreparedSample],
    batch: usize,
    dtype: DType,
) -> Result<PredictionDump> {
    if scenes.len() != prepared.len() {
        return Err(Error::Argument("scene and prepared sample counts differ".into()));
    }
    let all: Vec<usize> = (0..prepared.len()).collect();
    let mut out = Vec::with_capacity(prepared.len());
    for chunk in all.chunks(batch.max(1)) {
        let crops = crops_of(prepared, chunk, dtype)?;
        let preds = model.forward(&crops, &ForwardOptions::default())?.predictions()?;
        for (&i, p) in chunk.iter().zip(preds) {
            let order = topk_select(&p.scores, p.scores.len());
            out.push(SamplePrediction {
                id: scenes[i].id.clone(),
                poses: order.iter().map(|&t| scenes[i].to_pixels(&p.poses[t])).collect::<Result<_>>()?,
                scores: order.iter().map(|&t| p.scores[t]).collect(),
            });
        }
    }
    Ok(PredictionDump {
        method: "template".into(),
        samples: out,
    })
}

/// A dump from single crop-frame poses per sample.
pub fn single_pose_dump(method: &str, scenes: &[SceneSample], crop_poses: &[Pose]) -> Result<PredictionDump> {
    if scenes.len() != crop_poses.len() {
        return Err(Error::Argument("one pose per sample expected".into()));
    }
    let samples = scenes
        .iter()
        .zip(crop_poses)
        .map(|(s, p)| {
            Ok(SamplePrediction {
                id: s.id.clone(),
                poses: vec![s.to_pixels(p)?],
                scores: Vec::new(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(PredictionDump {
        method: method.into(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{joint, NUM_KEYPOINTS};
    use crate::scene::SceneImage;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_pose(rng: &mut impl Rng, lo: f64, hi: f64) -> Pose {
        let v: Vec<f64> = (0..POSE_DIM).map(|_| rng.random_range(lo..hi)).collect();
        Pose::from_flat(&v).unwrap()
    }

    /// Vertical torso of length 10 from (0,0) to (0,10), other joints at the origin.
    fn torso_pose() -> Pose {
        let mut k = [[0.0; 2]; NUM_KEYPOINTS];
        k[joint::R_SHOULDER] = [0.0, 10.0];
        Pose::new(k).unwrap()
    }

    #[test]
    fn pck_examples() {
        let gt = torso_pose();
        assert_eq!(pck(&gt, &gt, 0.2), 1.0);
        // 0.2 * 10 = 2 exactly; a 3-4-5 scaled triangle keeps the distance exact in floating point
        let edge = gt.map(|[x, y]| [x + 1.2, y + 1.6]).unwrap();
        assert_eq!(pck(&edge, &gt, 0.2), 1.0);
        let over = gt.map(|[x, y]| [x + 2.0 + 1e-9, y]).unwrap();
        assert_eq!(pck(&over, &gt, 0.2), 0.0);
    }

    #[test]
    fn pck_degenerate_torso() {
        let gt = Pose::constant(1.0, 1.0);
        assert_eq!(pck(&gt, &gt, 0.2), 1.0);
        let mut k = *gt.keypoints();
        k[3] = [1.0, 1.0 + 1e-12];
        assert_eq!(pck(&Pose::new(k).unwrap(), &gt, 0.2), 15.0 / 16.0);
    }

    #[test]
    fn mse_examples() {
        let gt = torso_pose();
        assert_eq!(mse(&gt, &gt, 50.0), 0.0);
        let mut k = *gt.keypoints();
        k[4][1] += 50.0;
        assert!((mse(&Pose::new(k).unwrap(), &gt, 50.0) - 1.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn metrics_match_loop_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let a = random_pose(&mut rng, 0.0, 100.0);
            let b = random_pose(&mut rng, 0.0, 100.0);
            let h = rng.random_range(20.0..200.0);
            let (fa, fb) = (a.to_flat(), b.to_flat());
            let torso = ((fb[2 * joint::L_HIP] - fb[2 * joint::R_SHOULDER]).powi(2)
                + (fb[2 * joint::L_HIP + 1] - fb[2 * joint::R_SHOULDER + 1]).powi(2))
            .sqrt();
            let mut hits = 0;
            let mut sq = 0.0;
            for j in 0..NUM_KEYPOINTS {
                let dx = fa[2 * j] - fb[2 * j];
                let dy = fa[2 * j + 1] - fb[2 * j + 1];
                if (dx * dx + dy * dy).sqrt() <= 0.2 * torso {
                    hits += 1;
                }
                sq += (dx / h) * (dx / h) + (dy / h) * (dy / h);
            }
            assert!((pck(&a, &b, 0.2) - hits as f64 / 16.0).abs() <= 1e-9);
            assert!((mse(&a, &b, h) - sq / 32.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn topk_examples_and_sort_oracle() {
        assert_eq!(topk_select(&[0.1, 0.9, 0.5], 1), vec![1]);
        assert_eq!(topk_select(&[0.1, 0.9, 0.5], 3), vec![1, 2, 0]);
        assert_eq!(topk_select(&[0.5, 0.5, 0.7], 3), vec![2, 0, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let s: Vec<f64> = (0..10).map(|_| (rng.random_range(0..5) as f64) / 4.0).collect();
            let mut pairs: Vec<(f64, usize)> = s.iter().copied().zip(0..).collect();
            // descending score, ascending index, via a full sort of negated keys
            pairs.sort_by(|a, b| (-a.0, a.1).partial_cmp(&(-b.0, b.1)).unwrap());
            let want: Vec<usize> = pairs.iter().map(|p| p.1).take(4).collect();
            assert_eq!(topk_select(&s, 4), want);
        }
    }

    fn fixture(n: usize, seed: u64) -> (Vec<SceneSample>, PredictionDump) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Arc::new(SceneImage::filled(40, 20, [0.0; 3]));
        let mut scenes = Vec::new();
        let mut preds = Vec::new();
        for i in 0..n {
            let gt = random_pose(&mut rng, 0.0, 20.0);
            let s = SceneSample::new(format!("s{i}"), img.clone(), [20.0, 10.0], gt).unwrap();
            let poses = (0..5).map(|_| random_pose(&mut rng, 0.0, 20.0)).collect();
            preds.push(SamplePrediction {
                id: s.id.clone(),
                poses,
                scores: Vec::new(),
            });
            scenes.push(s);
        }
        (
            scenes,
            PredictionDump {
                method: "fixture".into(),
                samples: preds,
            },
        )
    }

    #[test]
    fn report_matches_hand_computation() {
        let (scenes, dump) = fixture(10, 1);
        let r = evaluate(&dump, &scenes, &EvalOptions::default()).unwrap();
        for (j, &k) in [1usize, 3, 5].iter().enumerate() {
            let mut p = 0.0;
            let mut m = 0.0;
            for (d, s) in dump.samples.iter().zip(&scenes) {
                let mut bp = f64::MIN;
                let mut bm = f64::MAX;
                for pose in &d.poses[..k] {
                    bp = bp.max(pck(pose, &s.gt_pose, 0.2));
                    bm = bm.min(mse(pose, &s.gt_pose, 20.0));
                }
                p += bp;
                m += bm;
            }
            assert!((r.pck[j] - p / 10.0).abs() < 1e-12);
            assert!((r.mse[j] - m / 10.0).abs() < 1e-12);
        }
        // k = 1 is plain single-pose evaluation
        let single = PredictionDump {
            method: "one".into(),
            samples: dump
                .samples
                .iter()
                .map(|d| SamplePrediction {
                    id: d.id.clone(),
                    poses: vec![d.poses[0].clone()],
                    scores: Vec::new(),
                })
                .collect(),
        };
        let one = evaluate(&single, &scenes, &EvalOptions::default()).unwrap();
        assert_eq!(one.pck, vec![r.pck[0]; 3]);
        assert!(r.to_csv().unwrap().starts_with("method,k,pck,mse\nfixture,1,"));
        assert!(r.pretty().contains("Top-5"));
    }

    #[test]
    fn dump_round_trip() {
        let (_, dump) = fixture(3, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.json");
        dump.save(&path).unwrap();
        assert_eq!(PredictionDump::load(&path).unwrap(), dump);
    }

    #[test]
    fn mismatched_ids_are_rejected() {
        let (scenes, mut dump) = fixture(2, 5);
        dump.samples.swap(0, 1);
        assert!(evaluate(&dump, &scenes, &EvalOptions::default()).is_err());
    }

    proptest! {
        #[test]
        fn topk_is_monotone(seed in 0u64..500) {
            let (scenes, dump) = fixture(6, seed);
            let r = evaluate(&dump, &scenes, &EvalOptions { ks: vec![1, 2, 3, 4, 5], ..Default::default() }).unwrap();
            for w in r.pck.windows(2) { prop_assert!(w[1] >= w[0]); }
            for w in r.mse.windows(2) { prop_assert!(w[1] <= w[0]); }
        }

        #[test]
        fn pck_is_scale_invariant_and_mse_frame_consistent(seed in 0u64..500, alpha in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_pose(&mut rng, 0.0, 50.0);
            let b = random_pose(&mut rng, 0.0, 50.0);
            let sa = a.map(|[x, y]| [x * alpha, y * alpha]).unwrap();
            let sb = b.map(|[x, y]| [x * alpha, y * alpha]).unwrap();
            prop_assert_eq!(pck(&a, &b, 0.2), pck(&sa, &sb, 0.2));
            let m = mse(&a, &b, 30.0);
            prop_assert!((mse(&sa, &sb, 30.0 * alpha) - m).abs() <= 1e-12 * m.max(1.0));
        }
    }
}
