//! Pose template library: clustering of normalized poses, representative selection,
//! nearest-template lookup and the on-disk JSON format.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pose::{enclosing_box, normalize, BBox, Pose, POSE_DIM};

/// Version written into library files.
pub const LIBRARY_VERSION: u32 = 1;

/// Tolerance on the unit enclosing box of a stored template.
pub const TEMPLATE_BOX_TOL: f64 = 1e-6;

type Vector = [f64; POSE_DIM];

fn sq_dist(a: &Vector, b: &Vector) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            k: 30,
            seed: 0,
            max_iter: 300,
        }
    }
}

/// Result of a Lloyd run.
#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centers: Vec<Pose>,
    /// Cluster of every input pose under the final centers' predecessor step; every center is
    /// the mean of its members in this assignment.
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares measured at each assignment step.
    pub objective_history: Vec<f64>,
    pub converged: bool,
}

impl KMeansResult {
    pub fn objective(&self, poses: &[Pose]) -> f64 {
        poses
            .iter()
            .zip(self.assignments.iter())
            .map(|(p, &a)| p.squared_distance(&self.centers[a]))
            .sum()
    }
}

/// Nearest center by squared Euclidean distance; ties go to the lowest index.
fn nearest(point: &Vector, centers: &[Vector]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn kmeans_pp_init(points: &[Vector], k: usize, rng: &mut impl Rng) -> Vec<Vector> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w <= 0.0 {
                    continue;
                }
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // guard against rounding landing on an already-chosen point
            if d2[chosen] <= 0.0 {
                chosen = d2
                    .iter()
                    .enumerate()
                    .fold((0, -1.0), |b, (i, &w)| if w > b.1 { (i, w) } else { b })
                    .0;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[next]);
        for (w, p) in d2.iter_mut().zip(points.iter()) {
            *w = w.min(sq_dist(p, &points[next]));
        }
    }
    centers
}

/// Lloyd's k-means over poses viewed as `2M`-vectors, seeded with k-means++.
///
/// A cluster that loses all members takes the point farthest from its current center.
pub fn kmeans_cluster(poses: &[Pose], params: &KMeansParams) -> Result<KMeansResult> {
    if poses.is_empty() {
        return Err(Error::Argument("k-means needs at least one pose".into()));
    }
    if params.k == 0 {
        return Err(Error::Argument("k-means needs k >= 1".into()));
    }
    let points: Vec<Vector> = poses.iter().map(Pose::to_flat).collect();
    let mut distinct: Vec<[u64; POSE_DIM]> = points
        .iter()
        .map(|p| {
            let mut bits = [0u64; POSE_DIM];
            for (b, v) in bits.iter_mut().zip(p.iter()) {
                *b = v.to_bits();
            }
            bits
        })
        .collect();
    distinct.sort_unstable();
    distinct.dedup();
    if params.k > distinct.len() {
        return Err(Error::Argument(format!(
            "k = {} exceeds the {} distinct poses",
            params.k,
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centers = kmeans_pp_init(&points, params.k, &mut rng);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    let mut converged = false;

    for _ in 0..params.max_iter.max(1) {
        let mut changed = false;
        let mut dists = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (a, d) = nearest(p, &centers);
            if assignments[i] != a {
                assignments[i] = a;
                changed = true;
            }
            dists[i] = d;
        }

        let mut counts = vec![0usize; params.k];
        for &a in &assignments {
            counts[a] += 1;
        }
        for c in 0..params.k {
            if counts[c] > 0 {
                continue;
            }
            // farthest point among clusters that can spare one
            let donor = (0..points.len())
                .filter(|&i| counts[assignments[i]] > 1)
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if dists[b] >= dists[i] => Some(b),
                    _ => Some(i),
                });
            if let Some(i) = donor {
                counts[assignments[i]] -= 1;
                assignments[i] = c;
                counts[c] = 1;
                dists[i] = 0.0;
                centers[c] = points[i];
                changed = true;
            }
        }
        history.push(dists.iter().sum());

        if !changed {
            converged = true;
            break;
        }

        // incremental means stay exact when all members coincide
        let mut means = vec![[0.0; POSE_DIM]; params.k];
        let mut seen = vec![0usize; params.k];
        for (p, &a) in points.iter().zip(assignments.iter()) {
            seen[a] += 1;
            let n = seen[a] as f64;
            for (m, v) in means[a].iter_mut().zip(p.iter()) {
                *m += (v - *m) / n;
            }
        }
        for ((c, m), &n) in centers.iter_mut().zip(means.iter()).zip(counts.iter()) {
            if n > 0 {
                *c = *m;
            }
        }
    }

    let centers = centers
        .iter()
        .map(|c| Pose::from_flat(c))
        .collect::<Result<Vec<_>>>()?;
    Ok(KMeansResult {
        centers,
        assignments,
        objective_history: history,
        converged,
    })
}

/// How representatives are picked from cluster centers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "indices")]
pub enum Selection {
    /// Keep these center indices, in this order.
    Explicit(Vec<usize>),
    /// Farthest-point selection maximizing the minimum pairwise distance.
    MaxMin,
}

fn min_pairwise(points: &[Vector], chosen: &[usize]) -> f64 {
    let mut m = f64::INFINITY;
    for (a, &i) in chosen.iter().enumerate() {
        for &j in &chosen[a + 1..] {
            m = m.min(sq_dist(&points[i], &points[j]));
        }
    }
    m
}

fn maxmin_indices(points: &[Vector], k: usize) -> Vec<usize> {
    let n = points.len();
    let mut mean = [0.0; POSE_DIM];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p.iter()) {
            *m += v / n as f64;
        }
    }
    let mut chosen = vec![nearest(&mean, points).0];
    let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let next = (0..n)
            .filter(|i| !chosen.contains(i))
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if min_d[b] >= min_d[i] => Some(b),
                _ => Some(i),
            })
            .expect("k <= n");
        chosen.push(next);
        for (d, p) in min_d.iter_mut().zip(points.iter()) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }

    // Swap refinement: the greedy pass can miss the best spread (e.g. it starts in the middle
    // of a line). Accept any single swap that strictly increases the minimum pairwise distance.
    if k >= 2 {
        loop {
            let current = min_pairwise(points, &chosen);
            let mut improved = None;
            'search: for slot in 0..k {
                for cand in 0..n {
                    if chosen.contains(&cand) {
                        continue;
                    }
                    let mut trial = chosen.clone();
                    trial[slot] = cand;
                    if min_pairwise(points, &trial) > current {
                        improved = Some(trial);
                        break 'search;
                    }
                }
            }
            match improved {
                Some(t) => chosen = t,
                None => break,
            }
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Pick `k` of the given centers as the template library.
pub fn select_representatives(
    centers: &[Pose],
    k: usize,
    selection: &Selection,
) -> Result<TemplateLibrary> {
    if k == 0 || k > centers.len() {
        return Err(Error::Argument(format!(
            "cannot select {k} templates from {} centers",
            centers.len()
        )));
    }
    let indices = match selection {
        Selection::Explicit(idx) => {
            if idx.len() != k {
                return Err(Error::Argument(format!(
                    "explicit selection lists {} indices, expected {k}",
                    idx.len()
                )));
            }
            for (a, &i) in idx.iter().enumerate() {
                if i >= centers.len() {
                    return Err(Error::Argument(format!("center index {i} out of range")));
                }
                if idx[..a].contains(&i) {
                    return Err(Error::Argument(format!("center index {i} listed twice")));
                }
            }
            idx.clone()
        }
        Selection::MaxMin if k == centers.len() => (0..k).collect(),
        Selection::MaxMin => {
            let points: Vec<Vector> = centers.iter().map(Pose::to_flat).collect();
            maxmin_indices(&points, k)
        }
    };
    let templates = indices
        .iter()
        .map(|&i| normalize(&centers[i]))
        .collect::<Result<Vec<_>>>()?;
    let ids = indices.iter().map(|i| format!("c{i:02}")).collect();
    TemplateLibrary::new(templates, ids, centers.len(), indices)
}

/// `K` normalized pose templates with identifiers and selection provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateLibrary {
    templates: Vec<Pose>,
    ids: Vec<String>,
    tags: Vec<Option<String>>,
    k_prime: usize,
    selection: Vec<usize>,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct LibraryFile {
    version: u32,
    k: usize,
    k_prime: usize,
    seed: u64,
    ids: Vec<String>,
    #[serde(default)]
    tags: Vec<Option<String>>,
    #[serde(default)]
    selection: Vec<usize>,
    templates: Vec<Vec<f64>>,
}

impl TemplateLibrary {
    pub fn new(
        templates: Vec<Pose>,
        ids: Vec<String>,
        k_prime: usize,
        selection: Vec<usize>,
    ) -> Result<Self> {
        let k = templates.len();
        let lib = TemplateLibrary {
            tags: vec![None; k],
            templates,
            ids,
            k_prime,
            selection,
            seed: 0,
        };
        lib.validate()?;
        Ok(lib)
    }

    /// Library built directly from already-normalized poses, ids `t00, t01, ...`.
    pub fn from_templates(templates: Vec<Pose>) -> Result<Self> {
        let k = templates.len();
        let ids = (0..k).map(|i| format!("t{i:02}")).collect();
        TemplateLibrary::new(templates, ids, k, (0..k).collect())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_tags(mut self, tags: Vec<Option<String>>) -> Result<Self> {
        if tags.len() != self.templates.len() {
            return Err(Error::Argument("one tag slot per template required".into()));
        }
        self.tags = tags;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let k = self.templates.len();
        if k == 0 {
            return Err(Error::Argument("template library is empty".into()));
        }
        if self.ids.len() != k || self.tags.len() != k {
            return Err(Error::Argument(format!(
                "library has {k} templates but {} ids",
                self.ids.len()
            )));
        }
        for (i, id) in self.ids.iter().enumerate() {
            if self.ids[..i].contains(id) {
                return Err(Error::Argument(format!("duplicate template id {id:?}")));
            }
        }
        for (i, t) in self.templates.iter().enumerate() {
            let b = enclosing_box(t)?;
            if b.max_abs_diff(&BBox::UNIT) > TEMPLATE_BOX_TOL {
                return Err(Error::Argument(format!(
                    "template {i} is not normalized (box {b:?})"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn templates(&self) -> &[Pose] {
        &self.templates
    }

    pub fn template(&self, i: usize) -> &Pose {
        &self.templates[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn tags(&self) -> &[Option<String>] {
        &self.tags
    }

    pub fn k_prime(&self) -> usize {
        self.k_prime
    }

    pub fn selection(&self) -> &[usize] {
        &self.selection
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// SHA-256 over the ids and the exact bit patterns of all template coordinates.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (id, t) in self.ids.iter().zip(self.templates.iter()) {
            h.update(id.as_bytes());
            h.update([0u8]);
            for v in t.to_flat() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Row-major `K x 2M` matrix of template coordinates.
    pub fn flat_matrix(&self) -> Vec<f64> {
        self.templates.iter().flat_map(|t| t.to_flat()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = LibraryFile {
            version: LIBRARY_VERSION,
            k: self.len(),
            k_prime: self.k_prime,
            seed: self.seed,
            ids: self.ids.clone(),
            tags: self.tags.clone(),
            selection: self.selection.clone(),
            templates: self.templates.iter().map(|t| t.to_flat().to_vec()).collect(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Argument(e.to_string()))
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let file: LibraryFile = serde_json::from_str(text)
            .map_err(|e| Error::parse(origin, format!("line {}: {e}", e.line())))?;
        if file.version != LIBRARY_VERSION {
            return Err(Error::parse(
                origin,
                format!("unsupported library version {}", file.version),
            ));
        }
        if file.k != file.templates.len() {
            return Err(Error::parse(
                origin,
                format!("field k = {} but {} templates", file.k, file.templates.len()),
            ));
        }
        let templates = file
            .templates
            .iter()
            .enumerate()
            .map(|(i, t)| {
                Pose::from_flat(t)
                    .map_err(|e| Error::parse(origin, format!("templates[{i}]: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let tags = if file.tags.is_empty() {
            vec![None; templates.len()]
        } else {
            file.tags
        };
        let lib = TemplateLibrary {
            templates,
            ids: file.ids,
            tags,
            k_prime: file.k_prime,
            selection: file.selection,
            seed: file.seed,
        };
        lib.validate()
            .map_err(|e| Error::parse(origin, e.to_string()))?;
        Ok(lib)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TemplateLibrary::from_json(&text, path)
    }
}

/// Index of the template closest to the normalized pose; ties go to the lowest index.
pub fn nearest_template(pose: &Pose, library: &TemplateLibrary) -> Result<usize> {
    if library.is_empty() {
        return Err(Error::Argument("empty template library".into()));
    }
    let q = normalize(pose)?.to_flat();
    let centers: Vec<Vector> = library.templates().iter().map(Pose::to_flat).collect();
    Ok(nearest(&q, &centers).0)
}

/// Normalize every pose and cluster them: the first half of template construction.
pub fn cluster_poses(poses: &[Pose], params: &KMeansParams) -> Result<KMeansResult> {
    let normalized = poses.iter().map(normalize).collect::<Result<Vec<_>>>()?;
    kmeans_cluster(&normalized, params)
}

/// Normalize, cluster into `k_prime` centers and select `k` of them.
pub fn build_library(
    poses: &[Pose],
    k_prime: usize,
    k: usize,
    selection: &Selection,
    seed: u64,
    max_iter: usize,
) -> Result<TemplateLibrary> {
    let result = cluster_poses(
        poses,
        &KMeansParams {
            k: k_prime,
            seed,
            max_iter,
        },
    )?;
    Ok(select_representatives(&result.centers, k, selection)?.with_seed(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::NUM_KEYPOINTS;
    use rand_distr::{Distribution, Normal};

    fn random_normalized(rng: &mut impl Rng) -> Pose {
        let v: Vec<f64> = (0..POSE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize(&Pose::from_flat(&v).unwrap()).unwrap()
    }

    fn along_line(t: f64) -> Pose {
        // every coordinate moves together so centers stay collinear
        let v: Vec<f64> = (0..POSE_DIM).map(|i| t + i as f64 * 1e-3).collect();
        Pose::from_flat(&v).unwrap()
    }

    #[test]
    fn kmeans_identical_inputs() {
        let p = along_line(0.3);
        let poses = vec![p.clone(); 10];
        let r = kmeans_cluster(&poses, &KMeansParams { k: 1, seed: 0, max_iter: 10 }).unwrap();
        assert_eq!(r.centers, vec![p]);
        assert!(r.converged);
    }

    #[test]
    fn kmeans_rejects_bad_arguments() {
        let p = along_line(0.0);
        assert!(kmeans_cluster(&[], &KMeansParams::default()).is_err());
        let zero = KMeansParams { k: 0, ..Default::default() };
        assert!(kmeans_cluster(&[p.clone()], &zero).is_err());
        let two = KMeansParams { k: 2, ..Default::default() };
        assert!(kmeans_cluster(&[p.clone(), p], &two).is_err());
    }

    #[test]
    fn kmeans_recovers_two_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut poses = Vec::new();
        let mut groups = [[0.0; POSE_DIM]; 2];
        for g in 0..2 {
            let base = if g == 0 { -5.0 } else { 5.0 };
            for _ in 0..20 {
                let v: Vec<f64> = (0..POSE_DIM).map(|_| base + noise.sample(&mut rng)).collect();
                for (s, x) in groups[g].iter_mut().zip(v.iter()) {
                    *s += x / 20.0;
                }
                poses.push(Pose::from_flat(&v).unwrap());
            }
        }
        let r = kmeans_cluster(&poses, &KMeansParams { k: 2, seed: 3, max_iter: 100 }).unwrap();
        for g in &groups {
            let best = r
                .centers
                .iter()
                .map(|c| {
                    c.to_flat()
                        .iter()
                        .zip(g.iter())
                        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-9, "group mean not recovered: {best}");
        }
    }

    #[test]
    fn kmeans_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let poses: Vec<Pose> = (0..200).map(|_| random_normalized(&mut rng)).collect();
        let r = kmeans_cluster(&poses, &KMeansParams { k: 5, seed: 1, max_iter: 500 }).unwrap();
        assert!(r.converged);
        // one more Lloyd step as the oracle
        let centers: Vec<Vector> = r.centers.iter().map(Pose::to_flat).collect();
        let reassigned: Vec<usize> = poses.iter().map(|p| nearest(&p.to_flat(), &centers).0).collect();
        let mut sums = vec![[0.0; POSE_DIM]; 5];
        let mut counts = [0usize; 5];
        for (p, &a) in poses.iter().zip(reassigned.iter()) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p.to_flat().iter()) {
                *s += v;
            }
        }
        let stepped: f64 = poses
            .iter()
            .zip(reassigned.iter())
            .map(|(p, &a)| {
                let c: Vec<f64> = sums[a].iter().map(|s| s / counts[a] as f64).collect();
                sq_dist(&p.to_flat(), c.as_slice().try_into().unwrap())
            })
            .sum();
        assert!(r.objective(&poses) <= stepped + 1e-9);
    }

    #[test]
    fn kmeans_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let poses: Vec<Pose> = (0..100).map(|_| random_normalized(&mut rng)).collect();
        let params = KMeansParams { k: 6, seed: 42, max_iter: 50 };
        let a = kmeans_cluster(&poses, &params).unwrap();
        let b = kmeans_cluster(&poses, &params).unwrap();
        assert_eq!(a.centers, b.centers);
        assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn select_all_is_passthrough() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let centers: Vec<Pose> = (0..5).map(|_| random_normalized(&mut rng)).collect();
        let lib = select_representatives(&centers, 5, &Selection::MaxMin).unwrap();
        for (t, c) in lib.templates().iter().zip(centers.iter()) {
            assert!(t.max_abs_diff(c) < 1e-12);
        }
        let lib = select_representatives(&centers, 3, &Selection::Explicit(vec![4, 0, 2])).unwrap();
        for (t, &i) in lib.templates().iter().zip([4, 0, 2].iter()) {
            assert!(t.max_abs_diff(&centers[i]) < 1e-12);
        }
        assert_eq!(lib.selection(), &[4, 0, 2]);
    }

    #[test]
    fn explicit_selection_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let centers: Vec<Pose> = (0..4).map(|_| random_normalized(&mut rng)).collect();
        assert!(select_representatives(&centers, 2, &Selection::Explicit(vec![1, 1])).is_err());
        assert!(select_representatives(&centers, 2, &Selection::Explicit(vec![1, 9])).is_err());
        assert!(select_representatives(&centers, 2, &Selection::Explicit(vec![1])).is_err());
        assert!(select_representatives(&centers, 5, &Selection::MaxMin).is_err());
    }

    #[test]
    fn maxmin_picks_extremes_on_a_line() {
        let centers: Vec<Pose> = (0..4).map(|i| along_line(i as f64)).collect();
        let points: Vec<Vector> = centers.iter().map(Pose::to_flat).collect();
        // brute force over all pairs
        let mut best = (0, 0, -1.0);
        for i in 0..4 {
            for j in i + 1..4 {
                let d = sq_dist(&points[i], &points[j]);
                if d > best.2 {
                    best = (i, j, d);
                }
            }
        }
        assert_eq!(maxmin_indices(&points, 2), vec![best.0, best.1]);
    }

    #[test]
    fn nearest_template_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let temps: Vec<Pose> = (0..14).map(|_| random_normalized(&mut rng)).collect();
        let lib = TemplateLibrary::from_templates(temps.clone()).unwrap();
        assert_eq!(nearest_template(&temps[5], &lib).unwrap(), 5);
        let noisy = temps[9].map(|[x, y]| [x * 3.0 + 7.0 + 1e-6, y * 3.0 - 2.0]).unwrap();
        assert_eq!(nearest_template(&noisy, &lib).unwrap(), 9);
        for _ in 0..50 {
            let v: Vec<f64> = (0..POSE_DIM).map(|_| rng.random_range(-3.0..3.0)).collect();
            let q = Pose::from_flat(&v).unwrap();
            let nq = normalize(&q).unwrap();
            let mut best = (0, f64::INFINITY);
            for (i, t) in temps.iter().enumerate() {
                let mut d = 0.0;
                for k in 0..NUM_KEYPOINTS {
                    d += (nq.keypoint(k)[0] - t.keypoint(k)[0]).powi(2)
                        + (nq.keypoint(k)[1] - t.keypoint(k)[1]).powi(2);
                }
                if d < best.1 {
                    best = (i, d);
                }
            }
            assert_eq!(nearest_template(&q, &lib).unwrap(), best.0);
        }
    }

    #[test]
    fn library_rejects_unnormalized_templates() {
        let p = Pose::from_flat(&[0.2; POSE_DIM]).unwrap();
        assert!(TemplateLibrary::from_templates(vec![p]).is_err());
        assert!(TemplateLibrary::from_templates(vec![]).is_err());
    }

    #[test]
    fn library_json_round_trip_and_schema_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let temps: Vec<Pose> = (0..14).map(|_| random_normalized(&mut rng)).collect();
        let lib = TemplateLibrary::from_templates(temps).unwrap().with_seed(9);
        let origin = Path::new("mem.json");
        let back = TemplateLibrary::from_json(&lib.to_json().unwrap(), origin).unwrap();
        assert_eq!(back, lib);
        assert_eq!(back.hash(), lib.hash());

        let mut value: serde_json::Value = serde_json::from_str(&lib.to_json().unwrap()).unwrap();
        value["templates"][3].as_array_mut().unwrap().truncate(30);
        let err = TemplateLibrary::from_json(&value.to_string(), origin).unwrap_err();
        assert!(err.to_string().contains("templates[3]"), "{err}");
    }
}
