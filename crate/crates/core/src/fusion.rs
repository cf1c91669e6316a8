//! Text-feature fusion kernels.
//!
//! General representation knowledge arrives as a bank of per-category text
//! embeddings. Visual feature maps are aligned to the bank's dimension with
//! a single linear layer, fused via per-pixel cosine similarity against
//! every bank vector, concatenated with the original visual features
//! (fused channels first), and classified per pixel by a 1x1 linear layer
//! with softmax and categorical cross-entropy. Analytic gradients through
//! the whole chain are provided for both weight matrices so the kernels can
//! be verified against finite differences.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Prompt template wrapped around every category term.
pub const PROMPT_TEMPLATE: &str = "A satellite image of";

/// Land cover term groups, expanded from broad categories. Row-major
/// expansion of the groups yields the canonical 54-term prompt list.
pub const TERM_GROUPS: [(&str, &[&str]); 9] = [
    (
        "Buildings",
        &[
            "roof",
            "building",
            "built-up",
            "construction",
            "architecture",
            "facility",
            "house",
            "skyscraper",
            "rural residential",
            "urban residential",
        ],
    ),
    ("Transportation", &["stadium", "railway station", "airport"]),
    (
        "Roads",
        &[
            "street", "road", "highway", "path", "route", "lane", "avenue", "way",
        ],
    ),
    (
        "Water Bodies",
        &["liquid", "water", "river", "lake", "pond", "ocean"],
    ),
    ("Barren", &["barren land", "wasteland", "unlabeled"]),
    (
        "Forest",
        &["woodland", "jungle", "bush", "forest", "woods", "grove"],
    ),
    (
        "Agriculture",
        &[
            "farming",
            "farmland",
            "agrarian",
            "ranching",
            "agricultural land",
            "irrigated field",
        ],
    ),
    ("Greenhouses", &["greenhouse", "hothouse", "glasshouse"]),
    (
        "Meadows",
        &[
            "shrubs",
            "meadow",
            "herbs",
            "grass",
            "grassland",
            "pasture",
            "prairie",
            "natural meadow",
            "artificial meadow",
        ],
    ),
];

/// Expands the term groups row-major into prompt strings
/// (`"A satellite image of <term>"`). The shipped list has 54 entries.
pub fn build_prompts() -> Vec<String> {
    TERM_GROUPS
        .iter()
        .flat_map(|(_, terms)| terms.iter())
        .map(|t| format!("{PROMPT_TEMPLATE} {t}"))
        .collect()
}

/// Per-category embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TextBank {
    pub terms: Vec<String>,
    /// `k * d` row-major matrix; row `i` is the embedding of `terms[i]`.
    pub vectors: Vec<f64>,
    pub dim: usize,
}

impl TextBank {
    pub fn new(terms: Vec<String>, vectors: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if vectors.len() != terms.len() * dim {
            return Err(Error::Config(format!(
                "bank has {} values, expected {} terms x {} dims",
                vectors.len(),
                terms.len(),
                dim
            )));
        }
        let bank = TextBank {
            terms,
            vectors,
            dim,
        };
        for (i, norm) in bank.norms().iter().enumerate() {
            if norm.is_nan() || *norm <= 0.0 || !norm.is_finite() {
                return Err(Error::Config(format!(
                    "text vector {i} ({:?}) has unusable norm {norm}",
                    bank.terms[i]
                )));
            }
        }
        Ok(bank)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    fn norms(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.vector(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    /// Deterministic pseudo-embeddings (standard normal entries) for tests
    /// and pipelines that have no real embedding model on hand.
    pub fn pseudo(terms: Vec<String>, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let normal = StandardNormal;
        let n = terms.len() * dim;
        let vectors: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        TextBank::new(terms, vectors, dim)
    }

    /// Writes the bank file: first line `K<TAB>d`, then one line per term:
    /// the term, a tab, and `d` tab-separated decimal floats.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}\t{}", self.len(), self.dim)?;
        for (i, term) in self.terms.iter().enumerate() {
            write!(out, "{term}")?;
            for v in self.vector(i) {
                write!(out, "\t{v}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty bank file".into(),
        })?;
        let mut parts = header.split('\t');
        let parse_dim = |s: Option<&str>| -> Result<usize> {
            s.and_then(|v| v.parse().ok()).ok_or(Error::Parse {
                line: 1,
                msg: format!("bad header {header:?}, expected K<TAB>d"),
            })
        };
        let k = parse_dim(parts.next())?;
        let d = parse_dim(parts.next())?;
        let mut terms = Vec::with_capacity(k);
        let mut vectors = Vec::with_capacity(k * d);
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != d + 1 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected term plus {d} floats, got {} fields", fields.len()),
                });
            }
            terms.push(fields[0].to_string());
            for f in &fields[1..] {
                vectors.push(f.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad float {f:?}"),
                })?);
            }
        }
        if terms.len() != k {
            return Err(Error::Parse {
                line: terms.len() + 1,
                msg: format!("header promised {k} terms, file has {}", terms.len()),
            });
        }
        TextBank::new(terms, vectors, d)
    }
}

/// A dense `h` x `w` x `c` feature map, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::argument(format!(
                "feature map has {} values, expected {h}x{w}x{c}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        Ok(FeatureMap { h, w, c, data })
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        FeatureMap {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.c..(p + 1) * self.c]
    }

    pub fn at(&self, i: usize, j: usize, ch: usize) -> f64 {
        self.data[(i * self.w + j) * self.c + ch]
    }
}

/// Alignment and classification weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    /// `c x d` alignment matrix (visual channels -> embedding dim).
    pub align: Vec<f64>,
    pub align_in: usize,
    pub align_out: usize,
    /// `(k + c) x n` 1x1-convolution weights (fused channels -> classes).
    pub logit: Vec<f64>,
    pub logit_in: usize,
    pub logit_out: usize,
}

impl FusionWeights {
    pub fn new(
        align: Vec<f64>,
        align_in: usize,
        align_out: usize,
        logit: Vec<f64>,
        logit_in: usize,
        logit_out: usize,
    ) -> Result<Self> {
        if align.len() != align_in * align_out {
            return Err(Error::argument(format!(
                "align weights have {} values, expected {align_in}x{align_out}",
                align.len()
            )));
        }
        if logit.len() != logit_in * logit_out {
            return Err(Error::argument(format!(
                "logit weights have {} values, expected {logit_in}x{logit_out}",
                logit.len()
            )));
        }
        Ok(FusionWeights {
            align,
            align_in,
            align_out,
            logit,
            logit_in,
            logit_out,
        })
    }
}

/// Per-pixel linear map into the embedding space: `out[p] = in[p] . W`
/// with `W` of shape `c x d`.
pub fn align(fmap: &FeatureMap, weights: &[f64], d: usize) -> Result<FeatureMap> {
    if weights.len() != fmap.c * d {
        return Err(Error::argument(format!(
            "alignment matrix has {} values, expected {}x{d}",
            weights.len(),
            fmap.c
        )));
    }
    let mut out = vec![0.0; fmap.pixels() * d];
    for p in 0..fmap.pixels() {
        let v = fmap.pixel(p);
        let dst = &mut out[p * d..(p + 1) * d];
        for (ci, &x) in v.iter().enumerate() {
            let row = &weights[ci * d..(ci + 1) * d];
            for (j, &wv) in row.iter().enumerate() {
                dst[j] += x * wv;
            }
        }
    }
    FeatureMap::new(fmap.h, fmap.w, d, out)
}

/// Cosine fusion output plus diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineFusion {
    /// `h x w x K` similarities in `[-1, 1]`.
    pub features: FeatureMap,
    /// Pixels whose aligned vector had zero norm; their similarities are
    /// defined as 0 for every category.
    pub zero_pixels: usize,
}

/// Cosine similarity of every pixel feature against every bank vector.
/// Invariant to positive rescaling of either side. Zero-norm bank vectors
/// were rejected at bank construction; zero-norm pixel vectors map to an
/// all-zero row and are counted in the diagnostics.
pub fn cosine_fuse(aligned: &FeatureMap, bank: &TextBank) -> Result<CosineFusion> {
    if aligned.c != bank.dim {
        return Err(Error::argument(format!(
            "aligned features have {} channels but bank dimension is {}",
            aligned.c, bank.dim
        )));
    }
    let k = bank.len();
    let norms = bank.norms();
    let mut data = vec![0.0; aligned.pixels() * k];
    let mut zero_pixels = 0usize;
    for p in 0..aligned.pixels() {
        let v = aligned.pixel(p);
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            zero_pixels += 1;
            continue;
        }
        let dst = &mut data[p * k..(p + 1) * k];
        for t in 0..k {
            let dot: f64 = v.iter().zip(bank.vector(t)).map(|(a, b)| a * b).sum();
            // Collinear vectors can land a ulp outside [-1, 1].
            dst[t] = (dot / (vnorm * norms[t])).clamp(-1.0, 1.0);
        }
    }
    Ok(CosineFusion {
        features: FeatureMap::new(aligned.h, aligned.w, k, data)?,
        zero_pixels,
    })
}

/// Channel concatenation with the fused similarities first and the visual
/// features second (the order the logit weights are shaped for).
pub fn concat_fuse(fused: &FeatureMap, fmap: &FeatureMap) -> Result<FeatureMap> {
    if fused.h != fmap.h || fused.w != fmap.w {
        return Err(Error::argument(format!(
            "spatial mismatch: fused {}x{} vs visual {}x{}",
            fused.h, fused.w, fmap.h, fmap.w
        )));
    }
    let c = fused.c + fmap.c;
    let mut data = Vec::with_capacity(fused.pixels() * c);
    for p in 0..fused.pixels() {
        data.extend_from_slice(fused.pixel(p));
        data.extend_from_slice(fmap.pixel(p));
    }
    FeatureMap::new(fused.h, fused.w, c, data)
}

/// How the cross-entropy is reduced over labeled pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossReduction {
    /// Plain sum over labeled pixels.
    Sum,
    /// Sum divided by the number of labeled pixels.
    Mean,
}

/// Classification output.
#[derive(Debug, Clone)]
pub struct Classified {
    /// `h x w x N` per-pixel probabilities (each pixel row sums to 1).
    pub probs: FeatureMap,
    pub loss: f64,
    /// Labeled (non-ignored) pixels.
    pub labeled: usize,
}

fn check_onehot(y: &FeatureMap, h: usize, w: usize, n: usize) -> Result<()> {
    if y.h != h || y.w != w || y.c != n {
        return Err(Error::argument(format!(
            "one-hot mask is {}x{}x{}, expected {h}x{w}x{n}",
            y.h, y.w, y.c
        )));
    }
    for p in 0..y.pixels() {
        let row = y.pixel(p);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if !(ones == 1 && zeros == n - 1 || zeros == n) {
            return Err(Error::argument(format!(
                "pixel {p} is not one-hot (or all-zero for ignored pixels)"
            )));
        }
    }
    Ok(())
}

/// Per-pixel 1x1 classification: logits `Z = Ff . W`, probabilities by
/// softmax over classes, and categorical cross-entropy against the one-hot
/// mask `Y`. All-zero rows of `Y` are ignored pixels.
pub fn classify(
    features: &FeatureMap,
    weights: &FusionWeights,
    onehot: &FeatureMap,
    reduction: LossReduction,
) -> Result<Classified> {
    if weights.logit_in != features.c {
        return Err(Error::argument(format!(
            "logit weights expect {} channels, features have {}",
            weights.logit_in, features.c
        )));
    }
    let n = weights.logit_out;
    check_onehot(onehot, features.h, features.w, n)?;
    let mut probs = vec![0.0; features.pixels() * n];
    let mut loss = 0.0;
    let mut labeled = 0usize;
    let mut zbuf = vec![0.0; n];
    for p in 0..features.pixels() {
        let f = features.pixel(p);
        zbuf.fill(0.0);
        for (ci, &x) in f.iter().enumerate() {
            let row = &weights.logit[ci * n..(ci + 1) * n];
            for (j, &wv) in row.iter().enumerate() {
                zbuf[j] += x * wv;
            }
        }
        let max = zbuf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut probs[p * n..(p + 1) * n];
        let mut sum = 0.0;
        for (v, &z) in dst.iter_mut().zip(&zbuf) {
            *v = (z - max).exp();
            sum += *v;
        }
        let log_sum = sum.ln();
        for v in dst.iter_mut() {
            *v /= sum;
        }
        let y = onehot.pixel(p);
        if let Some(t) = y.iter().position(|&v| v == 1.0) {
            labeled += 1;
            // -log p_t via log-sum-exp, immune to probability underflow
            loss -= zbuf[t] - max - log_sum;
        }
    }
    if reduction == LossReduction::Mean && labeled > 0 {
        loss /= labeled as f64;
    }
    Ok(Classified {
        probs: FeatureMap::new(features.h, features.w, n, probs)?,
        loss,
        labeled,
    })
}

/// Gradients of the loss with respect to both weight matrices.
#[derive(Debug, Clone)]
pub struct FusionGradients {
    /// `c x d`, same layout as `FusionWeights::align`.
    pub d_align: Vec<f64>,
    /// `(k + c) x n`, same layout as `FusionWeights::logit`.
    pub d_logit: Vec<f64>,
}

/// Full fusion chain forward and backward: align -> cosine fuse -> concat
/// -> classify, returning the loss, probabilities, and analytic gradients
/// for both weight matrices under the chosen reduction.
///
/// The cosine derivative for pixel vector `a` and unit bank vector `t` is
/// `d cos / d a = (t_hat - cos * a_hat) / |a|`; pixels with zero-norm
/// aligned vectors propagate no gradient (their similarities are the
/// constant 0).
pub fn forward_backward(
    fmap: &FeatureMap,
    bank: &TextBank,
    weights: &FusionWeights,
    onehot: &FeatureMap,
    reduction: LossReduction,
) -> Result<(Classified, FusionGradients)> {
    if weights.align_in != fmap.c || weights.align_out != bank.dim {
        return Err(Error::argument(format!(
            "align weights are {}x{}, expected {}x{}",
            weights.align_in, weights.align_out, fmap.c, bank.dim
        )));
    }
    let k = bank.len();
    if weights.logit_in != k + fmap.c {
        return Err(Error::argument(format!(
            "logit weights expect {} channels, fusion produces {}",
            weights.logit_in,
            k + fmap.c
        )));
    }
    let aligned = align(fmap, &weights.align, bank.dim)?;
    let fused = cosine_fuse(&aligned, bank)?;
    let features = concat_fuse(&fused.features, fmap)?;
    let out = classify(&features, weights, onehot, reduction)?;

    let n = weights.logit_out;
    let d = bank.dim;
    let c = fmap.c;
    let scale = match reduction {
        LossReduction::Sum => 1.0,
        LossReduction::Mean => {
            if out.labeled > 0 {
                1.0 / out.labeled as f64
            } else {
                0.0
            }
        }
    };
    let norms = bank.norms();
    let mut d_logit = vec![0.0; weights.logit.len()];
    let mut d_align = vec![0.0; weights.align.len()];
    for p in 0..fmap.pixels() {
        let y = onehot.pixel(p);
        if y.iter().all(|&v| v == 0.0) {
            continue;
        }
        // dL/dz = (p - y) per labeled pixel, times the reduction scale.
        let probs = out.probs.pixel(p);
        let dz: Vec<f64> = probs
            .iter()
            .zip(y)
            .map(|(&pv, &yv)| scale * (pv - yv))
            .collect();
        let ff = features.pixel(p);
        // dL/dW_logit += ff^T dz
        for ci in 0..k + c {
            let row = &mut d_logit[ci * n..(ci + 1) * n];
            for j in 0..n {
                row[j] += ff[ci] * dz[j];
            }
        }
        // dL/dFf = dz . W_logit^T; split into fused and visual parts.
        let dff: Vec<f64> = (0..k + c)
            .map(|ci| {
                let row = &weights.logit[ci * n..(ci + 1) * n];
                row.iter().zip(&dz).map(|(&wv, &g)| wv * g).sum()
            })
            .collect();
        // Back through the cosine into the aligned vector.
        let a = aligned.pixel(p);
        let anorm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        if anorm == 0.0 {
            continue;
        }
        let mut da = vec![0.0; d];
        for t in 0..k {
            let g = dff[t];
            if g == 0.0 {
                continue;
            }
            let cos = fused.features.pixel(p)[t];
            let tv = bank.vector(t);
            for j in 0..d {
                let t_hat = tv[j] / norms[t];
                let a_hat = a[j] / anorm;
                da[j] += g * (t_hat - cos * a_hat) / anorm;
            }
        }
        // dL/dW_align += v^T da
        let v = fmap.pixel(p);
        for ci in 0..c {
            let row = &mut d_align[ci * d..(ci + 1) * d];
            for j in 0..d {
                row[j] += v[ci] * da[j];
            }
        }
    }
    Ok((out, FusionGradients { d_align, d_logit }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn prompt_list_is_the_54_term_expansion() {
        let prompts = build_prompts();
        assert_eq!(prompts.len(), 54);
        assert_eq!(prompts[0], "A satellite image of roof");
        assert_eq!(prompts[53], "A satellite image of artificial meadow");
        let sizes: Vec<usize> = TERM_GROUPS.iter().map(|(_, t)| t.len()).collect();
        assert_eq!(sizes, vec![10, 3, 8, 6, 3, 6, 6, 3, 9]);
        assert_eq!(sizes.iter().sum::<usize>(), 54);
    }

    fn small_bank(k: usize, d: usize, seed: u64) -> TextBank {
        TextBank::pseudo((0..k).map(|i| format!("term {i}")).collect(), d, seed).unwrap()
    }

    #[test]
    fn bank_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.tsv");
        let bank = TextBank::pseudo(build_prompts(), 7, 99).unwrap();
        bank.write(&path).unwrap();
        let back = TextBank::read(&path).unwrap();
        assert_eq!(back, bank);
    }

    #[test]
    fn zero_norm_bank_vector_is_a_config_error() {
        let err =
            TextBank::new(vec!["a".into(), "b".into()], vec![1.0, 0.0, 0.0, 0.0], 2).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn identity_alignment_is_identity() {
        let fmap = FeatureMap::new(2, 2, 3, (0..12).map(|v| v as f64).collect()).unwrap();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        assert_eq!(align(&fmap, &eye, 3).unwrap(), fmap);
        let zeros = vec![0.0; 9];
        assert!(align(&fmap, &zeros, 3)
            .unwrap()
            .data
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn alignment_matches_triple_loop_oracle() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let (h, w, c, d) = (2, 2, 3, 4);
        let fmap = FeatureMap::new(
            h,
            w,
            c,
            (0..h * w * c).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let wmat: Vec<f64> = (0..c * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let fast = align(&fmap, &wmat, d).unwrap();
        for i in 0..h {
            for j in 0..w {
                for dd in 0..d {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        acc += fmap.at(i, j, ci) * wmat[ci * d + dd];
                    }
                    assert!((fast.at(i, j, dd) - acc).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn cosine_of_matching_vector_is_one() {
        let bank = small_bank(3, 4, 5);
        // Pixel equals bank vector 1 scaled by 2.5: cosine must be 1 for it.
        let mut data = bank.vector(1).to_vec();
        for v in &mut data {
            *v *= 2.5;
        }
        let fmap = FeatureMap::new(1, 1, 4, data).unwrap();
        let fused = cosine_fuse(&fmap, &bank).unwrap();
        assert_abs_diff_eq!(fused.features.data[1], 1.0, epsilon = 1e-12);
        for &v in &fused.features.data {
            assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn cosine_of_orthogonal_vectors_is_zero() {
        let bank =
            TextBank::new(vec!["x".into(), "y".into()], vec![1.0, 0.0, 0.0, 1.0], 2).unwrap();
        let fmap = FeatureMap::new(1, 1, 2, vec![0.0, 3.0]).unwrap();
        let fused = cosine_fuse(&fmap, &bank).unwrap();
        assert_abs_diff_eq!(fused.features.data[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fused.features.data[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn cosine_matches_direct_formula_and_scale_invariance() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(6);
        let bank = small_bank(5, 6, 7);
        let data: Vec<f64> = (0..2 * 2 * 6).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let fmap = FeatureMap::new(2, 2, 6, data.clone()).unwrap();
        let fused = cosine_fuse(&fmap, &bank).unwrap();
        for p in 0..4 {
            let v = fmap.pixel(p);
            for t in 0..5 {
                let tv = bank.vector(t);
                let dot: f64 = v.iter().zip(tv).map(|(a, b)| a * b).sum();
                let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nt = tv.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((fused.features.pixel(p)[t] - dot / (nv * nt)).abs() <= 1e-12);
            }
        }
        // Positive rescaling of pixels leaves the similarities unchanged.
        let scaled = FeatureMap::new(2, 2, 6, data.iter().map(|v| v * 17.0).collect()).unwrap();
        let fused2 = cosine_fuse(&scaled, &bank).unwrap();
        for (a, b) in fused.features.data.iter().zip(&fused2.features.data) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_pixel_vector_maps_to_zero_row() {
        let bank = small_bank(3, 2, 8);
        let fmap = FeatureMap::new(1, 2, 2, vec![0.0, 0.0, 1.0, 2.0]).unwrap();
        let fused = cosine_fuse(&fmap, &bank).unwrap();
        assert_eq!(fused.zero_pixels, 1);
        assert!(fused.features.pixel(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn concat_orders_fused_before_visual() {
        let fused = FeatureMap::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let visual = FeatureMap::new(1, 2, 1, vec![9.0, 8.0]).unwrap();
        let cat = concat_fuse(&fused, &visual).unwrap();
        assert_eq!(cat.c, 3);
        assert_eq!(cat.data, vec![1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
        // Degenerate sides are identities.
        let empty = FeatureMap::new(1, 2, 0, vec![]).unwrap();
        assert_eq!(concat_fuse(&empty, &visual).unwrap().data, visual.data);
        assert_eq!(concat_fuse(&fused, &empty).unwrap().data, fused.data);
        let tall = FeatureMap::new(2, 1, 1, vec![0.0, 0.0]).unwrap();
        assert!(concat_fuse(&fused, &tall).is_err());
    }

    #[test]
    fn single_class_probabilities_are_one_and_loss_zero() {
        let features = FeatureMap::new(2, 2, 3, vec![0.5; 12]).unwrap();
        let weights = FusionWeights::new(vec![0.0; 6], 3, 2, vec![1.0, -1.0, 0.3], 3, 1).unwrap();
        let onehot = FeatureMap::new(2, 2, 1, vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        let out = classify(&features, &weights, &onehot, LossReduction::Sum).unwrap();
        assert!(out.probs.data.iter().all(|&p| p == 1.0));
        assert_abs_diff_eq!(out.loss, 0.0, epsilon = 1e-12);
        assert_eq!(out.labeled, 3);
    }

    #[test]
    fn hand_worked_two_class_pixel() {
        // Ff = [1, 0], W rows [[2, 0], [0, 0]]: Z = [2, 0],
        // P = [e^2, 1] / (e^2 + 1), loss = -log P_0 for a class-0 pixel.
        let features = FeatureMap::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let weights =
            FusionWeights::new(vec![0.0; 4], 2, 2, vec![2.0, 0.0, 0.0, 0.0], 2, 2).unwrap();
        let onehot = FeatureMap::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let out = classify(&features, &weights, &onehot, LossReduction::Sum).unwrap();
        let e2 = 2.0f64.exp();
        assert_abs_diff_eq!(out.probs.data[0], e2 / (e2 + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(out.probs.data[1], 1.0 / (e2 + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(out.loss, -(e2 / (e2 + 1.0)).ln(), epsilon = 1e-12);
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(9);
        let features =
            FeatureMap::new(3, 3, 4, (0..36).map(|_| rng.gen_range(-4.0..4.0)).collect()).unwrap();
        let weights = FusionWeights::new(
            vec![0.0; 8],
            4,
            2,
            (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            4,
            3,
        )
        .unwrap();
        let mut y = vec![0.0; 27];
        for p in 0..9 {
            y[p * 3 + p % 3] = 1.0;
        }
        let onehot = FeatureMap::new(3, 3, 3, y).unwrap();
        let out = classify(&features, &weights, &onehot, LossReduction::Sum).unwrap();
        for p in 0..9 {
            let s: f64 = out.probs.pixel(p).iter().sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    /// Relative-error gradient check of the full chain against central
    /// finite differences over every weight entry.
    fn grad_check(seed: u64) -> f64 {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let h = rng.gen_range(1..=4);
        let w = rng.gen_range(1..=4);
        let c = rng.gen_range(2..=6);
        let d = rng.gen_range(2..=6);
        let k = rng.gen_range(1..=5);
        let n = rng.gen_range(2..=4);
        let bank = small_bank(k, d, seed ^ 0xABCD);
        let fmap = FeatureMap::new(
            h,
            w,
            c,
            (0..h * w * c).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let weights = FusionWeights::new(
            (0..c * d).map(|_| rng.gen_range(-1.5..1.5)).collect(),
            c,
            d,
            (0..(k + c) * n).map(|_| rng.gen_range(-1.5..1.5)).collect(),
            k + c,
            n,
        )
        .unwrap();
        let mut y = vec![0.0; h * w * n];
        for p in 0..h * w {
            if rng.gen_bool(0.85) {
                y[p * n + rng.gen_range(0..n)] = 1.0;
            }
        }
        let onehot = FeatureMap::new(h, w, n, y).unwrap();

        let (_, grads) =
            forward_backward(&fmap, &bank, &weights, &onehot, LossReduction::Sum).unwrap();
        let loss_at = |ws: &FusionWeights| {
            forward_backward(&fmap, &bank, ws, &onehot, LossReduction::Sum)
                .unwrap()
                .0
                .loss
        };
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..weights.align.len() {
            let mut plus = weights.clone();
            plus.align[i] += eps;
            let mut minus = weights.clone();
            minus.align[i] -= eps;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
            let a = grads.d_align[i];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1.0));
        }
        for i in 0..weights.logit.len() {
            let mut plus = weights.clone();
            plus.logit[i] += eps;
            let mut minus = weights.clone();
            minus.logit[i] -= eps;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
            let a = grads.d_logit[i];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1.0));
        }
        worst
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        for seed in 0..10 {
            let worst = grad_check(1000 + seed);
            assert!(worst <= 1e-5, "seed {seed}: worst rel err {worst}");
        }
    }

    #[test]
    fn mean_reduction_scales_loss_and_gradients() {
        let bank = small_bank(2, 3, 11);
        let fmap = FeatureMap::new(2, 1, 2, vec![0.4, -0.2, 1.0, 0.3]).unwrap();
        let weights = FusionWeights::new(
            vec![0.1, 0.2, -0.3, 0.4, 0.0, 0.5],
            2,
            3,
            vec![0.3, -0.1, 0.2, 0.6, -0.4, 0.2, 0.1, 0.05],
            4,
            2,
        )
        .unwrap();
        let onehot = FeatureMap::new(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let (sum_out, sum_g) =
            forward_backward(&fmap, &bank, &weights, &onehot, LossReduction::Sum).unwrap();
        let (mean_out, mean_g) =
            forward_backward(&fmap, &bank, &weights, &onehot, LossReduction::Mean).unwrap();
        assert_abs_diff_eq!(sum_out.loss / 2.0, mean_out.loss, epsilon = 1e-12);
        for (a, b) in sum_g.d_logit.iter().zip(&mean_g.d_logit) {
            assert_abs_diff_eq!(a / 2.0, *b, epsilon = 1e-12);
        }
    }
}
