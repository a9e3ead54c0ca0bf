//! Visually-grounded text corpus construction and distribution diagnostics.
//!
//! The selector pairs every image with its best available text by cosine
//! score, round by round, until the image set is exhausted, the text pool
//! runs dry, or a round retires too small a fraction of the remaining
//! images to be worth continuing.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::store;
use crate::tensor::{self, EmbeddingMatrix};

/// A round keeps going only while it retires more than this fraction of
/// the remaining images (continue while |remaining|/|previous| < floor).
pub const DEFAULT_PROGRESS_FLOOR: f64 = 0.95;

/// Images scanned per work unit in the proposal phase.
const IMG_CHUNK: usize = 64;
/// Pool rows per inner block; 256 rows of d=64 stay L2-resident.
const POOL_BLOCK: usize = 256;

/// One accepted image-text match.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchRecord {
    /// 1-based round in which the match was accepted.
    pub round: usize,
    pub image_id: u64,
    pub text_id: u64,
    /// Cosine score between the matched pair.
    pub score: f64,
}

/// Output of [`greedy_select`].
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Selected text ids in acceptance order; always distinct.
    pub selected_text_ids: Vec<u64>,
    /// One record per selected text, in the same order.
    pub match_log: Vec<MatchRecord>,
    /// Number of rounds executed.
    pub rounds: usize,
}

/// Greedily selects one text per image from `pool`.
///
/// Each round, every remaining image proposes its highest-cosine text
/// among those still available at the round start (score ties broken by
/// lowest text id). Proposals are then accepted in ascending image-id
/// order; an image whose text was already claimed this round stays for
/// the next one. The loop stops when no images remain, the pool is
/// exhausted, or a round finishes with at least `progress_floor` of the
/// previous round's images still unmatched.
///
/// Ids are assumed unique within each input (the manifest invariant).
/// The result is identical for both execution strategies.
pub fn greedy_select(
    images: &EmbeddingMatrix,
    pool: &EmbeddingMatrix,
    progress_floor: f64,
) -> Result<SelectionResult> {
    greedy_select_exec(images, pool, progress_floor, Exec::default())
}

pub fn greedy_select_exec(
    images: &EmbeddingMatrix,
    pool: &EmbeddingMatrix,
    progress_floor: f64,
    exec: Exec,
) -> Result<SelectionResult> {
    if images.rows() == 0 {
        return Err(Error::EmptyInput("image corpus"));
    }
    if pool.rows() == 0 {
        return Err(Error::EmptyInput("text pool"));
    }
    if images.dim() != pool.dim() {
        return Err(Error::DimensionMismatch(format!(
            "image dim {} vs pool dim {}",
            images.dim(),
            pool.dim()
        )));
    }
    if !(progress_floor > 0.0 && progress_floor <= 1.0) {
        return Err(Error::ConfigInvalid(format!(
            "progress_floor must be in (0, 1], got {progress_floor}"
        )));
    }

    let img = tensor::normalized_rows(images)?;
    let txt = tensor::normalized_rows(pool)?;
    let d = images.dim();
    let n_pool = pool.rows();
    let img_flat = img.as_slice().expect("standard layout");
    let txt_flat = txt.as_slice().expect("standard layout");
    let image_ids: Vec<u64> = (0..images.rows()).map(|i| images.id_of(i)).collect();
    let pool_ids: Vec<u64> = (0..n_pool).map(|t| pool.id_of(t)).collect();

    // Images are visited in ascending id order in both phases, so the
    // lowest image id wins any within-round conflict.
    let mut remaining: Vec<usize> = (0..images.rows()).collect();
    remaining.sort_by_key(|&i| image_ids[i]);

    let mut taken = vec![false; n_pool];
    let mut available = n_pool;
    let mut selected = Vec::new();
    let mut match_log = Vec::new();
    let mut rounds = 0usize;
    let mut u_prev = f64::INFINITY;

    loop {
        if remaining.is_empty() || available == 0 {
            break;
        }
        if remaining.len() as f64 / u_prev >= progress_floor {
            break;
        }
        u_prev = remaining.len() as f64;
        rounds += 1;

        // Proposal phase: argmax over the texts available at round start.
        // Per-image results depend only on that frozen state, so chunked
        // parallel execution is bitwise identical to sequential.
        let mut best = vec![(f64::NEG_INFINITY, usize::MAX); remaining.len()];
        exec::fill_chunks(exec, &mut best, IMG_CHUNK, |ci, out| {
            let rows = &remaining[ci * IMG_CHUNK..ci * IMG_CHUNK + out.len()];
            for t0 in (0..n_pool).step_by(POOL_BLOCK) {
                let t1 = (t0 + POOL_BLOCK).min(n_pool);
                for (k, &irow) in rows.iter().enumerate() {
                    let xi = &img_flat[irow * d..(irow + 1) * d];
                    let (mut bs, mut bt) = out[k];
                    for t in t0..t1 {
                        if taken[t] {
                            continue;
                        }
                        let s = tensor::dot(xi, &txt_flat[t * d..(t + 1) * d]);
                        if s > bs {
                            bs = s;
                            bt = t;
                        } else if s == bs && bt != usize::MAX && pool_ids[t] < pool_ids[bt] {
                            bt = t;
                        }
                    }
                    out[k] = (bs, bt);
                }
            }
        });

        // Acceptance phase, sequential in ascending image id: first
        // claim on a text wins, later proposals for it are skipped.
        let mut retired = vec![false; remaining.len()];
        for (k, &irow) in remaining.iter().enumerate() {
            let (score, t) = best[k];
            if t == usize::MAX || taken[t] {
                continue;
            }
            taken[t] = true;
            available -= 1;
            selected.push(pool_ids[t]);
            match_log.push(MatchRecord {
                round: rounds,
                image_id: image_ids[irow],
                text_id: pool_ids[t],
                score,
            });
            retired[k] = true;
        }
        let mut next = Vec::with_capacity(remaining.len());
        for (k, &irow) in remaining.iter().enumerate() {
            if !retired[k] {
                next.push(irow);
            }
        }
        remaining = next;
    }

    Ok(SelectionResult {
        selected_text_ids: selected,
        match_log,
        rounds,
    })
}

/// Shrinks a selected corpus to `k` sentences: k-means over the
/// unit-normalized rows, then the nearest still-unused member of each
/// center, in center order. Returned ids are distinct.
///
/// `k == rows` is the identity; `k == 1` picks the sentence closest to
/// the corpus mean direction.
pub fn reduce_to_k(selected: &EmbeddingMatrix, k: usize, seed: u64) -> Result<Vec<u64>> {
    let n = selected.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, rows: n });
    }
    if k == n {
        return Ok((0..n).map(|i| selected.id_of(i)).collect());
    }
    let unit = tensor::l2_normalize(selected)?;
    let (centers, _) = tensor::kmeans(&unit, k, seed)?;

    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(k);
    for c in 0..k {
        let center = centers.row_slice(c);
        // Rows are unit norm, so max dot is min Euclidean distance.
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, &used) in taken.iter().enumerate() {
            if used {
                continue;
            }
            let s = tensor::dot(unit.row_slice(i), center);
            if s > best.0 {
                best = (s, i);
            }
        }
        let i = best.1;
        debug_assert!(i != usize::MAX, "k <= rows leaves a free member");
        taken[i] = true;
        out.push(selected.id_of(i));
    }
    Ok(out)
}

/// What a corpus contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    Image,
    Text,
}

/// Metadata for an embedding corpus persisted on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub kind: CorpusKind,
    pub size: usize,
    /// Path of the embedding store holding the rows.
    pub embedding_store: String,
    /// Stable row ids, aligned with the store.
    pub ids: Vec<u64>,
    /// Free-form description of where the corpus came from.
    pub provenance: String,
}

impl CorpusManifest {
    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != self.size {
            return Err(Error::ConfigInvalid(format!(
                "manifest size {} but {} ids",
                self.size,
                self.ids.len()
            )));
        }
        let mut seen = HashSet::with_capacity(self.ids.len());
        for &id in &self.ids {
            if !seen.insert(id) {
                return Err(Error::ConfigInvalid(format!("duplicate corpus id {id}")));
            }
        }
        Ok(())
    }

    /// Loads the store behind the manifest and attaches the manifest ids.
    pub fn load_embeddings(&self) -> Result<EmbeddingMatrix> {
        self.validate()?;
        let emb = store::read_store(Path::new(&self.embedding_store))?;
        if emb.rows() != self.size {
            return Err(Error::ShapeMismatch(format!(
                "manifest says {} rows, store {} has {}",
                self.size,
                self.embedding_store,
                emb.rows()
            )));
        }
        if let Some(ids) = emb.ids() {
            if ids != self.ids.as_slice() {
                return Err(Error::ConfigInvalid(format!(
                    "store {} ids disagree with manifest",
                    self.embedding_store
                )));
            }
            Ok(emb)
        } else {
            EmbeddingMatrix::with_ids(emb.into_data(), self.ids.clone())
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<CorpusManifest> {
    let text = std::fs::read_to_string(path)?;
    let manifest: CorpusManifest = serde_json::from_str(&text)?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &CorpusManifest) -> Result<()> {
    manifest.validate()?;
    let text = serde_json::to_string_pretty(manifest)?;
    Ok(std::fs::write(path, text)?)
}

/// Appends task prompt embeddings to a corpus, skipping prompts whose id
/// is already present, and writes the combined store to `out_store`.
pub fn augment_task_aware(
    corpus: &CorpusManifest,
    prompts: &EmbeddingMatrix,
    out_store: &Path,
) -> Result<CorpusManifest> {
    let base = corpus.load_embeddings()?;
    if prompts.rows() > 0 && prompts.dim() != base.dim() {
        return Err(Error::DimensionMismatch(format!(
            "corpus dim {} vs prompt dim {}",
            base.dim(),
            prompts.dim()
        )));
    }

    let mut present: HashSet<u64> = corpus.ids.iter().copied().collect();
    let mut fresh = Vec::new();
    for i in 0..prompts.rows() {
        if present.insert(prompts.id_of(i)) {
            fresh.push(i);
        }
    }

    let mut ids = corpus.ids.clone();
    ids.extend(fresh.iter().map(|&i| prompts.id_of(i)));
    let combined = if fresh.is_empty() {
        base.data().clone()
    } else {
        let extra = prompts.select_rows(&fresh);
        ndarray::concatenate(Axis(0), &[base.data().view(), extra.data().view()])
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?
    };
    let combined = EmbeddingMatrix::with_ids(combined, ids.clone())?;
    store::write_store(out_store, &combined)?;

    let manifest = CorpusManifest {
        kind: corpus.kind,
        size: combined.rows(),
        embedding_store: out_store.display().to_string(),
        ids,
        provenance: format!("{} + task prompts", corpus.provenance),
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Kernel for the discrepancy diagnostic. Rows are unit-normalized
/// before evaluation, so every kernel sees cosine geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    /// (x·y + 1)^3.
    Polynomial,
    /// exp(-gamma * |x - y|^2).
    Rbf { gamma: f64 },
}

impl Kernel {
    fn validate(&self) -> Result<()> {
        if let Kernel::Rbf { gamma } = self {
            if !(gamma.is_finite() && *gamma > 0.0) {
                return Err(Error::ConfigInvalid(format!(
                    "rbf gamma must be positive and finite, got {gamma}"
                )));
            }
        }
        Ok(())
    }

    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let s = tensor::dot(x, y);
        match self {
            Kernel::Linear => s,
            Kernel::Polynomial => {
                let b = s + 1.0;
                b * b * b
            }
            // Unit rows: |x - y|^2 = 2 - 2 x·y.
            Kernel::Rbf { gamma } => (-gamma * (2.0 - 2.0 * s)).exp(),
        }
    }
}

/// Biased (V-statistic) estimate of squared maximum mean discrepancy
/// between the row distributions of `u` and `v`.
pub fn mmd(u: &EmbeddingMatrix, v: &EmbeddingMatrix, kernel: Kernel) -> Result<f64> {
    mmd_exec(u, v, kernel, Exec::default())
}

pub fn mmd_exec(
    u: &EmbeddingMatrix,
    v: &EmbeddingMatrix,
    kernel: Kernel,
    exec: Exec,
) -> Result<f64> {
    kernel.validate()?;
    if u.rows() == 0 {
        return Err(Error::EmptyInput("mmd first sample"));
    }
    if v.rows() == 0 {
        return Err(Error::EmptyInput("mmd second sample"));
    }
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch(format!(
            "mmd samples have dims {} and {}",
            u.dim(),
            v.dim()
        )));
    }
    let a = tensor::normalized_rows(u)?;
    let b = tensor::normalized_rows(v)?;
    let uu = kernel_mean(&a, &a, kernel, exec);
    let vv = kernel_mean(&b, &b, kernel, exec);
    let uv = kernel_mean(&a, &b, kernel, exec);
    Ok(uu + vv - 2.0 * uv)
}

/// Mean of k(a_i, b_j) over all pairs. Row partials are computed
/// independently (parallelizable) and summed in row order, so the
/// result is identical for both execution strategies.
fn kernel_mean(a: &Array2<f64>, b: &Array2<f64>, kernel: Kernel, exec: Exec) -> f64 {
    let d = a.ncols();
    let af = a.as_slice().expect("standard layout");
    let bf = b.as_slice().expect("standard layout");
    let n_b = b.nrows();
    let mut partials = vec![0.0f64; a.nrows()];
    exec::fill_indexed(exec, &mut partials, |i| {
        let xi = &af[i * d..(i + 1) * d];
        let mut acc = 0.0;
        for j in 0..n_b {
            acc += kernel.eval(xi, &bf[j * d..(j + 1) * d]);
        }
        acc
    });
    let total: f64 = partials.iter().sum();
    total / (a.nrows() as f64 * n_b as f64)
}

/// Histogram of the aligned-pair cosine scores s(u_i, v_i) over [-1, 1].
/// Returns `bins` counts; their sum equals the number of rows.
pub fn score_histogram(
    u: &EmbeddingMatrix,
    v: &EmbeddingMatrix,
    bins: usize,
) -> Result<Vec<usize>> {
    if bins == 0 {
        return Err(Error::ConfigInvalid("histogram needs at least one bin".into()));
    }
    if u.rows() != v.rows() {
        return Err(Error::ShapeMismatch(format!(
            "aligned histogram needs equal row counts, got {} and {}",
            u.rows(),
            v.rows()
        )));
    }
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch(format!(
            "histogram samples have dims {} and {}",
            u.dim(),
            v.dim()
        )));
    }
    let a = tensor::normalized_rows(u)?;
    let b = tensor::normalized_rows(v)?;
    let mut counts = vec![0usize; bins];
    for i in 0..u.rows() {
        let s = tensor::dot(
            a.row(i).as_slice().expect("standard layout"),
            b.row(i).as_slice().expect("standard layout"),
        )
        .clamp(-1.0, 1.0);
        let idx = (((s + 1.0) / 2.0) * bins as f64) as usize;
        counts[idx.min(bins - 1)] += 1;
    }
    Ok(counts)
}
