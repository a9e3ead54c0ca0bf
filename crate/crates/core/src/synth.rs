//! Deterministic synthetic worlds: a frozen random teacher, separated
//! class prototypes, image/caption/NLP corpora, labeled tasks, and
//! shifted variants. Everything is a pure function of the world seed,
//! so regenerating any artifact reproduces it byte for byte.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusKind, CorpusManifest};
use crate::error::{Error, Result};
use crate::model::{Activation, Mlp};
use crate::store;
use crate::tensor::{self, EmbeddingMatrix, ProjectionMap};

/// Maximum pairwise cosine between class prototypes.
pub const PROTO_MAX_COS: f64 = 0.5;
/// Smallest acceptable singular value of the text projection B.
const B_MIN_SIGMA: f64 = 0.02;
/// Class anchors closer than this cosine make the world degenerate.
const ANCHOR_MAX_COS: f64 = 0.99;
const MAX_DRAWS: usize = 10_000;
const MAX_TEACHER_DRAWS: usize = 100;

// RNG purposes; each derived stream is independent of the others.
const PURPOSE_CORPORA: u64 = 1;
const PURPOSE_TASK: u64 = 2;
const PURPOSE_SHIFT: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    /// Number of classes C.
    pub classes: usize,
    /// Raw image feature dimension fed to encoders.
    pub d_raw: usize,
    /// Teacher visual dimension d^v (encoder output).
    pub d_visual: usize,
    /// Shared embedding dimension d.
    pub d: usize,
    /// Raw text dimension d^l; must be >= d so B can have full row rank.
    pub d_text: usize,
    /// Teacher encoder hidden width.
    pub hidden: usize,
    /// Raw-space image noise scale.
    pub noise_sigma_image: f64,
    /// Text-side noise scale.
    pub noise_sigma_text: f64,
    /// Fraction of the NLP pool drawn near class prototypes.
    pub grounded_fraction: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            classes: 10,
            d_raw: 48,
            d_visual: 48,
            d: 32,
            d_text: 40,
            hidden: 64,
            noise_sigma_image: 0.1,
            noise_sigma_text: 0.1,
            grounded_fraction: 0.3,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::ConfigInvalid(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        for (name, v) in [
            ("d_raw", self.d_raw),
            ("d_visual", self.d_visual),
            ("d", self.d),
            ("d_text", self.d_text),
            ("hidden", self.hidden),
        ] {
            if v < 2 {
                return Err(Error::ConfigInvalid(format!("{name} must be >= 2, got {v}")));
            }
        }
        if self.d_text < self.d {
            return Err(Error::ConfigInvalid(format!(
                "d_text {} < d {}: B cannot have full row rank",
                self.d_text, self.d
            )));
        }
        for (name, v) in [
            ("noise_sigma_image", self.noise_sigma_image),
            ("noise_sigma_text", self.noise_sigma_text),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::ConfigInvalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.grounded_fraction.is_finite()
            && (0.0..=1.0).contains(&self.grounded_fraction))
        {
            return Err(Error::ConfigInvalid(format!(
                "grounded_fraction must be in [0, 1], got {}",
                self.grounded_fraction
            )));
        }
        Ok(())
    }
}

/// Frozen teacher: a random nonlinear image path and linear projections
/// into the shared space, with the text pseudo-inverse cached.
#[derive(Debug, Clone)]
pub struct TeacherSpace {
    encoder: Mlp,
    proj_a: ProjectionMap,
    proj_b: ProjectionMap,
    b_dagger: ProjectionMap,
}

impl TeacherSpace {
    /// u = A f(x) for a batch of raw image rows.
    pub fn embed_images(&self, x_raw: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        let hidden = self.encoder.forward(&x_raw.data().view())?;
        let u = self.proj_a.project(&EmbeddingMatrix::new(hidden)?)?;
        Ok(match x_raw.ids() {
            Some(ids) => EmbeddingMatrix::with_ids(u.into_data(), ids.to_vec())?,
            None => u,
        })
    }

    /// v = B v' for a batch of raw text rows.
    pub fn embed_texts(&self, v_raw: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        let v = self.proj_b.project(v_raw)?;
        Ok(match v_raw.ids() {
            Some(ids) => EmbeddingMatrix::with_ids(v.into_data(), ids.to_vec())?,
            None => v,
        })
    }

    pub fn proj_a(&self) -> &ProjectionMap {
        &self.proj_a
    }

    pub fn proj_b(&self) -> &ProjectionMap {
        &self.proj_b
    }

    pub fn b_dagger(&self) -> &ProjectionMap {
        &self.b_dagger
    }
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub seed: u64,
    pub cfg: WorldConfig,
    pub teacher: TeacherSpace,
    /// C unit rows in shared space, pairwise cosine <= 0.5.
    prototypes: EmbeddingMatrix,
    /// Generator map from shared space to raw image features.
    image_map: ProjectionMap,
    /// psi_c: unit teacher embedding of the noiseless class image.
    class_anchors: EmbeddingMatrix,
    /// tau_c = B+ psi_c: raw-text anchor whose teacher embedding is psi_c.
    text_anchors: EmbeddingMatrix,
}

impl SynthWorld {
    pub fn prototypes(&self) -> &EmbeddingMatrix {
        &self.prototypes
    }

    pub fn class_anchors(&self) -> &EmbeddingMatrix {
        &self.class_anchors
    }

    pub fn text_anchors(&self) -> &EmbeddingMatrix {
        &self.text_anchors
    }

    pub fn image_map(&self) -> &ProjectionMap {
        &self.image_map
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent deterministic RNG for one generation purpose.
fn derived_rng(world_seed: u64, purpose: u64, salt: u64) -> ChaCha8Rng {
    let s = splitmix64(splitmix64(world_seed ^ splitmix64(purpose)) ^ splitmix64(salt));
    ChaCha8Rng::seed_from_u64(s)
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        scale * rng.sample::<f64, _>(StandardNormal)
    })
}

fn unit_vector(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = tensor::norm(&v);
        if n > 1e-6 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

pub fn make_world(seed: u64, cfg: &WorldConfig) -> Result<SynthWorld> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = cfg.classes;

    // Class prototypes: rejection-sample unit vectors until separated.
    let mut protos: Vec<Vec<f64>> = Vec::with_capacity(c);
    for _ in 0..c {
        let mut placed = false;
        for _ in 0..MAX_DRAWS {
            let cand = unit_vector(&mut rng, cfg.d);
            if protos
                .iter()
                .all(|p| tensor::dot(p, &cand) <= PROTO_MAX_COS)
            {
                protos.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::ConfigInvalid(format!(
                "cannot place {c} prototypes with pairwise cosine <= {PROTO_MAX_COS} in dimension {}",
                cfg.d
            )));
        }
    }
    let prototypes = EmbeddingMatrix::from_flat(c, cfg.d, protos.concat())?;

    let image_map = ProjectionMap::new(gaussian_matrix(
        &mut rng,
        cfg.d_raw,
        cfg.d,
        1.0 / (cfg.d as f64).sqrt(),
    ))?;
    let raw_class_images = image_map.project(&prototypes)?;

    // Teacher: redraw until B has full row rank and the class anchors
    // stay distinct; both failures are rare at desk dimensions.
    let mut teacher = None;
    for _ in 0..MAX_TEACHER_DRAWS {
        let encoder = Mlp::init(
            &[cfg.d_raw, cfg.hidden, cfg.d_visual],
            Activation::Tanh,
            &mut rng,
        )?;
        let proj_a = ProjectionMap::new(gaussian_matrix(
            &mut rng,
            cfg.d,
            cfg.d_visual,
            1.0 / (cfg.d_visual as f64).sqrt(),
        ))?;
        let b_matrix = gaussian_matrix(
            &mut rng,
            cfg.d,
            cfg.d_text,
            1.0 / (cfg.d_text as f64).sqrt(),
        );
        let svd = tensor::svd(&b_matrix)?;
        if svd.s[svd.s.len() - 1] < B_MIN_SIGMA {
            continue;
        }
        let proj_b = tensor::pseudo_inverse(&ProjectionMap::new(b_matrix)?)?;
        // Standalone map applying B+ as its forward direction.
        let b_dagger = ProjectionMap::new(
            proj_b.cached_pinv().expect("cache just filled").clone(),
        )?;

        let candidate = TeacherSpace {
            encoder,
            proj_a,
            proj_b,
            b_dagger,
        };
        let anchors_raw = candidate.embed_images(&raw_class_images)?;
        let anchors = tensor::l2_normalize(&anchors_raw)?;
        let mut distinct = true;
        'outer: for i in 0..c {
            for j in i + 1..c {
                if tensor::dot(anchors.row_slice(i), anchors.row_slice(j)) > ANCHOR_MAX_COS {
                    distinct = false;
                    break 'outer;
                }
            }
        }
        if distinct {
            teacher = Some((candidate, anchors));
            break;
        }
    }
    let Some((teacher, class_anchors)) = teacher else {
        return Err(Error::NumericalFailure);
    };

    let text_anchors = teacher.b_dagger.project(&class_anchors)?;

    Ok(SynthWorld {
        seed,
        cfg: cfg.clone(),
        teacher,
        prototypes,
        image_map,
        class_anchors,
        text_anchors,
    })
}

/// Labels and grounding flags for sampled corpora. Kept in a separate
/// sidecar file so the training corpora stay unpaired and unlabeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSidecar {
    pub image_labels: Vec<usize>,
    pub caption_labels: Vec<usize>,
    /// Class of each grounded pool sentence, None for off-manifold rows.
    pub pool_labels: Vec<Option<usize>>,
    pub pool_grounded: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct SampledCorpora {
    /// Teacher image embeddings u.
    pub images: CorpusManifest,
    /// Teacher caption embeddings v.
    pub captions: CorpusManifest,
    /// Teacher embeddings of the NLP pool.
    pub pool: CorpusManifest,
    pub images_raw_store: PathBuf,
    pub captions_raw_store: PathBuf,
    pub pool_raw_store: PathBuf,
    pub sidecar: LabelSidecar,
}

/// Draws the three training corpora and writes their stores, manifests,
/// and the label sidecar under `out_dir`. Ids are disjoint across the
/// corpora: images from 0, captions after images, pool after captions.
pub fn sample_corpora(
    world: &SynthWorld,
    n_images: usize,
    n_captions: usize,
    n_nlp_pool: usize,
    out_dir: &Path,
) -> Result<SampledCorpora> {
    for (name, n) in [
        ("n_images", n_images),
        ("n_captions", n_captions),
        ("n_nlp_pool", n_nlp_pool),
    ] {
        if n == 0 {
            return Err(Error::ConfigInvalid(format!("{name} must be >= 1")));
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let cfg = &world.cfg;
    let c = cfg.classes;
    let mut rng = derived_rng(world.seed, PURPOSE_CORPORA, 0);

    // Images: class prototype through the generator map plus raw noise.
    let mut image_labels = Vec::with_capacity(n_images);
    let mut img_raw = Array2::zeros((n_images, cfg.d_raw));
    let proto_raw = world.image_map.project(&world.prototypes)?;
    for i in 0..n_images {
        let class = rng.random_range(0..c);
        image_labels.push(class);
        let base = proto_raw.row_slice(class);
        for j in 0..cfg.d_raw {
            img_raw[[i, j]] =
                base[j] + cfg.noise_sigma_image * rng.sample::<f64, _>(StandardNormal);
        }
    }

    // Captions: text anchor of a class plus text-side noise.
    let mut caption_labels = Vec::with_capacity(n_captions);
    let mut cap_raw = Array2::zeros((n_captions, cfg.d_text));
    for i in 0..n_captions {
        let class = rng.random_range(0..c);
        caption_labels.push(class);
        let base = world.text_anchors.row_slice(class);
        for j in 0..cfg.d_text {
            cap_raw[[i, j]] =
                base[j] + cfg.noise_sigma_text * rng.sample::<f64, _>(StandardNormal);
        }
    }

    // NLP pool: grounded rows look like captions, the rest are
    // off-manifold directions unrelated to any prototype.
    let mut pool_labels = Vec::with_capacity(n_nlp_pool);
    let mut pool_grounded = Vec::with_capacity(n_nlp_pool);
    let mut pool_raw = Array2::zeros((n_nlp_pool, cfg.d_text));
    for i in 0..n_nlp_pool {
        let grounded = rng.random_bool(cfg.grounded_fraction);
        pool_grounded.push(grounded);
        if grounded {
            let class = rng.random_range(0..c);
            pool_labels.push(Some(class));
            let base = world.text_anchors.row_slice(class);
            for j in 0..cfg.d_text {
                pool_raw[[i, j]] =
                    base[j] + cfg.noise_sigma_text * rng.sample::<f64, _>(StandardNormal);
            }
        } else {
            pool_labels.push(None);
            for j in 0..cfg.d_text {
                pool_raw[[i, j]] = rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    let img_ids: Vec<u64> = (0..n_images as u64).collect();
    let cap_base = n_images as u64;
    let cap_ids: Vec<u64> = (0..n_captions as u64).map(|i| cap_base + i).collect();
    let pool_base = cap_base + n_captions as u64;
    let pool_ids: Vec<u64> = (0..n_nlp_pool as u64).map(|i| pool_base + i).collect();

    // Raw corpora are stored as f32. Snap before embedding so the teacher
    // stores match what a reader of the raw stores would compute.
    for m in [&mut img_raw, &mut cap_raw, &mut pool_raw] {
        m.mapv_inplace(|x| x as f32 as f64);
    }

    let img_raw = EmbeddingMatrix::with_ids(img_raw, img_ids.clone())?;
    let cap_raw = EmbeddingMatrix::with_ids(cap_raw, cap_ids.clone())?;
    let pool_raw = EmbeddingMatrix::with_ids(pool_raw, pool_ids.clone())?;
    let img_teacher = world.teacher.embed_images(&img_raw)?;
    let cap_teacher = world.teacher.embed_texts(&cap_raw)?;
    let pool_teacher = world.teacher.embed_texts(&pool_raw)?;

    let write = |name: &str, emb: &EmbeddingMatrix| -> Result<PathBuf> {
        let path = out_dir.join(name);
        store::write_store(&path, emb)?;
        Ok(path)
    };
    let images_raw_store = write("images_raw.dfem", &img_raw)?;
    let captions_raw_store = write("captions_raw.dfem", &cap_raw)?;
    let pool_raw_store = write("pool_raw.dfem", &pool_raw)?;
    let img_store = write("images_teacher.dfem", &img_teacher)?;
    let cap_store = write("captions_teacher.dfem", &cap_teacher)?;
    let pool_store = write("pool_teacher.dfem", &pool_teacher)?;

    let manifest = |kind, size, store: &Path, ids: Vec<u64>, what: &str| CorpusManifest {
        kind,
        size,
        embedding_store: store.display().to_string(),
        ids,
        provenance: format!("synthetic {what}, world seed {}", world.seed),
    };
    let images = manifest(CorpusKind::Image, n_images, &img_store, img_ids, "images");
    let captions = manifest(
        CorpusKind::Text,
        n_captions,
        &cap_store,
        cap_ids,
        "captions",
    );
    let pool = manifest(CorpusKind::Text, n_nlp_pool, &pool_store, pool_ids, "nlp pool");
    crate::corpus::write_manifest(&out_dir.join("images.json"), &images)?;
    crate::corpus::write_manifest(&out_dir.join("captions.json"), &captions)?;
    crate::corpus::write_manifest(&out_dir.join("pool.json"), &pool)?;

    let sidecar = LabelSidecar {
        image_labels,
        caption_labels,
        pool_labels,
        pool_grounded,
    };
    std::fs::write(
        out_dir.join("labels.json"),
        serde_json::to_string_pretty(&sidecar)?,
    )?;

    Ok(SampledCorpora {
        images,
        captions,
        pool,
        images_raw_store,
        captions_raw_store,
        pool_raw_store,
        sidecar,
    })
}

/// Labeled raw inputs for evaluation.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub inputs_raw: EmbeddingMatrix,
    pub labels: Vec<usize>,
}

/// A downstream classification task at desk scale.
#[derive(Debug, Clone)]
pub struct Task {
    pub name: String,
    pub train: LabeledSet,
    pub test: LabeledSet,
    /// Raw text prompts, `prompts_per_class` rows per class.
    pub prompts_raw: EmbeddingMatrix,
    pub prompt_class: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub seed: u64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub prompts_per_class: usize,
    /// Raw-space noise around the class image; 0 gives exact class images.
    pub image_sigma: f64,
    /// Text-side noise around the class anchor; 0 gives exact anchors.
    pub prompt_sigma: f64,
}

impl TaskSpec {
    /// Zero-noise spec: the teacher classifies this task perfectly.
    pub fn noiseless(seed: u64, test_per_class: usize) -> Self {
        TaskSpec {
            seed,
            train_per_class: 0,
            test_per_class,
            prompts_per_class: 1,
            image_sigma: 0.0,
            prompt_sigma: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.test_per_class == 0 {
            return Err(Error::ConfigInvalid("test_per_class must be >= 1".into()));
        }
        if self.prompts_per_class == 0 {
            return Err(Error::ConfigInvalid(
                "prompts_per_class must be >= 1".into(),
            ));
        }
        for (name, v) in [
            ("image_sigma", self.image_sigma),
            ("prompt_sigma", self.prompt_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::ConfigInvalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

pub fn make_task(world: &SynthWorld, spec: &TaskSpec) -> Result<Task> {
    spec.validate()?;
    let cfg = &world.cfg;
    let c = cfg.classes;
    let proto_raw = world.image_map.project(&world.prototypes)?;
    let mut rng = derived_rng(world.seed, PURPOSE_TASK, spec.seed);

    let mut draw_set = |per_class: usize| -> Result<LabeledSet> {
        let n = per_class * c;
        let mut labels = Vec::with_capacity(n);
        let mut data = Array2::zeros((n, cfg.d_raw));
        for class in 0..c {
            let base = proto_raw.row_slice(class);
            for k in 0..per_class {
                let row = class * per_class + k;
                labels.push(class);
                for j in 0..cfg.d_raw {
                    data[[row, j]] =
                        base[j] + spec.image_sigma * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        Ok(LabeledSet {
            inputs_raw: EmbeddingMatrix::new(data)?,
            labels,
        })
    };
    let train = draw_set(spec.train_per_class)?;
    let test = draw_set(spec.test_per_class)?;

    let n_prompts = spec.prompts_per_class * c;
    let mut prompt_class = Vec::with_capacity(n_prompts);
    let mut prompts = Array2::zeros((n_prompts, cfg.d_text));
    for class in 0..c {
        let base = world.text_anchors.row_slice(class);
        for k in 0..spec.prompts_per_class {
            let row = class * spec.prompts_per_class + k;
            prompt_class.push(class);
            for j in 0..cfg.d_text {
                prompts[[row, j]] =
                    base[j] + spec.prompt_sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    Ok(Task {
        name: format!("synth-task-{}", spec.seed),
        train,
        test,
        prompts_raw: EmbeddingMatrix::new(prompts)?,
        prompt_class,
    })
}

/// Adds raw-space Gaussian noise to a labeled set; labels are untouched.
/// `shift_sigma` of zero returns a bit-identical copy.
pub fn make_shifted_variant(
    world: &SynthWorld,
    set: &LabeledSet,
    shift_sigma: f64,
    variant_seed: u64,
) -> LabeledSet {
    assert!(
        shift_sigma.is_finite() && shift_sigma >= 0.0,
        "shift_sigma must be >= 0"
    );
    if shift_sigma == 0.0 {
        return set.clone();
    }
    let mut rng = derived_rng(world.seed, PURPOSE_SHIFT, variant_seed);
    let mut data = set.inputs_raw.data().clone();
    for v in data.iter_mut() {
        *v += shift_sigma * rng.sample::<f64, _>(StandardNormal);
    }
    LabeledSet {
        inputs_raw: EmbeddingMatrix::new(data).expect("finite shift of finite data"),
        labels: set.labels.clone(),
    }
}
