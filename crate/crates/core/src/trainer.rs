//! Student training: AdamW with decoupled weight decay, linear warmup
//! into cosine decay, and independent without-replacement image/text
//! batches. Runs are deterministic for a fixed seed and resumable from
//! checkpoints with bit-identical results.
//!
//! Parameters and optimizer moments are snapped to the f32 grid after
//! every update, matching checkpoint precision, so a resumed run
//! replays the exact trajectory of an uninterrupted one.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{total_loss, LossBatch, LossConfig, PvlMode};
use crate::model::{ModelGrads, StudentConfig, StudentModel};
use crate::tensor::{EmbeddingMatrix, ProjectionMap};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Images per step, B^v.
    pub batch_image: usize,
    /// Texts per step, B^l.
    pub batch_text: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// Steps between periodic checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_image: 256,
            batch_text: 256,
            peak_lr: 8e-4,
            weight_decay: 0.05,
            warmup_epochs: 4,
            seed: 0,
            loss: LossConfig::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::ConfigInvalid("epochs must be >= 1".into()));
        }
        if self.batch_image < 2 || self.batch_text < 2 {
            return Err(Error::ConfigInvalid(format!(
                "batches need at least 2 rows, got {}x{}",
                self.batch_image, self.batch_text
            )));
        }
        for (name, v) in [("peak_lr", self.peak_lr), ("weight_decay", self.weight_decay)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::ConfigInvalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        self.loss.validate()
    }
}

/// Adam moment accumulators, aligned with `StudentModel::param_meta`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    steps_done: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(model: &StudentModel) -> Self {
        let sizes: Vec<usize> = model
            .param_meta()
            .iter()
            .map(|p| p.rows * p.cols)
            .collect();
        OptimizerState {
            steps_done: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Completed optimizer steps; also the index of the next step.
    pub fn steps_done(&self) -> u64 {
        self.steps_done
    }
}

/// Learning rate at `step` of `total_steps`: linear ramp 0 to peak over
/// the warmup steps, then cosine decay from peak to 0.
pub fn lr_schedule(step: u64, total_steps: u64, cfg: &TrainConfig) -> f64 {
    debug_assert!(step <= total_steps);
    let warmup = ((total_steps as u128 * cfg.warmup_epochs as u128
        / cfg.epochs.max(1) as u128) as u64)
        .min(total_steps);
    if step < warmup {
        return cfg.peak_lr * step as f64 / warmup as f64;
    }
    let denom = total_steps - warmup;
    let progress = if denom == 0 {
        0.0
    } else {
        (step - warmup) as f64 / denom as f64
    };
    cfg.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

fn snap_f32(x: f64) -> f64 {
    (x as f32) as f64
}

/// Rounds every parameter to the nearest f32; training keeps the whole
/// trajectory on this grid so checkpoints lose nothing.
pub fn snap_model(model: &mut StudentModel) {
    model.for_each_param_mut(|_, p| {
        for x in p.iter_mut() {
            *x = snap_f32(*x);
        }
    });
}

/// One AdamW update. Decay multiplies the parameter before the Adam
/// delta and is skipped for bias parameters. Moments update even when
/// `lr` is 0, so warmup steps still accumulate statistics.
pub fn optimizer_step(
    model: &mut StudentModel,
    grads: &ModelGrads,
    state: &mut OptimizerState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::ConfigInvalid(format!("lr must be >= 0, got {lr}")));
    }
    let metas = model.param_meta();
    if grads.tensors.len() != metas.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradient tensors for {} parameters",
            grads.tensors.len(),
            metas.len()
        )));
    }
    for (meta, g) in metas.iter().zip(&grads.tensors) {
        if g.len() != meta.rows * meta.cols {
            return Err(Error::ShapeMismatch(format!(
                "gradient for {} has {} entries, expected {}",
                meta.name,
                g.len(),
                meta.rows * meta.cols
            )));
        }
        if !g.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFiniteGradient(meta.name.clone()));
        }
    }

    state.steps_done += 1;
    let t = state.steps_done as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    let decay_mult = 1.0 - lr * cfg.weight_decay;

    let mut k = 0usize;
    let (ms, vs) = (&mut state.m, &mut state.v);
    model.for_each_param_mut(|_, p| {
        let g = &grads.tensors[k];
        let m = &mut ms[k];
        let v = &mut vs[k];
        let decay = metas[k].decay;
        for i in 0..p.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            if decay {
                p[i] *= decay_mult;
            }
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            p[i] = snap_f32(p[i]);
            m[i] = snap_f32(m[i]);
            v[i] = snap_f32(v[i]);
        }
        k += 1;
    });
    Ok(())
}

/// Frozen teacher-side training data. Image and text corpora are
/// unpaired; batches are sampled from each independently.
#[derive(Debug, Clone, Copy)]
pub struct TrainInputs<'a> {
    pub images_teacher: &'a EmbeddingMatrix,
    pub images_raw: &'a EmbeddingMatrix,
    pub texts_teacher: &'a EmbeddingMatrix,
    pub texts_raw: &'a EmbeddingMatrix,
    /// Frozen B†, required when the pseudo-text weight is nonzero.
    pub b_dagger: Option<&'a ProjectionMap>,
}

impl TrainInputs<'_> {
    fn validate(&self, cfg: &TrainConfig) -> Result<()> {
        if self.images_teacher.rows() != self.images_raw.rows() {
            return Err(Error::ShapeMismatch(format!(
                "image stores disagree: {} teacher rows vs {} raw rows",
                self.images_teacher.rows(),
                self.images_raw.rows()
            )));
        }
        if self.texts_teacher.rows() != self.texts_raw.rows() {
            return Err(Error::ShapeMismatch(format!(
                "text stores disagree: {} teacher rows vs {} raw rows",
                self.texts_teacher.rows(),
                self.texts_raw.rows()
            )));
        }
        if cfg.batch_image > self.images_teacher.rows() {
            return Err(Error::ConfigInvalid(format!(
                "batch_image {} exceeds image corpus size {}",
                cfg.batch_image,
                self.images_teacher.rows()
            )));
        }
        if cfg.batch_text > self.texts_teacher.rows() {
            return Err(Error::ConfigInvalid(format!(
                "batch_text {} exceeds text corpus size {}",
                cfg.batch_text,
                self.texts_teacher.rows()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: StudentModel,
    pub optimizer: OptimizerState,
    /// One record per step executed in this call.
    pub loss_log: Vec<StepRecord>,
    pub final_checkpoint: Option<PathBuf>,
}

pub fn total_steps(cfg: &TrainConfig, n_images: usize) -> u64 {
    (cfg.epochs as u64) * (n_images.div_ceil(cfg.batch_image) as u64)
}

/// Distinct sorted indices, drawn without replacement. Sorting fixes
/// the accumulation order, so a full-corpus batch is the same batch
/// every step.
fn sample_sorted(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Trains `model` from scratch. Checkpoints go to `checkpoint_dir`
/// when given: periodic ones per `cfg.checkpoint_every`, `final.dfck`
/// at the end, and `last_good.dfck` before a non-finite abort.
pub fn train(
    inputs: &TrainInputs,
    mut model: StudentModel,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    inputs.validate(cfg)?;
    snap_model(&mut model);
    let optimizer = OptimizerState::new(&model);
    let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    run_loop(inputs, model, cfg.clone(), optimizer, rng, checkpoint_dir)
}

/// Continues a checkpointed run to completion. The configuration is
/// taken from the checkpoint, so the continuation replays exactly what
/// the uninterrupted run would have done.
pub fn resume(
    checkpoint: &Path,
    inputs: &TrainInputs,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let loaded = read_checkpoint(checkpoint)?;
    loaded.config.validate()?;
    inputs.validate(&loaded.config)?;
    run_loop(
        inputs,
        loaded.model,
        loaded.config,
        loaded.optimizer,
        loaded.rng,
        checkpoint_dir,
    )
}

fn run_loop(
    inputs: &TrainInputs,
    mut model: StudentModel,
    cfg: TrainConfig,
    mut opt: OptimizerState,
    mut rng: ChaCha8Rng,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let n_img = inputs.images_teacher.rows();
    let n_txt = inputs.texts_teacher.rows();
    let total = total_steps(&cfg, n_img);
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(dir)?;
    }
    let mut log = Vec::new();

    while opt.steps_done() < total {
        let step = opt.steps_done();
        // Snapshot for the abort path: state exactly as after step-1.
        let rng_at_start = rng.clone();

        let img_idx = sample_sorted(&mut rng, n_img, cfg.batch_image);
        let txt_idx = sample_sorted(&mut rng, n_txt, cfg.batch_text);
        let alt_idx = (cfg.loss.pvl_mode == PvlMode::Inter && cfg.loss.lambda1 != 0.0)
            .then(|| sample_sorted(&mut rng, n_img, cfg.batch_image));

        let teacher_u = inputs.images_teacher.select_rows(&img_idx);
        let x_raw = inputs.images_raw.select_rows(&img_idx);
        let teacher_v = inputs.texts_teacher.select_rows(&txt_idx);
        let v_raw = inputs.texts_raw.select_rows(&txt_idx);
        let teacher_u_alt = alt_idx.map(|idx| inputs.images_teacher.select_rows(&idx));

        let stepped = (|| -> Result<(f64, ModelGrads)> {
            let cache = model.encoder.forward_cached(&x_raw.data().view())?;
            let u_prime = EmbeddingMatrix::new(cache.output().clone())?;
            let batch = LossBatch {
                teacher_u: &teacher_u,
                teacher_v: &teacher_v,
                student_u_raw: &u_prime,
                text_raw: &v_raw,
                teacher_u_alt: teacher_u_alt.as_ref(),
                b_dagger: inputs.b_dagger,
            };
            let out = total_loss(&batch, &model, &cfg.loss)?;
            let g_u_prime = out
                .grad_u_raw
                .as_ref()
                .expect("total loss always carries image gradients");
            let enc_grads = model.encoder.backward(&cache, g_u_prime);
            let zero_b;
            let grad_b = match out.grad_proj_b.as_ref() {
                Some(g) => g,
                None => {
                    zero_b = Array2::zeros((
                        model.proj_b.out_dim(),
                        model.proj_b.in_dim(),
                    ));
                    &zero_b
                }
            };
            let grads = ModelGrads::assemble(
                enc_grads,
                out.grad_proj_a.as_ref().expect("image projection gradient"),
                grad_b,
            );
            Ok((out.value, grads))
        })();

        let (loss, grads) = match stepped {
            Ok(pair) => pair,
            Err(Error::NonFinite(_)) | Err(Error::NonFiniteGradient(_)) => {
                if let Some(dir) = checkpoint_dir {
                    write_checkpoint(
                        &dir.join("last_good.dfck"),
                        &model,
                        &cfg,
                        &opt,
                        &rng_at_start,
                    )?;
                }
                return Err(Error::NonFiniteLoss(step));
            }
            Err(e) => return Err(e),
        };

        let lr = lr_schedule(step, total, &cfg);
        optimizer_step(&mut model, &grads, &mut opt, lr, &cfg)?;
        log.push(StepRecord { step, lr, loss });

        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0
                && opt.steps_done().is_multiple_of(cfg.checkpoint_every as u64)
            {
                let path = dir.join(format!("step{:08}.dfck", opt.steps_done()));
                write_checkpoint(&path, &model, &cfg, &opt, &rng)?;
            }
        }
    }

    let final_checkpoint = match checkpoint_dir {
        Some(dir) => {
            let path = dir.join("final.dfck");
            write_checkpoint(&path, &model, &cfg, &opt, &rng)?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainOutcome {
        model,
        optimizer: opt,
        loss_log: log,
        final_checkpoint,
    })
}

// Checkpoint format (integers little-endian):
//   magic "DFCK" | version u32 | config json (u64 length + bytes)
//   | param count u32 | per param: name (u32 length + utf8), rows u64,
//   cols u64, decay u8, values f32[] | steps_done u64 | per param: m
//   f32[], v f32[] | rng seed 32 bytes, stream u64, word_pos u128.
const CK_MAGIC: &[u8; 4] = b"DFCK";
const CK_VERSION: u32 = 1;

#[derive(Debug)]
pub struct Checkpoint {
    pub model: StudentModel,
    pub config: TrainConfig,
    pub optimizer: OptimizerState,
    pub rng: ChaCha8Rng,
}

pub fn write_checkpoint(
    path: &Path,
    model: &StudentModel,
    cfg: &TrainConfig,
    opt: &OptimizerState,
    rng: &ChaCha8Rng,
) -> Result<()> {
    let tmp = {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".tmp");
        path.with_file_name(name)
    };
    let res = write_checkpoint_to(&tmp, model, cfg, opt, rng);
    if res.is_ok() {
        fs::rename(&tmp, path)?;
    } else {
        let _ = fs::remove_file(&tmp);
    }
    res
}

fn write_checkpoint_to(
    path: &Path,
    model: &StudentModel,
    cfg: &TrainConfig,
    opt: &OptimizerState,
    rng: &ChaCha8Rng,
) -> Result<()> {
    let metas = model.param_meta();
    if opt.m.len() != metas.len() {
        return Err(Error::ShapeMismatch(format!(
            "optimizer tracks {} tensors, model has {}",
            opt.m.len(),
            metas.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CK_MAGIC)?;
    w.write_all(&CK_VERSION.to_le_bytes())?;
    let cfg_json = serde_json::to_vec(cfg)?;
    w.write_all(&(cfg_json.len() as u64).to_le_bytes())?;
    w.write_all(&cfg_json)?;

    w.write_all(&(metas.len() as u32).to_le_bytes())?;
    let mut owned: Vec<Vec<f64>> = Vec::with_capacity(metas.len());
    model.for_each_param(|_, p| owned.push(p.to_vec()));

    for (meta, values) in metas.iter().zip(&owned) {
        let name = meta.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(meta.rows as u64).to_le_bytes())?;
        w.write_all(&(meta.cols as u64).to_le_bytes())?;
        w.write_all(&[meta.decay as u8])?;
        for &x in values.iter() {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }

    w.write_all(&opt.steps_done.to_le_bytes())?;
    for (m, v) in opt.m.iter().zip(&opt.v) {
        for &x in m {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
        for &x in v {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }

    w.write_all(&rng.get_seed())?;
    w.write_all(&rng.get_stream().to_le_bytes())?;
    w.write_all(&rng.get_word_pos().to_le_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            Error::StoreMissing(path.display().to_string())
        } else {
            Error::Io(e)
        }
    })?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_or_truncated(&mut r, &mut magic, "checkpoint header")?;
    if &magic != CK_MAGIC {
        return Err(Error::BadMagic(format!("{:02x?}", magic)));
    }
    let version = read_u32(&mut r)?;
    if version != CK_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let cfg_len = read_u64(&mut r)? as usize;
    if cfg_len > 1 << 20 {
        return Err(Error::Truncated("config block implausibly large".into()));
    }
    let mut cfg_buf = vec![0u8; cfg_len];
    read_or_truncated(&mut r, &mut cfg_buf, "config echo")?;
    let config: TrainConfig = serde_json::from_slice(&cfg_buf)?;

    let n_params = read_u32(&mut r)? as usize;
    let mut names = Vec::with_capacity(n_params);
    let mut shapes = Vec::with_capacity(n_params);
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(Error::Truncated("parameter name implausibly long".into()));
        }
        let mut name_buf = vec![0u8; name_len];
        read_or_truncated(&mut r, &mut name_buf, "parameter name")?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::Truncated("parameter name not utf-8".into()))?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let mut decay = [0u8; 1];
        read_or_truncated(&mut r, &mut decay, "decay flag")?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Truncated("parameter shape overflows".into()))?;
        let mut buf = vec![0u8; n * 4];
        read_or_truncated(&mut r, &mut buf, "parameter values")?;
        values.push(
            buf.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
                .collect(),
        );
        names.push(name);
        shapes.push((rows, cols));
    }

    let model = rebuild_model(&names, &shapes, &values)?;

    let steps_done = read_u64(&mut r)?;
    let mut m = Vec::with_capacity(n_params);
    let mut v = Vec::with_capacity(n_params);
    for &(rows, cols) in &shapes {
        let n = rows * cols;
        let mut read_blob = || -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 4];
            read_or_truncated(&mut r, &mut buf, "optimizer moments")?;
            Ok(buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
                .collect())
        };
        m.push(read_blob()?);
        v.push(read_blob()?);
    }
    let optimizer = OptimizerState { steps_done, m, v };

    let mut seed = [0u8; 32];
    read_or_truncated(&mut r, &mut seed, "rng seed")?;
    let mut stream_buf = [0u8; 8];
    read_or_truncated(&mut r, &mut stream_buf, "rng stream")?;
    let mut pos_buf = [0u8; 16];
    read_or_truncated(&mut r, &mut pos_buf, "rng position")?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(u64::from_le_bytes(stream_buf));
    rng.set_word_pos(u128::from_le_bytes(pos_buf));

    Ok(Checkpoint {
        model,
        config,
        optimizer,
        rng,
    })
}

/// Rebuilds a student model from named checkpoint blobs: the encoder
/// layer chain is recovered from the `enc.{l}.w` shapes, a skeleton is
/// initialized, and every parameter is overwritten from the blobs.
fn rebuild_model(
    names: &[String],
    shapes: &[(usize, usize)],
    values: &[Vec<f64>],
) -> Result<StudentModel> {
    let mut encoder_dims: Vec<usize> = Vec::new();
    let mut d_hat = None;
    let mut d_text = None;
    for (i, name) in names.iter().enumerate() {
        let (rows, cols) = shapes[i];
        if name == "proj_a" {
            d_hat = Some(rows);
        } else if name == "proj_b" {
            d_text = Some(cols);
        } else if name.starts_with("enc.") && name.ends_with(".w") {
            if encoder_dims.is_empty() {
                encoder_dims.push(cols);
            }
            encoder_dims.push(rows);
        }
    }
    let (Some(d_hat), Some(d_text)) = (d_hat, d_text) else {
        return Err(Error::Truncated("checkpoint lacks projection tensors".into()));
    };
    if encoder_dims.len() < 2 {
        return Err(Error::Truncated("checkpoint lacks encoder tensors".into()));
    }
    let cfg = StudentConfig {
        encoder_dims,
        d_hat,
        d_text,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = StudentModel::init(&cfg, None, &mut rng)?;

    let metas = model.param_meta();
    if metas.len() != names.len() {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint has {} tensors, rebuilt model expects {}",
            names.len(),
            metas.len()
        )));
    }
    for (i, meta) in metas.iter().enumerate() {
        if meta.name != names[i] {
            return Err(Error::ShapeMismatch(format!(
                "tensor {} named {:?} in checkpoint, expected {:?}",
                i, names[i], meta.name
            )));
        }
        if (meta.rows, meta.cols) != shapes[i] {
            return Err(Error::ShapeMismatch(format!(
                "tensor {} has shape {:?}, expected {}x{}",
                names[i], shapes[i], meta.rows, meta.cols
            )));
        }
    }
    let mut k = 0usize;
    model.for_each_param_mut(|_, p| {
        p.copy_from_slice(&values[k]);
        k += 1;
    });
    Ok(model)
}

fn read_or_truncated(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::Truncated(what.to_string())
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_or_truncated(r, &mut b, "checkpoint field")?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_or_truncated(r, &mut b, "checkpoint field")?;
    Ok(u64::from_le_bytes(b))
}
