//! Subcommand implementations. Each one reads frozen inputs, derives
//! all randomness from the config's top-level seed, and writes its
//! artifacts without touching any input file.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use vld_core::corpus::{
    self, greedy_select, mmd, reduce_to_k, score_histogram, CorpusKind, CorpusManifest, Kernel,
};
use vld_core::eval::{
    linear_probe_eval, numbered_class_names, robustness_eval, zero_shot_eval, ClassifierHead,
    EvalReport, Split,
};
use vld_core::model::{student_forward, StudentModel};
use vld_core::store::{read_store, write_store};
use vld_core::synth::{make_shifted_variant, make_task, sample_corpora};
use vld_core::tensor::EmbeddingMatrix;
use vld_core::trainer::{read_checkpoint, train, TrainInputs};
use vld_core::Error;

use crate::config::{RunConfig, WorldFile};
use crate::{
    BuildCorpusArgs, DiagnoseArgs, DistillArgs, EmbedArgs, EvalArgs, GenWorldArgs,
};

/// Salt so the student's init stream differs from the batch sampler's.
const STUDENT_INIT_SALT: u64 = 0x7374_7564;

pub fn gen_world(args: &GenWorldArgs) -> anyhow::Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let world = vld_core::synth::make_world(cfg.seed, &cfg.world)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let corpora = sample_corpora(
        &world,
        cfg.corpus.n_images,
        cfg.corpus.n_captions,
        cfg.corpus.n_nlp_pool,
        &args.out,
    )?;
    WorldFile {
        seed: cfg.seed,
        config: cfg.world.clone(),
    }
    .save(&args.out.join("world.json"))?;
    println!(
        "world seed={} classes={} d={} -> {} images, {} captions, {} pool texts in {}",
        cfg.seed,
        cfg.world.classes,
        cfg.world.d,
        corpora.images.size,
        corpora.captions.size,
        corpora.pool.size,
        args.out.display()
    );
    Ok(())
}

pub fn embed(args: &EmbedArgs) -> anyhow::Result<()> {
    let world = WorldFile::load(&args.world)?.regenerate()?;
    let input = read_store(&args.input)?;
    let embedded = if args.texts {
        world.teacher.embed_texts(&input)?
    } else {
        world.teacher.embed_images(&input)?
    };
    write_store(&args.out, &embedded)?;
    println!(
        "embedded {} {} rows ({} -> {}) into {}",
        embedded.rows(),
        if args.texts { "text" } else { "image" },
        input.dim(),
        embedded.dim(),
        args.out.display()
    );
    Ok(())
}

pub fn build_corpus(args: &BuildCorpusArgs) -> anyhow::Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let images = corpus::read_manifest(&args.world_dir.join("images.json"))?;
    let pool = corpus::read_manifest(&args.world_dir.join("pool.json"))?;
    let image_emb = images.load_embeddings()?;
    let pool_emb = pool.load_embeddings()?;
    let pool_raw = read_store(&args.world_dir.join("pool_raw.dfem"))?;

    let selection = greedy_select(&image_emb, &pool_emb, cfg.corpus.progress_floor)?;
    let mut ids = selection.selected_text_ids.clone();
    let mut provenance = format!(
        "greedy visual grounding of pool.json against images.json (floor {}, {} rounds)",
        cfg.corpus.progress_floor, selection.rounds
    );

    if let Some(k) = args.reduce_k {
        let picked = rows_by_id(&pool_emb, &ids)?;
        ids = reduce_to_k(&picked, k, cfg.seed)?;
        provenance.push_str(&format!(", k-means reduced to {k}"));
    }

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let store_path = args.out.join("selected.dfem");
    let selected_emb = rows_by_id(&pool_emb, &ids)?;
    write_store(&store_path, &selected_emb)?;
    let mut manifest = CorpusManifest {
        kind: CorpusKind::Text,
        size: ids.len(),
        embedding_store: store_path.display().to_string(),
        ids,
        provenance,
    };
    // Raw-side companion so downstream training can fetch encoder inputs
    // for every id the manifest lists, prompts included.
    let mut selected_raw = rows_by_id(&pool_raw, &manifest.ids)?;

    if args.task_aware {
        let world = WorldFile::load(&args.world_dir)?.regenerate()?;
        let task = make_task(&world, &cfg.task_spec())?;
        // Prompts carry no ids of their own; stamp fresh ones above
        // everything already present so none are dropped as duplicates.
        // Snap the raws to the f32 grid first so the stored teacher rows
        // match what a reader of the raw store would compute.
        let base = manifest.ids.iter().copied().max().unwrap_or(0) + 1;
        let n_prompts = task.prompts_raw.rows();
        let prompt_ids: Vec<u64> = (0..n_prompts as u64).map(|i| base + i).collect();
        let mut snapped = task.prompts_raw.data().clone();
        snapped.mapv_inplace(|x| x as f32 as f64);
        let prompts_raw = EmbeddingMatrix::with_ids(snapped, prompt_ids)?;
        let prompts = world.teacher.embed_texts(&prompts_raw)?;
        manifest = corpus::augment_task_aware(&manifest, &prompts, &store_path)?;

        let data = ndarray::concatenate(
            Axis(0),
            &[selected_raw.data().view(), prompts_raw.data().view()],
        )?;
        let mut all_ids = selected_raw.ids().expect("pool rows carry ids").to_vec();
        all_ids.extend_from_slice(prompts_raw.ids().expect("prompt rows carry ids"));
        selected_raw = EmbeddingMatrix::with_ids(data, all_ids)?;
    }
    write_store(&args.out.join("selected_raw.dfem"), &selected_raw)?;

    manifest.validate()?;
    corpus::write_manifest(&args.out.join("selected.json"), &manifest)?;
    println!(
        "selected {} of {} pool texts in {} rounds -> {}",
        manifest.size,
        pool.size,
        selection.rounds,
        args.out.join("selected.json").display()
    );
    Ok(())
}

pub fn distill(args: &DistillArgs) -> anyhow::Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let world = WorldFile::load(&args.world_dir)?.regenerate()?;

    let images_path = args.world_dir.join("images.json");
    let images = corpus::read_manifest(&images_path)?;
    let images_teacher = images.load_embeddings()?;
    let images_raw = rows_by_id(&read_store(&raw_sibling(&images_path))?, &images.ids)?;

    let corpus_path = args
        .text_corpus
        .clone()
        .unwrap_or_else(|| args.world_dir.join("captions.json"));
    let texts = corpus::read_manifest(&corpus_path)?;
    let texts_teacher = texts.load_embeddings()?;
    let raw_path = args
        .texts_raw
        .clone()
        .unwrap_or_else(|| raw_sibling(&corpus_path));
    let texts_raw = rows_by_id(&read_store(&raw_path)?, &texts.ids)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ STUDENT_INIT_SALT);
    let student = StudentModel::init(
        &cfg.student_config(),
        Some(world.teacher.proj_b()),
        &mut rng,
    )?;

    let train_cfg = cfg.train_config();
    let inputs = TrainInputs {
        images_teacher: &images_teacher,
        images_raw: &images_raw,
        texts_teacher: &texts_teacher,
        texts_raw: &texts_raw,
        b_dagger: Some(world.teacher.b_dagger()),
    };
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let outcome = train(&inputs, student, &train_cfg, Some(&args.out))?;

    write_json(&args.out.join("loss_log.json"), &outcome.loss_log)?;
    write_json(&args.out.join("train_config.json"), &train_cfg)?;
    let last = outcome.loss_log.last().expect("at least one step");
    println!(
        "trained {} steps on {} images / {} texts, final loss {:.6} -> {}",
        outcome.loss_log.len(),
        images_teacher.rows(),
        texts_teacher.rows(),
        last.loss,
        outcome
            .final_checkpoint
            .as_deref()
            .unwrap_or(Path::new("?"))
            .display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalOutput {
    mode: &'static str,
    path: &'static str,
    seed: u64,
    report: EvalReport,
}

pub fn eval(args: &EvalArgs) -> anyhow::Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let world = WorldFile::load(&args.world_dir)?.regenerate()?;
    let task = make_task(&world, &cfg.task_spec())?;

    // Image and text paths of whichever side is being scored.
    let student = match &args.checkpoint {
        Some(path) => Some(read_checkpoint(path)?.model),
        None => None,
    };
    let path_name: &'static str = if student.is_some() { "student" } else { "teacher" };
    let embed_images = |x: &EmbeddingMatrix| -> vld_core::Result<EmbeddingMatrix> {
        match &student {
            Some(model) => student_forward(model, x).map(|(_, u_hat)| u_hat),
            None => world.teacher.embed_images(x),
        }
    };
    let prompts_embedded = match &student {
        Some(model) => model.proj_b.project(&task.prompts_raw)?,
        None => world.teacher.embed_texts(&task.prompts_raw)?,
    };
    let head = ClassifierHead::from_prompts(
        &prompts_embedded,
        &task.prompt_class,
        numbered_class_names(world.cfg.classes),
    )?;

    let (mode, report) = if args.zero_shot {
        ("zero_shot", zero_shot_eval(embed_images, &head, &task.test)?)
    } else if args.linear_probe {
        let train_emb = embed_images(&task.train.inputs_raw)?;
        let test_emb = embed_images(&task.test.inputs_raw)?;
        let n_train = train_emb.rows();
        let features = EmbeddingMatrix::new(ndarray::concatenate(
            Axis(0),
            &[train_emb.data().view(), test_emb.data().view()],
        )?)?;
        let mut labels = task.train.labels.clone();
        labels.extend_from_slice(&task.test.labels);
        let split = Split {
            train: (0..n_train).collect(),
            test: (n_train..features.rows()).collect(),
        };
        (
            "linear_probe",
            linear_probe_eval(&features, &labels, &split, &cfg.eval.l2_grid)?,
        )
    } else {
        let variants: Vec<_> = cfg
            .eval
            .shift_sigmas
            .iter()
            .enumerate()
            .map(|(i, &sigma)| make_shifted_variant(&world, &task.test, sigma, i as u64))
            .collect();
        ("robustness", robustness_eval(embed_images, &head, &variants)?)
    };

    emit(
        args.out.as_deref(),
        &EvalOutput {
            mode,
            path: path_name,
            seed: cfg.seed,
            report,
        },
    )
}

#[derive(Debug, Serialize)]
struct MmdReport {
    linear: f64,
    polynomial: f64,
    rbf: f64,
    rbf_gamma: f64,
}

#[derive(Debug, Serialize)]
struct HistogramReport {
    bins: usize,
    counts: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct DiagnoseOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    mmd: Option<MmdReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    histogram: Option<HistogramReport>,
}

pub fn diagnose(args: &DiagnoseArgs) -> anyhow::Result<()> {
    let a = embeddings_from(&args.a)?;
    let b = embeddings_from(&args.b)?;
    let mmd_report = if args.mmd {
        Some(MmdReport {
            linear: mmd(&a, &b, Kernel::Linear)?,
            polynomial: mmd(&a, &b, Kernel::Polynomial)?,
            rbf: mmd(&a, &b, Kernel::Rbf { gamma: args.rbf_gamma })?,
            rbf_gamma: args.rbf_gamma,
        })
    } else {
        None
    };
    let histogram = if args.histogram {
        Some(HistogramReport {
            bins: args.bins,
            counts: score_histogram(&a, &b, args.bins)?,
        })
    } else {
        None
    };
    emit(
        args.out.as_deref(),
        &DiagnoseOutput {
            mmd: mmd_report,
            histogram,
        },
    )
}

/// Loads teacher embeddings from either input form the pipeline produces:
/// a corpus manifest (`.json`, store resolved through it) or a bare store.
fn embeddings_from(path: &Path) -> anyhow::Result<EmbeddingMatrix> {
    let emb = if path.extension().is_some_and(|e| e == "json") {
        corpus::read_manifest(path).and_then(|m| m.load_embeddings())
    } else {
        read_store(path)
    };
    emb.with_context(|| format!("loading embeddings from {}", path.display()))
}

/// Raw-side store that accompanies a manifest: `captions.json` pairs with
/// `captions_raw.dfem` in the same directory, and likewise for every corpus.
fn raw_sibling(manifest_path: &Path) -> PathBuf {
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("corpus");
    manifest_path.with_file_name(format!("{stem}_raw.dfem"))
}

/// Picks store rows by stable id, in the order given.
fn rows_by_id(store: &EmbeddingMatrix, ids: &[u64]) -> anyhow::Result<EmbeddingMatrix> {
    let store_ids = store
        .ids()
        .ok_or_else(|| Error::ConfigInvalid("store carries no row ids".into()))?;
    let index: HashMap<u64, usize> = store_ids
        .iter()
        .copied()
        .enumerate()
        .map(|(row, id)| (id, row))
        .collect();
    let mut rows = Vec::with_capacity(ids.len());
    for &id in ids {
        match index.get(&id) {
            Some(&row) => rows.push(row),
            None => bail!("id {id} not present in store"),
        }
    }
    Ok(store.select_rows(&rows))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn emit(out: Option<&Path>, value: &impl Serialize) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)?;
                }
            }
            write_json(path, value)
        }
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn rows_by_id_preserves_requested_order() {
        let data = Array2::from_shape_fn((4, 2), |(i, j)| (i * 2 + j) as f64);
        let store = EmbeddingMatrix::with_ids(data, vec![10, 11, 12, 13]).unwrap();
        let picked = rows_by_id(&store, &[13, 10]).unwrap();
        assert_eq!(picked.ids().unwrap(), &[13, 10]);
        assert_eq!(picked.data()[[0, 0]], 6.0);
        assert_eq!(picked.data()[[1, 0]], 0.0);
        assert!(rows_by_id(&store, &[99]).is_err());
    }

    #[test]
    fn raw_sibling_swaps_the_manifest_suffix() {
        assert_eq!(
            raw_sibling(Path::new("/w/captions.json")),
            Path::new("/w/captions_raw.dfem")
        );
        assert_eq!(
            raw_sibling(Path::new("out/selected.json")),
            Path::new("out/selected_raw.dfem")
        );
    }
}
