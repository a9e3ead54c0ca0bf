//! Downstream scoring of an image-embedding path: zero-shot
//! classification against a prompt-built head, closed-form linear
//! probing, and robustness as the mean over shifted variants.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::LabeledSet;
use crate::tensor::{l2_normalize, EmbeddingMatrix};

/// Unit-normalized class embeddings, one row per class.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    class_embeddings: EmbeddingMatrix,
    class_names: Vec<String>,
}

impl ClassifierHead {
    pub fn from_class_embeddings(
        class_embeddings: &EmbeddingMatrix,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if class_embeddings.rows() < 2 {
            return Err(Error::EmptyInput("classifier needs at least 2 classes"));
        }
        if class_names.len() != class_embeddings.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} class names for {} class embeddings",
                class_names.len(),
                class_embeddings.rows()
            )));
        }
        Ok(ClassifierHead {
            class_embeddings: l2_normalize(class_embeddings)?,
            class_names,
        })
    }

    /// Prompt-ensemble construction: prompts are unit-normalized,
    /// averaged per class, and the means renormalized.
    pub fn from_prompts(
        prompts: &EmbeddingMatrix,
        prompt_class: &[usize],
        class_names: Vec<String>,
    ) -> Result<Self> {
        let c = class_names.len();
        if c < 2 {
            return Err(Error::EmptyInput("classifier needs at least 2 classes"));
        }
        if prompt_class.len() != prompts.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} class tags for {} prompts",
                prompt_class.len(),
                prompts.rows()
            )));
        }
        for &cls in prompt_class {
            if cls >= c {
                return Err(Error::LabelOutOfRange {
                    label: cls,
                    classes: c,
                });
            }
        }
        let normalized = l2_normalize(prompts)?;
        let mut means = Array2::zeros((c, prompts.dim()));
        let mut counts = vec![0usize; c];
        for (row, &cls) in normalized.data().rows().into_iter().zip(prompt_class) {
            let mut mean_row = means.row_mut(cls);
            mean_row += &row;
            counts[cls] += 1;
        }
        for (cls, &n) in counts.iter().enumerate() {
            if n == 0 {
                return Err(Error::EmptyInput("every class needs at least one prompt"));
            }
            let mut mean_row = means.row_mut(cls);
            mean_row /= n as f64;
        }
        let head = l2_normalize(&EmbeddingMatrix::new(means)?)?;
        Ok(ClassifierHead {
            class_embeddings: head,
            class_names,
        })
    }

    pub fn classes(&self) -> usize {
        self.class_embeddings.rows()
    }

    pub fn dim(&self) -> usize {
        self.class_embeddings.dim()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.class_embeddings
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Indexed by class; `None` when the class never appears.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub n_samples: usize,
}

/// Argmax over each row; ties go to the lowest column index.
fn argmax_rows(scores: &ArrayView2<f64>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            let mut best_score = row[0];
            for (j, &s) in row.iter().enumerate().skip(1) {
                if s > best_score {
                    best = j;
                    best_score = s;
                }
            }
            best
        })
        .collect()
}

fn report_from_predictions(
    predictions: &[usize],
    labels: &[usize],
    classes: usize,
) -> EvalReport {
    let mut correct = vec![0usize; classes];
    let mut total = vec![0usize; classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        total[y] += 1;
        if p == y {
            correct[y] += 1;
        }
    }
    let n: usize = total.iter().sum();
    let hits: usize = correct.iter().sum();
    EvalReport {
        accuracy: hits as f64 / n as f64,
        per_class_accuracy: correct
            .iter()
            .zip(&total)
            .map(|(&c, &t)| (t > 0).then(|| c as f64 / t as f64))
            .collect(),
        n_samples: n,
    }
}

/// Class predictions for already-embedded images. Cosine similarity
/// against unit head rows reduces to a dot product, and the argmax is
/// invariant to any positive per-image rescaling.
pub fn zero_shot_predict(
    head: &ClassifierHead,
    embedded: &EmbeddingMatrix,
) -> Result<Vec<usize>> {
    if embedded.dim() != head.dim() {
        return Err(Error::DimensionMismatch(format!(
            "head dim {} vs embedding dim {}",
            head.dim(),
            embedded.dim()
        )));
    }
    let scores = embedded.data().dot(&head.class_embeddings.data().t());
    Ok(argmax_rows(&scores.view()))
}

pub fn zero_shot_eval<F>(
    embed_fn: F,
    head: &ClassifierHead,
    set: &LabeledSet,
) -> Result<EvalReport>
where
    F: Fn(&EmbeddingMatrix) -> Result<EmbeddingMatrix>,
{
    if set.labels.is_empty() {
        return Err(Error::EmptyInput("labeled set"));
    }
    if set.labels.len() != set.inputs_raw.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} rows",
            set.labels.len(),
            set.inputs_raw.rows()
        )));
    }
    for &y in &set.labels {
        if y >= head.classes() {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: head.classes(),
            });
        }
    }
    let embedded = embed_fn(&set.inputs_raw)?;
    if embedded.rows() != set.labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "embedder returned {} rows for {} inputs",
            embedded.rows(),
            set.labels.len()
        )));
    }
    let predictions = zero_shot_predict(head, &embedded)?;
    Ok(report_from_predictions(
        &predictions,
        &set.labels,
        head.classes(),
    ))
}

/// Row indices into a shared feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Closed-form ridge probe over one-hot targets: a bias column is
/// appended (and penalized like the rest), each `l2_grid` entry is
/// fitted on the leading 75% of the train split and scored on the
/// trailing 25%, and the winner is refitted on the full train split.
/// Grid ties keep the earliest entry.
pub fn linear_probe_eval(
    features: &EmbeddingMatrix,
    labels: &[usize],
    split: &Split,
    l2_grid: &[f64],
) -> Result<EvalReport> {
    if labels.len() != features.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.rows()
        )));
    }
    if l2_grid.is_empty() {
        return Err(Error::ConfigInvalid("ridge grid is empty".into()));
    }
    for &l2 in l2_grid {
        if !(l2.is_finite() && l2 >= 0.0) {
            return Err(Error::ConfigInvalid(format!(
                "ridge strength must be >= 0, got {l2}"
            )));
        }
    }
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::EmptyInput("probe split"));
    }
    for &i in split.train.iter().chain(&split.test) {
        if i >= features.rows() {
            return Err(Error::OutOfRange(format!(
                "split row {i} outside 0..{}",
                features.rows()
            )));
        }
    }
    let classes = labels.iter().copied().max().expect("non-empty") + 1;
    if classes < 2 {
        return Err(Error::DegenerateSplit("single class in data".into()));
    }

    let val_n = (split.train.len() / 4).max(1);
    if val_n >= split.train.len() {
        return Err(Error::DegenerateSplit(
            "train split too small for a validation fold".into(),
        ));
    }
    let (fit_idx, val_idx) = split.train.split_at(split.train.len() - val_n);
    let fit_classes: std::collections::BTreeSet<usize> =
        fit_idx.iter().map(|&i| labels[i]).collect();
    if fit_classes.len() < 2 {
        return Err(Error::DegenerateSplit(
            "fitting fold holds fewer than 2 classes".into(),
        ));
    }

    let design = |idx: &[usize]| -> Array2<f64> {
        let d = features.dim();
        let mut x = Array2::ones((idx.len(), d + 1));
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r)
                .slice_mut(ndarray::s![..d])
                .assign(&features.data().row(i));
        }
        x
    };
    let one_hot = |idx: &[usize]| -> Array2<f64> {
        let mut y = Array2::zeros((idx.len(), classes));
        for (r, &i) in idx.iter().enumerate() {
            y[[r, labels[i]]] = 1.0;
        }
        y
    };
    let accuracy_count = |x: &Array2<f64>, w: &Array2<f64>, idx: &[usize]| -> usize {
        let scores = x.dot(w);
        argmax_rows(&scores.view())
            .iter()
            .zip(idx)
            .filter(|(&p, &i)| p == labels[i])
            .count()
    };

    let x_fit = design(fit_idx);
    let y_fit = one_hot(fit_idx);
    let x_val = design(val_idx);

    let mut best = None;
    for &l2 in l2_grid {
        let w = ridge_fit(&x_fit, &y_fit, l2)?;
        let hits = accuracy_count(&x_val, &w, val_idx);
        let better = match best {
            None => true,
            Some((best_hits, _)) => hits > best_hits,
        };
        if better {
            best = Some((hits, l2));
        }
    }
    let (_, best_l2) = best.expect("grid validated non-empty");

    let x_train = design(&split.train);
    let y_train = one_hot(&split.train);
    let w = ridge_fit(&x_train, &y_train, best_l2)?;
    let x_test = design(&split.test);
    let scores = x_test.dot(&w);
    let predictions = argmax_rows(&scores.view());
    let test_labels: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();
    Ok(report_from_predictions(&predictions, &test_labels, classes))
}

/// Solves (XᵀX + λI) W = XᵀY by Cholesky.
fn ridge_fit(x: &Array2<f64>, y: &Array2<f64>, l2: f64) -> Result<Array2<f64>> {
    let mut gram = x.t().dot(x);
    for i in 0..gram.nrows() {
        gram[[i, i]] += l2;
    }
    cholesky_solve(&gram, &x.t().dot(y))
}

/// Dense Cholesky solve for a symmetric positive-definite system.
fn cholesky_solve(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    debug_assert_eq!(a.ncols(), n);
    debug_assert_eq!(b.nrows(), n);
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag.is_finite() && diag > 0.0) {
            return Err(Error::NumericalFailure);
        }
        let root = diag.sqrt();
        l[[j, j]] = root;
        for i in (j + 1)..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = v / root;
        }
    }
    // L z = b, then Lᵀ w = z, column by column.
    let m = b.ncols();
    let mut out = b.clone();
    for c in 0..m {
        for i in 0..n {
            let mut v = out[[i, c]];
            for k in 0..i {
                v -= l[[i, k]] * out[[k, c]];
            }
            out[[i, c]] = v / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut v = out[[i, c]];
            for k in (i + 1)..n {
                v -= l[[k, i]] * out[[k, c]];
            }
            out[[i, c]] = v / l[[i, i]];
        }
    }
    Ok(out)
}

/// Mean zero-shot accuracy over shifted variants. Per-class entries
/// average over the variants where the class appears; sample counts
/// sum.
pub fn robustness_eval<F>(
    embed_fn: F,
    head: &ClassifierHead,
    variants: &[LabeledSet],
) -> Result<EvalReport>
where
    F: Fn(&EmbeddingMatrix) -> Result<EmbeddingMatrix>,
{
    if variants.is_empty() {
        return Err(Error::EmptyInput("robustness variants"));
    }
    let mut acc_sum = 0.0;
    let mut n_samples = 0usize;
    let mut per_class_sum = vec![0.0f64; head.classes()];
    let mut per_class_n = vec![0usize; head.classes()];
    for set in variants {
        let report = zero_shot_eval(&embed_fn, head, set)?;
        acc_sum += report.accuracy;
        n_samples += report.n_samples;
        for (c, entry) in report.per_class_accuracy.iter().enumerate() {
            if let Some(a) = entry {
                per_class_sum[c] += a;
                per_class_n[c] += 1;
            }
        }
    }
    Ok(EvalReport {
        accuracy: acc_sum / variants.len() as f64,
        per_class_accuracy: per_class_sum
            .iter()
            .zip(&per_class_n)
            .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
            .collect(),
        n_samples,
    })
}

/// `class0`, `class1`, ... for heads built from synthetic worlds.
pub fn numbered_class_names(classes: usize) -> Vec<String> {
    (0..classes).map(|c| format!("class{c}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn embedding(data: Array2<f64>) -> EmbeddingMatrix {
        EmbeddingMatrix::new(data).unwrap()
    }

    fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
    }

    fn identity_embed(x: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        Ok(x.clone())
    }

    #[test]
    fn exact_class_samples_score_perfectly() {
        let samples = embedding(arr2(&[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 0.5]]));
        let head =
            ClassifierHead::from_class_embeddings(&samples, numbered_class_names(3)).unwrap();
        let set = LabeledSet {
            inputs_raw: samples,
            labels: vec![0, 1, 2],
        };
        let report = zero_shot_eval(identity_embed, &head, &set).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.n_samples, 3);
        assert_eq!(report.per_class_accuracy, vec![Some(1.0); 3]);
    }

    #[test]
    fn predictions_survive_positive_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let class_emb = embedding(gaussian(&mut rng, 6, 12));
        let head =
            ClassifierHead::from_class_embeddings(&class_emb, numbered_class_names(6)).unwrap();

        let mut scaled_rows = class_emb.data().clone();
        for (i, scale) in [3.0, 0.25, 7.0, 1.0, 0.01, 40.0].iter().enumerate() {
            let mut row = scaled_rows.row_mut(i);
            row *= *scale;
        }
        let scaled_head =
            ClassifierHead::from_class_embeddings(&embedding(scaled_rows), numbered_class_names(6))
                .unwrap();

        let images = embedding(gaussian(&mut rng, 200, 12));
        let base = zero_shot_predict(&head, &images).unwrap();
        assert_eq!(base, zero_shot_predict(&scaled_head, &images).unwrap());

        // Per-image rescaling is just as irrelevant.
        let mut scaled_images = images.data().clone();
        for (i, mut row) in scaled_images.rows_mut().into_iter().enumerate() {
            row *= 0.1 + (i % 7) as f64;
        }
        assert_eq!(
            base,
            zero_shot_predict(&head, &embedding(scaled_images)).unwrap()
        );
    }

    #[test]
    fn tied_scores_pick_the_lowest_class() {
        let dup = embedding(arr2(&[[0.0, 1.0], [0.0, 1.0], [1.0, 0.0]]));
        let head = ClassifierHead::from_class_embeddings(&dup, numbered_class_names(3)).unwrap();
        let images = embedding(arr2(&[[0.0, 5.0]]));
        assert_eq!(zero_shot_predict(&head, &images).unwrap(), vec![0]);
    }

    #[test]
    fn random_head_scores_at_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let head = ClassifierHead::from_class_embeddings(
            &embedding(gaussian(&mut rng, 10, 16)),
            numbered_class_names(10),
        )
        .unwrap();
        let n = 10_000;
        let set = LabeledSet {
            inputs_raw: embedding(gaussian(&mut rng, n, 16)),
            labels: (0..n).map(|_| rng.random_range(0..10)).collect(),
        };
        let report = zero_shot_eval(identity_embed, &head, &set).unwrap();
        assert!(
            (report.accuracy - 0.1).abs() <= 0.02,
            "chance-level accuracy came out {}",
            report.accuracy
        );
    }

    #[test]
    fn prompt_head_recovers_axis_classes() {
        // Prompts per class scatter around an axis; the mean sits on it.
        let prompts = embedding(arr2(&[
            [1.0, 0.2, 0.0],
            [1.0, -0.2, 0.0],
            [0.0, 1.0, 0.1],
            [0.0, 1.0, -0.1],
        ]));
        let head =
            ClassifierHead::from_prompts(&prompts, &[0, 0, 1, 1], numbered_class_names(2))
                .unwrap();
        // Opposing off-axis parts cancel in the mean; renormalizing
        // leaves exactly the axis.
        let e = head.embeddings().data();
        assert!((e[[0, 0]] - 1.0).abs() < 1e-12);
        assert!(e[[0, 1]].abs() < 1e-12);
        assert!((e[[1, 1]] - 1.0).abs() < 1e-12);
        assert!(e[[1, 2]].abs() < 1e-12);

        let missing =
            ClassifierHead::from_prompts(&prompts, &[0, 0, 0, 0], numbered_class_names(2));
        assert!(matches!(missing, Err(Error::EmptyInput(_))));
    }

    #[test]
    fn label_and_dimension_errors_surface() {
        let head = ClassifierHead::from_class_embeddings(
            &embedding(arr2(&[[1.0, 0.0], [0.0, 1.0]])),
            numbered_class_names(2),
        )
        .unwrap();
        let set = LabeledSet {
            inputs_raw: embedding(arr2(&[[1.0, 0.0]])),
            labels: vec![2],
        };
        assert!(matches!(
            zero_shot_eval(identity_embed, &head, &set),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
        let wide = embedding(arr2(&[[1.0, 0.0, 0.0]]));
        assert!(matches!(
            zero_shot_predict(&head, &wide),
            Err(Error::DimensionMismatch(_))
        ));
    }

    fn two_blob_data(
        rng: &mut ChaCha8Rng,
        n_per: usize,
        gap: f64,
    ) -> (EmbeddingMatrix, Vec<usize>) {
        let d = 8;
        let mut x = Array2::zeros((2 * n_per, d));
        let mut labels = Vec::with_capacity(2 * n_per);
        for i in 0..2 * n_per {
            // Pairs alternate so even/odd splits see both classes.
            let cls = (i / 2) % 2;
            let sign = if cls == 0 { -1.0 } else { 1.0 };
            for j in 0..d {
                let noise: f64 = StandardNormal.sample(rng);
                x[[i, j]] = noise + if j == 0 { sign * gap } else { 0.0 };
            }
            labels.push(cls);
        }
        (embedding(x), labels)
    }

    fn even_split(n: usize) -> Split {
        Split {
            train: (0..n).filter(|i| i % 2 == 0).collect(),
            test: (0..n).filter(|i| i % 2 == 1).collect(),
        }
    }

    #[test]
    fn separable_blobs_probe_to_perfect_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (x, y) = two_blob_data(&mut rng, 100, 8.0);
        let report =
            linear_probe_eval(&x, &y, &even_split(200), &[1e-3, 1e-1, 1.0]).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.n_samples, 100);
    }

    #[test]
    fn shuffled_labels_probe_to_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (x, mut y) = two_blob_data(&mut rng, 500, 8.0);
        use rand::seq::SliceRandom;
        y.shuffle(&mut rng);
        let report =
            linear_probe_eval(&x, &y, &even_split(1000), &[1e-2, 1.0]).unwrap();
        assert!(
            (report.accuracy - 0.5).abs() <= 0.05,
            "shuffled labels gave {}",
            report.accuracy
        );
    }

    #[test]
    fn probe_matches_normal_equations_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (x, y) = two_blob_data(&mut rng, 10, 2.0);
        let split = even_split(20);
        let l2 = 0.37;
        let report = linear_probe_eval(&x, &y, &split, &[l2]).unwrap();

        // Direct solve with the SVD pseudo-inverse on the same design.
        let d = x.dim();
        let design = |idx: &[usize]| {
            let mut m = Array2::ones((idx.len(), d + 1));
            for (r, &i) in idx.iter().enumerate() {
                m.row_mut(r)
                    .slice_mut(ndarray::s![..d])
                    .assign(&x.data().row(i));
            }
            m
        };
        let xt = design(&split.train);
        let mut yt = Array2::zeros((split.train.len(), 2));
        for (r, &i) in split.train.iter().enumerate() {
            yt[[r, y[i]]] = 1.0;
        }
        let mut gram = xt.t().dot(&xt);
        for i in 0..d + 1 {
            gram[[i, i]] += l2;
        }
        let w = crate::tensor::pinv(&gram).unwrap().dot(&xt.t().dot(&yt));
        let scores = design(&split.test).dot(&w);
        let oracle_preds = argmax_rows(&scores.view());
        let oracle_hits = oracle_preds
            .iter()
            .zip(&split.test)
            .filter(|(&p, &i)| p == y[i])
            .count();
        assert_eq!(report.accuracy, oracle_hits as f64 / split.test.len() as f64);
    }

    #[test]
    fn cholesky_agrees_with_pinv() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let g = gaussian(&mut rng, 9, 6);
            let mut a = g.t().dot(&g);
            for i in 0..6 {
                a[[i, i]] += 0.5;
            }
            let b = gaussian(&mut rng, 6, 3);
            let fast = cholesky_solve(&a, &b).unwrap();
            let slow = crate::tensor::pinv(&a).unwrap().dot(&b);
            for (u, v) in fast.iter().zip(slow.iter()) {
                assert!((u - v).abs() < 1e-8, "{u} vs {v}");
            }
        }
        let not_pd = arr2(&[[1.0, 2.0], [2.0, 1.0]]);
        assert!(matches!(
            cholesky_solve(&not_pd, &Array2::eye(2)),
            Err(Error::NumericalFailure)
        ));
    }

    #[test]
    fn grid_ties_keep_the_earliest_lambda() {
        // Wide-margin data: every lambda reaches perfect validation
        // accuracy, so the search must settle on the first entry. A
        // huge later lambda would shrink weights but not the tie.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (x, y) = two_blob_data(&mut rng, 40, 10.0);
        let split = even_split(80);
        let a = linear_probe_eval(&x, &y, &split, &[1e-3, 1e6]).unwrap();
        let b = linear_probe_eval(&x, &y, &split, &[1e-3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_splits_are_rejected() {
        let x = embedding(arr2(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.2]]));
        // Single class overall.
        let err = linear_probe_eval(
            &x,
            &[0, 0, 0, 0],
            &Split {
                train: vec![0, 1, 2],
                test: vec![3],
            },
            &[0.1],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateSplit(_)));
        // Fitting fold sees one class: train = [class0, class0, class1]
        // puts the lone class1 row into the validation fold.
        let err = linear_probe_eval(
            &x,
            &[0, 0, 1, 1],
            &Split {
                train: vec![0, 1, 2],
                test: vec![3],
            },
            &[0.1],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateSplit(_)));
        // One-row train split cannot spare a validation fold.
        let err = linear_probe_eval(
            &x,
            &[0, 1, 0, 1],
            &Split {
                train: vec![0],
                test: vec![3],
            },
            &[0.1],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateSplit(_)));
        // Empty grid.
        let err = linear_probe_eval(
            &x,
            &[0, 1, 0, 1],
            &Split {
                train: vec![0, 1, 2],
                test: vec![3],
            },
            &[],
        )
        .unwrap_err();
        assert!(matches!(err, Error::ConfigInvalid(_)));
    }

    #[test]
    fn probe_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let (x, y) = two_blob_data(&mut rng, 50, 1.0);
        let split = even_split(100);
        let grid = [1e-3, 1e-2, 1e-1, 1.0];
        let a = linear_probe_eval(&x, &y, &split, &grid).unwrap();
        let b = linear_probe_eval(&x, &y, &split, &grid).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.accuracy.to_bits(), b.accuracy.to_bits());
    }

    #[test]
    fn robustness_over_one_variant_is_plain_zero_shot() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = ClassifierHead::from_class_embeddings(
            &embedding(gaussian(&mut rng, 4, 8)),
            numbered_class_names(4),
        )
        .unwrap();
        let set = LabeledSet {
            inputs_raw: embedding(gaussian(&mut rng, 60, 8)),
            labels: (0..60).map(|i| i % 4).collect(),
        };
        let base = zero_shot_eval(identity_embed, &head, &set).unwrap();
        let robust = robustness_eval(identity_embed, &head, &[set]).unwrap();
        assert_eq!(base, robust);
    }

    #[test]
    fn robustness_is_the_arithmetic_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let head = ClassifierHead::from_class_embeddings(
            &embedding(gaussian(&mut rng, 5, 10)),
            numbered_class_names(5),
        )
        .unwrap();
        let variants: Vec<LabeledSet> = (0..5)
            .map(|_| LabeledSet {
                inputs_raw: embedding(gaussian(&mut rng, 40, 10)),
                labels: (0..40).map(|i| i % 5).collect(),
            })
            .collect();
        let individual: Vec<f64> = variants
            .iter()
            .map(|v| zero_shot_eval(identity_embed, &head, v).unwrap().accuracy)
            .collect();
        let robust = robustness_eval(identity_embed, &head, &variants).unwrap();
        let mean = individual.iter().sum::<f64>() / 5.0;
        assert_eq!(robust.accuracy.to_bits(), mean.to_bits());
        assert_eq!(robust.n_samples, 200);

        // A chance-level variant drags the mean down by (acc - chance)/n.
        let base = &variants[0];
        let base_acc = individual[0];
        let noise_acc = individual[1];
        let mixed = robustness_eval(
            identity_embed,
            &head,
            &[base.clone(), variants[1].clone()],
        )
        .unwrap();
        assert!((mixed.accuracy - (base_acc - (base_acc - noise_acc) / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn reports_serialize_cleanly() {
        let report = EvalReport {
            accuracy: 0.75,
            per_class_accuracy: vec![Some(1.0), None, Some(0.5)],
            n_samples: 8,
        };
        let text = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&text).unwrap();
        assert_eq!(report, back);
    }
}
