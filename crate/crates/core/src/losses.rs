//! Score-matrix distillation losses and the weighted total objective.
//!
//! Every loss returns its scalar value together with exact first
//! derivatives for the student-side inputs (û′, Â, B̂). Teacher
//! embeddings and B† are frozen: no gradient buffer exists for them.
//! Correctness is defined against central finite differences.

use crate::error::{Error, Result};
use crate::model::StudentModel;
use crate::tensor::{dot, score_matrix, EmbeddingMatrix, ProjectionMap, NORM_EPS};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Divide the summed row and column divergences by rows+cols so
    /// gradient scale does not grow with batch size.
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PvlMode {
    /// Pseudo-text targets built from the same image batch (diagonal
    /// kept).
    #[default]
    Intra,
    /// Pseudo-text targets built from an independently sampled second
    /// image batch.
    Inter,
}

/// Weights and temperatures of the total objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu_vl: f64,
    pub mu_pvl: f64,
    pub mu_udist: f64,
    pub pvl_mode: PvlMode,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.3,
            lambda2: 0.5,
            mu_vl: 100.0,
            mu_pvl: 33.3,
            mu_udist: 14.3,
            pvl_mode: PvlMode::Intra,
            reduction: Reduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda1) || !self.lambda1.is_finite() {
            return Err(Error::ConfigInvalid(format!("lambda1 {}", self.lambda1)));
        }
        if self.lambda2 < 0.0 || !self.lambda2.is_finite() {
            return Err(Error::ConfigInvalid(format!("lambda2 {}", self.lambda2)));
        }
        for (name, mu) in [
            ("mu_vl", self.mu_vl),
            ("mu_pvl", self.mu_pvl),
            ("mu_udist", self.mu_udist),
        ] {
            if mu <= 0.0 || !mu.is_finite() {
                return Err(Error::ConfigInvalid(format!("{name} {mu}")));
            }
        }
        Ok(())
    }
}

/// One training batch: frozen teacher embeddings plus the student-side
/// raw inputs. The second image batch feeds inter-mode pseudo-text
/// targets; `b_dagger` is the frozen pseudo-inverse of the teacher's
/// text projection.
#[derive(Debug, Clone, Copy)]
pub struct LossBatch<'a> {
    pub teacher_u: &'a EmbeddingMatrix,
    pub teacher_v: &'a EmbeddingMatrix,
    pub student_u_raw: &'a EmbeddingMatrix,
    pub text_raw: &'a EmbeddingMatrix,
    pub teacher_u_alt: Option<&'a EmbeddingMatrix>,
    pub b_dagger: Option<&'a ProjectionMap>,
}

impl LossBatch<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.teacher_u.rows() < 2 || self.teacher_v.rows() < 2 {
            return Err(Error::ConfigInvalid(format!(
                "batch needs at least 2 rows per side, got {}x{}",
                self.teacher_u.rows(),
                self.teacher_v.rows()
            )));
        }
        if self.student_u_raw.rows() != self.teacher_u.rows() {
            return Err(Error::ShapeMismatch(format!(
                "student rows {} vs teacher rows {}",
                self.student_u_raw.rows(),
                self.teacher_u.rows()
            )));
        }
        if self.text_raw.rows() != self.teacher_v.rows() {
            return Err(Error::ShapeMismatch(format!(
                "text rows {} vs teacher rows {}",
                self.text_raw.rows(),
                self.teacher_v.rows()
            )));
        }
        if self.teacher_u.dim() != self.teacher_v.dim() {
            return Err(Error::DimensionMismatch(format!(
                "teacher dims {} vs {}",
                self.teacher_u.dim(),
                self.teacher_v.dim()
            )));
        }
        if let Some(alt) = self.teacher_u_alt {
            if alt.dim() != self.teacher_u.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "second image batch dim {} vs {}",
                    alt.dim(),
                    self.teacher_u.dim()
                )));
            }
            if alt.rows() < 2 {
                return Err(Error::ConfigInvalid("second image batch needs 2 rows".into()));
            }
        }
        Ok(())
    }
}

/// Scalar loss plus whichever gradients the producing operation owns.
/// Teacher-side quantities never appear here.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    /// d value / d Ŝ, produced by the raw divergence only.
    pub grad_score: Option<Array2<f64>>,
    /// d value / d û′ (pre-projection student image features).
    pub grad_u_raw: Option<Array2<f64>>,
    /// d value / d Â.
    pub grad_proj_a: Option<Array2<f64>>,
    /// d value / d B̂.
    pub grad_proj_b: Option<Array2<f64>>,
}

impl LossOutput {
    fn validated(self, what: &'static str) -> Result<Self> {
        if !self.value.is_finite() {
            return Err(Error::NonFinite(what.into()));
        }
        if self.value < -1e-9 {
            return Err(Error::OutOfRange(format!("{what} value {}", self.value)));
        }
        for g in [
            &self.grad_score,
            &self.grad_u_raw,
            &self.grad_proj_a,
            &self.grad_proj_b,
        ]
        .into_iter()
        .flatten()
        {
            if !g.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFiniteGradient(what.into()));
            }
        }
        Ok(self)
    }
}

/// Row-wise plus column-wise KL between temperature-scaled softmaxes of
/// two score matrices, teacher distribution first. Returns the exact
/// gradient with respect to the student matrix.
pub fn kl_score_divergence(
    s_hat: &crate::tensor::ScoreMatrix,
    s: &crate::tensor::ScoreMatrix,
    mu: f64,
    reduction: Reduction,
) -> Result<LossOutput> {
    if s_hat.rows() != s.rows() || s_hat.cols() != s.cols() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            s_hat.rows(),
            s_hat.cols(),
            s.rows(),
            s.cols()
        )));
    }
    check_mu(mu)?;
    let (value, grad) = kl_and_grad(s_hat.values(), s.values(), mu, reduction);
    LossOutput {
        value,
        grad_score: Some(grad),
        grad_u_raw: None,
        grad_proj_a: None,
        grad_proj_b: None,
    }
    .validated("kl_score_divergence")
}

fn check_mu(mu: f64) -> Result<()> {
    if mu <= 0.0 || !mu.is_finite() {
        return Err(Error::NonPositiveTemperature(mu));
    }
    Ok(())
}

/// Shared KL kernel over raw arrays. Single-element rows or columns
/// contribute zero (a one-logit softmax is always the point mass).
fn kl_and_grad(
    s_hat: &Array2<f64>,
    s: &Array2<f64>,
    mu: f64,
    reduction: Reduction,
) -> (f64, Array2<f64>) {
    let (b1, b2) = s.dim();
    let denom = match reduction {
        Reduction::Mean => (b1 + b2) as f64,
        Reduction::Sum => 1.0,
    };
    let mut value = 0.0;
    let mut grad = Array2::<f64>::zeros((b1, b2));

    let mut lp = vec![0.0f64; b2];
    let mut lq = vec![0.0f64; b2];
    for i in 0..b1 {
        for j in 0..b2 {
            lp[j] = mu * s[(i, j)];
            lq[j] = mu * s_hat[(i, j)];
        }
        log_softmax(&mut lp);
        log_softmax(&mut lq);
        for j in 0..b2 {
            let p = lp[j].exp();
            let q = lq[j].exp();
            value += p * (lp[j] - lq[j]);
            grad[(i, j)] += mu * (q - p);
        }
    }

    let mut lp = vec![0.0f64; b1];
    let mut lq = vec![0.0f64; b1];
    for j in 0..b2 {
        for i in 0..b1 {
            lp[i] = mu * s[(i, j)];
            lq[i] = mu * s_hat[(i, j)];
        }
        log_softmax(&mut lp);
        log_softmax(&mut lq);
        for i in 0..b1 {
            let p = lp[i].exp();
            let q = lq[i].exp();
            value += p * (lp[i] - lq[i]);
            grad[(i, j)] += mu * (q - p);
        }
    }

    value /= denom;
    grad.mapv_inplace(|g| g / denom);
    (value, grad)
}

/// In-place logits → log-probabilities, max-shifted for stability.
fn log_softmax(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter() {
        sum += (v - m).exp();
    }
    let ls = sum.ln() + m;
    for v in z.iter_mut() {
        *v -= ls;
    }
}

/// Image-text score distillation: teacher S from (u, v), student Ŝ
/// from (Â û′, B̂ v′).
pub fn loss_vl(batch: &LossBatch, model: &StudentModel, cfg: &LossConfig) -> Result<LossOutput> {
    batch.validate()?;
    cfg.validate()?;
    check_proj_dims(batch, model)?;

    let s = score_matrix(batch.teacher_u, batch.teacher_v)?.into_values();
    let u_hat = batch.student_u_raw.data().dot(&model.proj_a.matrix().t());
    let v_hat = batch.text_raw.data().dot(&model.proj_b.matrix().t());
    let (xt, xn) = normalize_with_norms(&u_hat)?;
    let (yt, yn) = normalize_with_norms(&v_hat)?;
    let s_hat = scores_from_unit_rows(&xt, &yt);
    let (value, g) = kl_and_grad(&s_hat, &s, cfg.mu_vl, cfg.reduction);

    let g_u_hat = backprop_row_normalize(&g.dot(&yt), &xt, &xn);
    let g_v_hat = backprop_row_normalize(&g.t().dot(&xt), &yt, &yn);
    LossOutput {
        value,
        grad_score: None,
        grad_u_raw: Some(g_u_hat.dot(model.proj_a.matrix())),
        grad_proj_a: Some(g_u_hat.t().dot(batch.student_u_raw.data())),
        grad_proj_b: Some(g_v_hat.t().dot(batch.text_raw.data())),
    }
    .validated("loss_vl")
}

/// Lifts image embeddings into pseudo-text embeddings: B̂ (B† u) per
/// row. With B̂ = B of full row rank this is the identity on u.
pub fn pseudo_text_embedding(
    u: &EmbeddingMatrix,
    b_hat: &ProjectionMap,
    b_dagger: &ProjectionMap,
) -> Result<EmbeddingMatrix> {
    if b_dagger.in_dim() != u.dim() {
        return Err(Error::DimensionMismatch(format!(
            "B† expects dim {}, got {}",
            b_dagger.in_dim(),
            u.dim()
        )));
    }
    if b_hat.in_dim() != b_dagger.out_dim() {
        return Err(Error::DimensionMismatch(format!(
            "B̂ expects dim {}, B† produces {}",
            b_hat.in_dim(),
            b_dagger.out_dim()
        )));
    }
    let lifted = b_dagger.project(u)?;
    b_hat.project(&lifted)
}

/// Pseudo-text score distillation. Teacher matrix is s(u_i, u_j);
/// student matrix scores û against B̂B†u. Gradients flow to û′, Â and
/// B̂ only; B† stays frozen.
pub fn loss_pvl(batch: &LossBatch, model: &StudentModel, cfg: &LossConfig) -> Result<LossOutput> {
    batch.validate()?;
    cfg.validate()?;
    check_proj_dims(batch, model)?;
    let b_dagger = batch
        .b_dagger
        .ok_or_else(|| Error::ConfigInvalid("pseudo-text loss needs B† in the batch".into()))?;
    let u_second = match cfg.pvl_mode {
        PvlMode::Intra => batch.teacher_u,
        PvlMode::Inter => batch.teacher_u_alt.ok_or_else(|| {
            Error::ConfigInvalid("inter mode needs a second image batch".into())
        })?,
    };

    let s = score_matrix(batch.teacher_u, u_second)?.into_values();
    // W = B†u rows, frozen; pseudo-text targets Ṽ = W B̂ᵀ.
    let w = b_dagger.project(u_second)?;
    if model.proj_b.in_dim() != w.dim() {
        return Err(Error::DimensionMismatch(format!(
            "B̂ expects dim {}, B† produces {}",
            model.proj_b.in_dim(),
            w.dim()
        )));
    }
    let v_tilde = w.data().dot(&model.proj_b.matrix().t());
    let u_hat = batch.student_u_raw.data().dot(&model.proj_a.matrix().t());
    let (xt, xn) = normalize_with_norms(&u_hat)?;
    let (yt, yn) = normalize_with_norms(&v_tilde)?;
    let s_hat = scores_from_unit_rows(&xt, &yt);
    let (value, g) = kl_and_grad(&s_hat, &s, cfg.mu_pvl, cfg.reduction);

    let g_u_hat = backprop_row_normalize(&g.dot(&yt), &xt, &xn);
    let g_v_tilde = backprop_row_normalize(&g.t().dot(&xt), &yt, &yn);
    LossOutput {
        value,
        grad_score: None,
        grad_u_raw: Some(g_u_hat.dot(model.proj_a.matrix())),
        grad_proj_a: Some(g_u_hat.t().dot(batch.student_u_raw.data())),
        grad_proj_b: Some(g_v_tilde.t().dot(w.data())),
    }
    .validated("loss_pvl")
}

/// Image-image distance preservation: both score matrices are
/// self-similarities, teacher over u, student over û.
pub fn loss_udist(batch: &LossBatch, model: &StudentModel, cfg: &LossConfig) -> Result<LossOutput> {
    batch.validate()?;
    cfg.validate()?;
    check_proj_dims(batch, model)?;

    let s = score_matrix(batch.teacher_u, batch.teacher_u)?.into_values();
    let u_hat = batch.student_u_raw.data().dot(&model.proj_a.matrix().t());
    let (xt, xn) = normalize_with_norms(&u_hat)?;
    let s_hat = scores_from_unit_rows(&xt, &xt);
    let (value, g) = kl_and_grad(&s_hat, &s, cfg.mu_udist, cfg.reduction);

    // û appears on both sides of every score, so fold the transpose in
    // before the normalization backprop.
    let g_both = &g + &g.t();
    let g_u_hat = backprop_row_normalize(&g_both.dot(&xt), &xt, &xn);
    LossOutput {
        value,
        grad_score: None,
        grad_u_raw: Some(g_u_hat.dot(model.proj_a.matrix())),
        grad_proj_a: Some(g_u_hat.t().dot(batch.student_u_raw.data())),
        grad_proj_b: None,
    }
    .validated("loss_udist")
}

/// Weighted objective (1−λ1)·L_vl + λ1·L_pvl + λ2·L_udist. Terms with
/// zero weight are skipped entirely, so endpoint identities hold
/// bitwise.
pub fn total_loss(batch: &LossBatch, model: &StudentModel, cfg: &LossConfig) -> Result<LossOutput> {
    cfg.validate()?;
    let mut acc = Accum::default();
    let w_vl = 1.0 - cfg.lambda1;
    if w_vl != 0.0 {
        acc.add(w_vl, loss_vl(batch, model, cfg)?);
    }
    if cfg.lambda1 != 0.0 {
        acc.add(cfg.lambda1, loss_pvl(batch, model, cfg)?);
    }
    if cfg.lambda2 != 0.0 {
        acc.add(cfg.lambda2, loss_udist(batch, model, cfg)?);
    }
    acc.into_output().validated("total_loss")
}

#[derive(Default)]
struct Accum {
    value: f64,
    grad_u_raw: Option<Array2<f64>>,
    grad_proj_a: Option<Array2<f64>>,
    grad_proj_b: Option<Array2<f64>>,
}

impl Accum {
    fn add(&mut self, w: f64, out: LossOutput) {
        self.value += w * out.value;
        for (slot, g) in [
            (&mut self.grad_u_raw, out.grad_u_raw),
            (&mut self.grad_proj_a, out.grad_proj_a),
            (&mut self.grad_proj_b, out.grad_proj_b),
        ] {
            if let Some(g) = g {
                match slot {
                    Some(acc) => acc.zip_mut_with(&g, |a, b| *a += w * b),
                    None => *slot = Some(g.mapv(|x| w * x)),
                }
            }
        }
    }

    fn into_output(self) -> LossOutput {
        LossOutput {
            value: self.value,
            grad_score: None,
            grad_u_raw: self.grad_u_raw,
            grad_proj_a: self.grad_proj_a,
            grad_proj_b: self.grad_proj_b,
        }
    }
}

fn check_proj_dims(batch: &LossBatch, model: &StudentModel) -> Result<()> {
    if batch.student_u_raw.dim() != model.proj_a.in_dim() {
        return Err(Error::DimensionMismatch(format!(
            "Â expects dim {}, student features have {}",
            model.proj_a.in_dim(),
            batch.student_u_raw.dim()
        )));
    }
    if batch.text_raw.dim() != model.proj_b.in_dim() {
        return Err(Error::DimensionMismatch(format!(
            "B̂ expects dim {}, text features have {}",
            model.proj_b.in_dim(),
            batch.text_raw.dim()
        )));
    }
    if model.proj_a.out_dim() != model.proj_b.out_dim() {
        return Err(Error::DimensionMismatch(format!(
            "projection out dims differ: {} vs {}",
            model.proj_a.out_dim(),
            model.proj_b.out_dim()
        )));
    }
    Ok(())
}

/// Per-row unit normalization keeping the original norms for the
/// backward pass.
fn normalize_with_norms(x: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
    let (rows, cols) = x.dim();
    let mut out = x.clone();
    let mut norms = vec![0.0f64; rows];
    let flat = out.as_slice_mut().expect("standard layout");
    for i in 0..rows {
        let row = &mut flat[i * cols..(i + 1) * cols];
        let n = dot(row, row).sqrt();
        if n < NORM_EPS {
            return Err(Error::DegenerateRow(i));
        }
        for v in row.iter_mut() {
            *v /= n;
        }
        norms[i] = n;
    }
    Ok((out, norms))
}

/// Cosine scores from already-normalized rows, using the same
/// fixed-order dot kernel as the public score matrix path.
fn scores_from_unit_rows(xt: &Array2<f64>, yt: &Array2<f64>) -> Array2<f64> {
    let (b1, d) = xt.dim();
    let b2 = yt.nrows();
    let xs = xt.as_slice().expect("standard layout");
    let ys = yt.as_slice().expect("standard layout");
    Array2::from_shape_fn((b1, b2), |(i, j)| {
        dot(&xs[i * d..(i + 1) * d], &ys[j * d..(j + 1) * d])
    })
}

/// Backprops x̃ = x/‖x‖ row-wise: dL/dx_i = (g_i − (g_i·x̃_i) x̃_i)/‖x_i‖.
fn backprop_row_normalize(
    g_tilde: &Array2<f64>,
    tilde: &Array2<f64>,
    norms: &[f64],
) -> Array2<f64> {
    let (rows, cols) = tilde.dim();
    let mut out = Array2::<f64>::zeros((rows, cols));
    for i in 0..rows {
        let mut proj = 0.0;
        for j in 0..cols {
            proj += g_tilde[(i, j)] * tilde[(i, j)];
        }
        for j in 0..cols {
            out[(i, j)] = (g_tilde[(i, j)] - proj * tilde[(i, j)]) / norms[i];
        }
    }
    out
}
