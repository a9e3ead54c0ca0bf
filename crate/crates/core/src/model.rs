//! Student model: a small MLP encoder over precomputed raw features
//! plus two trainable linear projections. The teacher's encoder reuses
//! the same MLP type with a different activation.

use crate::error::{Error, Result};
use crate::tensor::{svd, EmbeddingMatrix, ProjectionMap};
use ndarray::{Array2, ArrayView2};
use rand::Rng;

const GELU_C: f64 = 0.044715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Gelu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Gelu => {
                let s = SQRT_2_OVER_PI * (z + GELU_C * z * z * z);
                0.5 * z * (1.0 + s.tanh())
            }
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Gelu => {
                let s = SQRT_2_OVER_PI * (z + GELU_C * z * z * z);
                let t = s.tanh();
                let ds = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * z * z);
                0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * ds
            }
        }
    }
}

/// One dense layer, weights stored `out × in`, applied to row vectors
/// as `x Wᵀ + b`.
#[derive(Debug, Clone)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Vec<f64>,
}

/// Multilayer perceptron. The activation sits between layers; the last
/// layer is linear, and zero hidden layers degrade to a single affine
/// map.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Forward intermediates needed for the backward pass.
pub struct MlpCache {
    input: Array2<f64>,
    /// Pre-activation output of every layer.
    pre: Vec<Array2<f64>>,
    /// Post-activation output of every layer except the last.
    post: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.pre.last().expect("at least one layer")
    }
}

pub struct MlpGrads {
    pub layers: Vec<(Array2<f64>, Vec<f64>)>,
}

impl Mlp {
    /// Fan-in scaled uniform init over the given layer widths
    /// `[in, hidden.., out]`.
    pub fn init(dims: &[usize], activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::ConfigInvalid(format!("bad encoder dims {dims:?}")));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                (rng.random::<f64>() * 2.0 - 1.0) * limit
            });
            let b = (0..fan_out)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit)
                .collect();
            layers.push(Layer { w, b });
        }
        Ok(Self { layers, activation })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().expect("nonempty").w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty").w.nrows()
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut cache = self.forward_cached(x)?;
        Ok(cache.pre.pop().expect("at least one layer"))
    }

    pub fn forward_cached(&self, x: &ArrayView2<f64>) -> Result<MlpCache> {
        if x.ncols() != self.in_dim() {
            return Err(Error::DimensionMismatch(format!(
                "encoder expects dim {}, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        let input = x.to_owned();
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut a = input.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.w.t());
            for mut row in z.rows_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v += layer.b[j];
                }
            }
            let last = l + 1 == self.layers.len();
            if !last {
                let act = z.mapv(|v| self.activation.apply(v));
                post.push(act.clone());
                a = act;
            }
            pre.push(z);
        }
        Ok(MlpCache { input, pre, post })
    }

    /// Parameter gradients given `dL/d(output)`; inputs receive no
    /// gradient (they are precomputed features, not parameters).
    pub fn backward(&self, cache: &MlpCache, grad_out: &Array2<f64>) -> MlpGrads {
        let k = self.layers.len();
        let mut grads: Vec<(Array2<f64>, Vec<f64>)> = Vec::with_capacity(k);
        let mut g = grad_out.clone();
        for l in (0..k).rev() {
            let a_in = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            let gw = g.t().dot(a_in);
            let gb: Vec<f64> = (0..g.ncols()).map(|j| g.column(j).sum()).collect();
            grads.push((gw, gb));
            if l > 0 {
                let ga = g.dot(&self.layers[l].w);
                let z = &cache.pre[l - 1];
                g = Array2::from_shape_fn(ga.dim(), |(i, j)| {
                    ga[(i, j)] * self.activation.derivative(z[(i, j)])
                });
            }
        }
        grads.reverse();
        MlpGrads { layers: grads }
    }
}

/// Trainable student: encoder producing û′, projection into the shared
/// space (û = Â û′), and the text-side projection (v̂ = B̂ v′).
#[derive(Debug, Clone)]
pub struct StudentModel {
    pub encoder: Mlp,
    pub proj_a: ProjectionMap,
    pub proj_b: ProjectionMap,
}

/// Widths and dimensions for [`StudentModel::init`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StudentConfig {
    /// Encoder layer widths `[d_raw, hidden.., d̂^v]`.
    pub encoder_dims: Vec<usize>,
    /// Shared embedding dimension d̂.
    pub d_hat: usize,
    /// Text feature dimension d^l (input of B̂).
    pub d_text: usize,
}

impl StudentModel {
    /// Initializes encoder weights fan-in uniform and the projections
    /// semi-orthogonal. When the teacher text projection has exactly
    /// the student's shape it is copied verbatim, which makes the
    /// pseudo-text path exact at step zero.
    pub fn init(
        cfg: &StudentConfig,
        teacher_b: Option<&ProjectionMap>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let encoder = Mlp::init(&cfg.encoder_dims, Activation::Gelu, rng)?;
        let d_v_hat = encoder.out_dim();
        let proj_a = ProjectionMap::new(orthogonal_random(cfg.d_hat, d_v_hat, rng)?)?;
        let proj_b = match teacher_b {
            Some(b) if b.out_dim() == cfg.d_hat && b.in_dim() == cfg.d_text => b.clone(),
            _ => ProjectionMap::new(orthogonal_random(cfg.d_hat, cfg.d_text, rng)?)?,
        };
        Ok(Self { encoder, proj_a, proj_b })
    }

    /// Fixed traversal order for parameters; optimizer state and
    /// checkpoints index into this order.
    pub fn param_meta(&self) -> Vec<ParamMeta> {
        let mut out = Vec::new();
        for (l, layer) in self.encoder.layers.iter().enumerate() {
            out.push(ParamMeta {
                name: format!("enc.{l}.w"),
                rows: layer.w.nrows(),
                cols: layer.w.ncols(),
                decay: true,
            });
            out.push(ParamMeta {
                name: format!("enc.{l}.b"),
                rows: 1,
                cols: layer.b.len(),
                decay: false,
            });
        }
        out.push(ParamMeta {
            name: "proj_a".into(),
            rows: self.proj_a.out_dim(),
            cols: self.proj_a.in_dim(),
            decay: true,
        });
        out.push(ParamMeta {
            name: "proj_b".into(),
            rows: self.proj_b.out_dim(),
            cols: self.proj_b.in_dim(),
            decay: true,
        });
        out
    }

    pub fn for_each_param(&self, mut f: impl FnMut(&str, &[f64])) {
        for (l, layer) in self.encoder.layers.iter().enumerate() {
            f(&format!("enc.{l}.w"), layer.w.as_slice().expect("layout"));
            f(&format!("enc.{l}.b"), &layer.b);
        }
        f("proj_a", self.proj_a.matrix().as_slice().expect("layout"));
        f("proj_b", self.proj_b.matrix().as_slice().expect("layout"));
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        for (l, layer) in self.encoder.layers.iter_mut().enumerate() {
            f(&format!("enc.{l}.w"), layer.w.as_slice_mut().expect("layout"));
            f(&format!("enc.{l}.b"), &mut layer.b);
        }
        f("proj_a", self.proj_a.matrix_mut().as_slice_mut().expect("layout"));
        f("proj_b", self.proj_b.matrix_mut().as_slice_mut().expect("layout"));
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamMeta {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub decay: bool,
}

/// Flat per-tensor gradients in [`StudentModel::param_meta`] order.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub tensors: Vec<Vec<f64>>,
}

impl ModelGrads {
    pub fn assemble(enc: MlpGrads, grad_a: &Array2<f64>, grad_b: &Array2<f64>) -> Self {
        let mut tensors = Vec::with_capacity(enc.layers.len() * 2 + 2);
        for (gw, gb) in enc.layers {
            tensors.push(gw.into_raw_vec_and_offset().0);
            tensors.push(gb);
        }
        tensors.push(grad_a.iter().copied().collect());
        tensors.push(grad_b.iter().copied().collect());
        Self { tensors }
    }
}

/// Semi-orthogonal `rows × cols` matrix from a Gaussian draw: the
/// shorter side comes out orthonormal.
fn orthogonal_random(rows: usize, cols: usize, rng: &mut impl Rng) -> Result<Array2<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    let g = Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng));
    let d = svd(&g)?;
    Ok(d.u.dot(&d.v.t()))
}

/// Runs the encoder and the shared-space projection: returns
/// `(û′, û)` with shapes `B × d̂^v` and `B × d̂`.
pub fn student_forward(
    model: &StudentModel,
    x_raw: &EmbeddingMatrix,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    let u_prime = model.encoder.forward(&x_raw.data().view())?;
    let u_prime = EmbeddingMatrix::new(u_prime)?;
    let u_hat = model.proj_a.project(&u_prime)?;
    Ok((u_prime, u_hat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_hidden_encoder_is_affine() {
        let mlp = Mlp {
            layers: vec![Layer {
                w: arr2(&[[1.0, 2.0], [0.0, -1.0], [3.0, 0.0]]),
                b: vec![0.5, 0.0, -0.5],
            }],
            activation: Activation::Gelu,
        };
        let x = arr2(&[[1.0, 1.0]]);
        let y = mlp.forward(&x.view()).unwrap();
        assert_eq!(y[(0, 0)], 3.5);
        assert_eq!(y[(0, 1)], -1.0);
        assert_eq!(y[(0, 2)], 2.5);
    }

    #[test]
    fn forward_is_deterministic_and_batched() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::init(&[5, 7, 3], Activation::Gelu, &mut rng).unwrap();
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i * 5 + j) as f64 * 0.1 - 1.0);
        let a = mlp.forward(&x.view()).unwrap();
        let b = mlp.forward(&x.view()).unwrap();
        assert_eq!(a.nrows(), 4);
        assert_eq!(a.ncols(), 3);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn input_dim_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::init(&[5, 3], Activation::Tanh, &mut rng).unwrap();
        let x = Array2::<f64>::zeros((2, 4));
        assert!(matches!(
            mlp.forward(&x.view()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for act in [Activation::Tanh, Activation::Gelu] {
            let mut mlp = Mlp::init(&[3, 4, 2], act, &mut rng).unwrap();
            let x = Array2::from_shape_fn((5, 3), |(i, j)| ((i + 2 * j) as f64).sin());
            // Scalar objective: sum of squares of outputs.
            let loss = |m: &Mlp| -> f64 {
                let y = m.forward(&x.view()).unwrap();
                y.iter().map(|v| v * v).sum()
            };
            let cache = mlp.forward_cached(&x.view()).unwrap();
            let grad_out = cache.output().mapv(|v| 2.0 * v);
            let grads = mlp.backward(&cache, &grad_out);

            let eps = 1e-6;
            for l in 0..mlp.layers.len() {
                let (rows, cols) = mlp.layers[l].w.dim();
                for r in 0..rows {
                    for c in 0..cols {
                        let orig = mlp.layers[l].w[(r, c)];
                        mlp.layers[l].w[(r, c)] = orig + eps;
                        let up = loss(&mlp);
                        mlp.layers[l].w[(r, c)] = orig - eps;
                        let dn = loss(&mlp);
                        mlp.layers[l].w[(r, c)] = orig;
                        let fd = (up - dn) / (2.0 * eps);
                        let an = grads.layers[l].0[(r, c)];
                        assert!(
                            (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4) < 1e-5,
                            "layer {l} w[{r},{c}]: fd {fd} vs {an}"
                        );
                    }
                }
                for c in 0..mlp.layers[l].b.len() {
                    let orig = mlp.layers[l].b[c];
                    mlp.layers[l].b[c] = orig + eps;
                    let up = loss(&mlp);
                    mlp.layers[l].b[c] = orig - eps;
                    let dn = loss(&mlp);
                    mlp.layers[l].b[c] = orig;
                    let fd = (up - dn) / (2.0 * eps);
                    let an = grads.layers[l].1[c];
                    assert!(
                        (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4) < 1e-5,
                        "layer {l} b[{c}]: fd {fd} vs {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn student_init_copies_teacher_b_on_matching_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = ProjectionMap::new(Array2::from_shape_fn((4, 6), |(i, j)| {
            ((i * 6 + j) as f64).cos()
        }))
        .unwrap();
        let cfg = StudentConfig { encoder_dims: vec![8, 5], d_hat: 4, d_text: 6 };
        let m = StudentModel::init(&cfg, Some(&b), &mut rng).unwrap();
        assert_eq!(m.proj_b.matrix(), b.matrix());

        let cfg2 = StudentConfig { encoder_dims: vec![8, 5], d_hat: 3, d_text: 6 };
        let m2 = StudentModel::init(&cfg2, Some(&b), &mut rng).unwrap();
        assert_eq!(m2.proj_b.out_dim(), 3);
        // Semi-orthogonal: rows orthonormal.
        let bb = m2.proj_b.matrix().dot(&m2.proj_b.matrix().t());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((bb[(i, j)] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn param_order_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cfg = StudentConfig { encoder_dims: vec![6, 4, 3], d_hat: 2, d_text: 5 };
        let m = StudentModel::init(&cfg, None, &mut rng).unwrap();
        let names: Vec<String> = m.param_meta().into_iter().map(|p| p.name).collect();
        assert_eq!(
            names,
            vec!["enc.0.w", "enc.0.b", "enc.1.w", "enc.1.b", "proj_a", "proj_b"]
        );
        let mut visited = Vec::new();
        m.for_each_param(|n, _| visited.push(n.to_string()));
        assert_eq!(visited, names);
        let meta = m.param_meta();
        assert!(!meta.iter().find(|p| p.name == "enc.0.b").unwrap().decay);
        assert!(meta.iter().find(|p| p.name == "proj_b").unwrap().decay);
    }

    #[test]
    fn student_forward_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cfg = StudentConfig { encoder_dims: vec![6, 4], d_hat: 3, d_text: 5 };
        let m = StudentModel::init(&cfg, None, &mut rng).unwrap();
        let x = EmbeddingMatrix::from_flat(7, 6, (0..42).map(|i| i as f64 * 0.01).collect())
            .unwrap();
        let (up, uh) = student_forward(&m, &x).unwrap();
        assert_eq!(up.rows(), 7);
        assert_eq!(up.dim(), 4);
        assert_eq!(uh.rows(), 7);
        assert_eq!(uh.dim(), 3);
    }
}
