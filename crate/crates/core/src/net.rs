//! Self-contained neural-network engine: batched tanh MLPs with analytic
//! backprop, a diagonal-Gaussian policy head, Welford observation
//! normalization, Adam, and a versioned little-endian checkpoint format
//! with bit-exact round trips.
//!
//! Batches are row-major at the API level — each matrix row is one sample —
//! and gradients are plain sums over rows; callers divide by the batch size
//! when they want means.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::{self, Read, Write};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

/// One affine layer, `y = x Wᵀ + b`, with W stored (out × in).
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Multilayer perceptron: tanh on every layer except the last (identity).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Per-layer gradient sums in the same shapes as the parameters.
#[derive(Clone, Debug)]
pub struct MlpGrads {
    pub layers: Vec<(DMatrix<f64>, DVector<f64>)>,
}

/// Layer activations cached by a forward pass, input first, output last.
pub struct MlpCache {
    pub activations: Vec<DMatrix<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.activations.last().unwrap()
    }
}

impl Mlp {
    /// Uniform fan-in initialization: each layer drawn from
    /// U(±1/√fan_in), biases zero.
    pub fn new(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                Linear {
                    w: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..=bound)),
                    b: DVector::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    /// Shrinks the final layer's weights; near-zero heads keep early policy
    /// outputs close to the reference pose.
    pub fn scale_last_layer(&mut self, s: f64) {
        let last = self.layers.last_mut().unwrap();
        last.w *= s;
        last.b *= s;
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().unwrap().w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.w.nrows()));
        d
    }

    pub fn forward_cached(&self, x: &DMatrix<f64>) -> MlpCache {
        assert_eq!(x.ncols(), self.input_dim());
        let n_layers = self.layers.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(x.clone());
        for (li, layer) in self.layers.iter().enumerate() {
            let prev = activations.last().unwrap();
            let mut z = prev * layer.w.transpose();
            for mut row in z.row_iter_mut() {
                row += layer.b.transpose();
            }
            if li + 1 < n_layers {
                z.apply(|v| *v = v.tanh());
            }
            activations.push(z);
        }
        MlpCache { activations }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_cached(x).activations.pop().unwrap()
    }

    pub fn forward_row(&self, x: &DVector<f64>) -> DVector<f64> {
        let out = self.forward(&DMatrix::from_rows(&[x.transpose()]));
        out.row(0).transpose()
    }

    /// Backpropagates `d_out` (batch × out, ∂L/∂output) through the cached
    /// pass; returns parameter gradient sums and ∂L/∂input.
    pub fn backward(&self, cache: &MlpCache, d_out: &DMatrix<f64>) -> (MlpGrads, DMatrix<f64>) {
        let n_layers = self.layers.len();
        let mut grads = vec![(DMatrix::zeros(0, 0), DVector::zeros(0)); n_layers];
        let mut delta = d_out.clone();
        for li in (0..n_layers).rev() {
            if li + 1 < n_layers {
                // Tanh was applied to this layer's output.
                let act = &cache.activations[li + 1];
                delta.zip_apply(act, |d, a| *d *= 1.0 - a * a);
            }
            let input = &cache.activations[li];
            let dw = delta.transpose() * input;
            let db = delta.row_sum().transpose();
            grads[li] = (dw, db);
            if li > 0 {
                delta = &delta * &self.layers[li].w;
            }
        }
        let d_in = delta * &self.layers[0].w;
        (MlpGrads { layers: grads }, d_in)
    }
}

/// Flat views of parameters and gradients so the optimizer and checkpoints
/// see one contiguous vector. Orderings must match exactly.
pub trait FlatParams {
    fn flat_len(&self) -> usize;
    fn copy_to_flat(&self, out: &mut [f64]);
    fn copy_from_flat(&mut self, src: &[f64]);

    fn to_flat(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.flat_len());
        self.copy_to_flat(v.as_mut_slice());
        v
    }
}

impl FlatParams for Mlp {
    fn flat_len(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn copy_to_flat(&self, out: &mut [f64]) {
        let mut k = 0;
        for l in &self.layers {
            for v in l.w.iter().chain(l.b.iter()) {
                out[k] = *v;
                k += 1;
            }
        }
        assert_eq!(k, out.len());
    }

    fn copy_from_flat(&mut self, src: &[f64]) {
        let mut k = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = src[k];
                k += 1;
            }
        }
        assert_eq!(k, src.len());
    }
}

impl MlpGrads {
    pub fn to_flat(&self) -> DVector<f64> {
        let n: usize = self.layers.iter().map(|(w, b)| w.len() + b.len()).sum();
        let mut out = DVector::zeros(n);
        let mut k = 0;
        for (w, b) in &self.layers {
            for v in w.iter().chain(b.iter()) {
                out[k] = *v;
                k += 1;
            }
        }
        out
    }
}

/// Diagonal-Gaussian policy: an MLP mean with a state-independent,
/// clamped log-standard-deviation vector.
#[derive(Clone, Debug)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    pub log_std: DVector<f64>,
}

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

impl GaussianPolicy {
    pub fn new(dims: &[usize], init_log_std: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut mean_net = Mlp::new(dims, rng);
        mean_net.scale_last_layer(0.01);
        let action_dim = mean_net.output_dim();
        Self {
            mean_net,
            log_std: DVector::from_element(action_dim, init_log_std),
        }
    }

    pub fn action_dim(&self) -> usize {
        self.mean_net.output_dim()
    }

    pub fn clamp_log_std(&mut self) {
        self.log_std.apply(|v| *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    }

    pub fn sample(&self, obs: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
        self.sample_with_log_prob(obs, rng).0
    }

    /// Draws an action and returns its log density in one pass.
    pub fn sample_with_log_prob(
        &self,
        obs: &DVector<f64>,
        rng: &mut ChaCha8Rng,
    ) -> (DVector<f64>, f64) {
        let mean = self.mean_net.forward_row(obs);
        let mut lp = 0.0;
        let action = DVector::from_fn(mean.len(), |i, _| {
            let eps: f64 = rng.sample(StandardNormal);
            lp -= 0.5 * eps * eps + self.log_std[i] + HALF_LN_2PI;
            mean[i] + self.log_std[i].exp() * eps
        });
        (action, lp)
    }

    /// Log density of `action` rows under the Gaussians centered on `means`
    /// rows; one value per sample.
    pub fn log_prob_from_means(&self, means: &DMatrix<f64>, actions: &DMatrix<f64>) -> DVector<f64> {
        let n = means.nrows();
        DVector::from_fn(n, |s, _| {
            let mut lp = 0.0;
            for i in 0..self.log_std.len() {
                let ls = self.log_std[i];
                let e = (actions[(s, i)] - means[(s, i)]) / ls.exp();
                lp -= 0.5 * e * e + ls + HALF_LN_2PI;
            }
            lp
        })
    }

    pub fn log_prob(&self, obs: &DVector<f64>, action: &DVector<f64>) -> f64 {
        let means = DMatrix::from_rows(&[self.mean_net.forward_row(obs).transpose()]);
        let acts = DMatrix::from_rows(&[action.transpose()]);
        self.log_prob_from_means(&means, &acts)[0]
    }

    /// ∂ log p / ∂ mean, one row per sample.
    pub fn dlogp_dmean(&self, means: &DMatrix<f64>, actions: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(means.nrows(), means.ncols(), |s, i| {
            let var = (2.0 * self.log_std[i]).exp();
            (actions[(s, i)] - means[(s, i)]) / var
        })
    }

    /// ∂ log p / ∂ log_std, one row per sample.
    pub fn dlogp_dlogstd(&self, means: &DMatrix<f64>, actions: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(means.nrows(), means.ncols(), |s, i| {
            let e = (actions[(s, i)] - means[(s, i)]) / self.log_std[i].exp();
            e * e - 1.0
        })
    }

    /// Differential entropy per sample (state-independent for this head).
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|ls| ls + 0.5 + HALF_LN_2PI).sum()
    }
}

#[derive(Clone, Debug)]
pub struct PolicyGrads {
    pub net: MlpGrads,
    pub log_std: DVector<f64>,
}

impl PolicyGrads {
    pub fn to_flat(&self) -> DVector<f64> {
        let net = self.net.to_flat();
        let mut out = DVector::zeros(net.len() + self.log_std.len());
        out.rows_mut(0, net.len()).copy_from(&net);
        out.rows_mut(net.len(), self.log_std.len()).copy_from(&self.log_std);
        out
    }
}

impl FlatParams for GaussianPolicy {
    fn flat_len(&self) -> usize {
        self.mean_net.flat_len() + self.log_std.len()
    }

    fn copy_to_flat(&self, out: &mut [f64]) {
        let n = self.mean_net.flat_len();
        self.mean_net.copy_to_flat(&mut out[..n]);
        out[n..].copy_from_slice(self.log_std.as_slice());
    }

    fn copy_from_flat(&mut self, src: &[f64]) {
        let n = self.mean_net.flat_len();
        self.mean_net.copy_from_flat(&src[..n]);
        self.log_std.as_mut_slice().copy_from_slice(&src[n..]);
    }
}

/// Adam over one flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: DVector<f64>,
    v: DVector<f64>,
}

impl Adam {
    pub fn new(dim: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: DVector::zeros(dim),
            v: DVector::zeros(dim),
        }
    }

    pub fn step(&mut self, params: &mut DVector<f64>, grad: &DVector<f64>) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Rescales `g` in place so its Euclidean norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_grad_norm(g: &mut DVector<f64>, max_norm: f64) -> f64 {
    let n = g.norm();
    if n > max_norm {
        *g *= max_norm / n;
    }
    n
}

/// Welford running mean/variance used to normalize observations.
/// Fresh (no samples) it is the identity; otherwise it whitens with the
/// population variance and clamps to ±10.
#[derive(Clone, Debug)]
pub struct RunningNorm {
    pub mean: DVector<f64>,
    m2: DVector<f64>,
    count: f64,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            m2: DVector::zeros(dim),
            count: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn update(&mut self, x: &DVector<f64>) {
        self.count += 1.0;
        for i in 0..self.mean.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / self.count;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    pub fn variance(&self) -> DVector<f64> {
        if self.count < 1.0 {
            DVector::from_element(self.mean.len(), 1.0)
        } else {
            &self.m2 / self.count
        }
    }

    pub fn normalize(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.count == 0.0 {
            return x.clone();
        }
        let var = self.variance();
        DVector::from_fn(x.len(), |i, _| {
            ((x[i] - self.mean[i]) / (var[i] + 1e-8).sqrt()).clamp(-10.0, 10.0)
        })
    }
}

const CKPT_MAGIC: [u8; 4] = *b"LMBC";
pub const CKPT_VERSION: u32 = 1;

/// Little-endian binary checkpoint writer; sections are written in a fixed
/// order the reader mirrors, so round trips are bit-exact.
pub struct CkptWriter<W: Write> {
    w: W,
}

impl<W: Write> CkptWriter<W> {
    pub fn new(mut w: W) -> io::Result<Self> {
        w.write_all(&CKPT_MAGIC)?;
        w.write_all(&CKPT_VERSION.to_le_bytes())?;
        Ok(Self { w })
    }

    pub fn write_u32(&mut self, v: u32) -> io::Result<()> {
        self.w.write_all(&v.to_le_bytes())
    }

    pub fn write_u64(&mut self, v: u64) -> io::Result<()> {
        self.w.write_all(&v.to_le_bytes())
    }

    pub fn write_f64(&mut self, v: f64) -> io::Result<()> {
        self.w.write_all(&v.to_le_bytes())
    }

    pub fn write_vec(&mut self, v: &DVector<f64>) -> io::Result<()> {
        self.write_u32(v.len() as u32)?;
        for x in v.iter() {
            self.write_f64(*x)?;
        }
        Ok(())
    }

    pub fn write_mat(&mut self, m: &DMatrix<f64>) -> io::Result<()> {
        self.write_u32(m.nrows() as u32)?;
        self.write_u32(m.ncols() as u32)?;
        for x in m.iter() {
            self.write_f64(*x)?;
        }
        Ok(())
    }

    pub fn write_mlp(&mut self, mlp: &Mlp) -> io::Result<()> {
        self.write_u32(mlp.layers.len() as u32)?;
        for l in &mlp.layers {
            self.write_mat(&l.w)?;
            self.write_vec(&l.b)?;
        }
        Ok(())
    }

    pub fn write_policy(&mut self, p: &GaussianPolicy) -> io::Result<()> {
        self.write_mlp(&p.mean_net)?;
        self.write_vec(&p.log_std)
    }

    pub fn write_norm(&mut self, n: &RunningNorm) -> io::Result<()> {
        self.write_f64(n.count)?;
        self.write_vec(&n.mean)?;
        self.write_vec(&n.m2)
    }
}

pub struct CkptReader<R: Read> {
    r: R,
}

impl<R: Read> CkptReader<R> {
    pub fn new(mut r: R) -> io::Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != CKPT_MAGIC {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "not a checkpoint file"));
        }
        let mut vb = [0u8; 4];
        r.read_exact(&mut vb)?;
        let version = u32::from_le_bytes(vb);
        if version != CKPT_VERSION {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        Ok(Self { r })
    }

    pub fn read_u32(&mut self) -> io::Result<u32> {
        let mut b = [0u8; 4];
        self.r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn read_u64(&mut self) -> io::Result<u64> {
        let mut b = [0u8; 8];
        self.r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn read_f64(&mut self) -> io::Result<f64> {
        let mut b = [0u8; 8];
        self.r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn read_vec(&mut self) -> io::Result<DVector<f64>> {
        let n = self.read_u32()? as usize;
        let mut v = DVector::zeros(n);
        for i in 0..n {
            v[i] = self.read_f64()?;
        }
        Ok(v)
    }

    pub fn read_mat(&mut self) -> io::Result<DMatrix<f64>> {
        let rows = self.read_u32()? as usize;
        let cols = self.read_u32()? as usize;
        let mut m = DMatrix::zeros(rows, cols);
        // Same column-major order the writer used.
        for c in 0..cols {
            for r in 0..rows {
                m[(r, c)] = self.read_f64()?;
            }
        }
        Ok(m)
    }

    pub fn read_mlp(&mut self) -> io::Result<Mlp> {
        let n = self.read_u32()? as usize;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let w = self.read_mat()?;
            let b = self.read_vec()?;
            layers.push(Linear { w, b });
        }
        Ok(Mlp { layers })
    }

    pub fn read_policy(&mut self) -> io::Result<GaussianPolicy> {
        let mean_net = self.read_mlp()?;
        let log_std = self.read_vec()?;
        Ok(GaussianPolicy { mean_net, log_std })
    }

    pub fn read_norm(&mut self) -> io::Result<RunningNorm> {
        let count = self.read_f64()?;
        let mean = self.read_vec()?;
        let m2 = self.read_vec()?;
        Ok(RunningNorm { mean, m2, count })
    }
}
