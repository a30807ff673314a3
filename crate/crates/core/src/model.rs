//! From-scratch fully-connected inverse model.
//!
//! Maps (arm state, relative target position) to a joint variation. Hidden
//! layers are rectified-linear; the output layer is a logistic affinely
//! mapped to [-delta_bound, +delta_bound] per joint, so every inference
//! satisfies the command bound by construction.

use crate::kinematics::{ArmGeometry, JointConfig, JointDelta, RelativePosition, DOF};
use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INPUT_DIM: usize = 9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("layer dims must start at {INPUT_DIM} and end at {DOF}, got {0:?}")]
    BadDims(Vec<usize>),
    #[error("non-finite loss or gradient; model left unmodified")]
    NonFinite,
    #[error("empty training batch")]
    EmptyBatch,
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint decode: {0}")]
    Decode(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
}

/// Per-dimension input normalization: x_norm = (x - shift) / scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub shift: [f64; INPUT_DIM],
    pub scale: [f64; INPUT_DIM],
}

impl Normalization {
    /// Joint angles mapped to [-1, 1] by their ranges; relative positions
    /// scaled by the reachability envelope.
    pub fn from_geometry(geom: &ArmGeometry, envelope_m: f64) -> Self {
        let mut shift = [0.0; INPUT_DIM];
        let mut scale = [1.0; INPUT_DIM];
        for (i, &(lo, hi)) in geom.joint_ranges.iter().enumerate() {
            shift[i] = 0.5 * (lo + hi);
            scale[i] = 0.5 * (hi - lo);
        }
        for s in scale.iter_mut().skip(DOF) {
            *s = envelope_m;
        }
        Self { shift, scale }
    }
}

/// Table-II envelope for the default ±10° delta bound, meters.
pub const DEFAULT_ENVELOPE_M: f64 = 0.2226;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseModel {
    pub layer_dims: Vec<usize>,
    /// Row-major (out x in) weight matrices.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub norm: Normalization,
    /// Output bound, radians.
    pub delta_bound: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl InverseModel {
    /// He fan-in init for the rectified layers, centered small init for the
    /// output layer, zero biases.
    pub fn new(
        layer_dims: &[usize],
        norm: Normalization,
        delta_bound: f64,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if layer_dims.len() < 2
            || layer_dims[0] != INPUT_DIM
            || *layer_dims.last().unwrap() != DOF
        {
            return Err(ModelError::BadDims(layer_dims.to_vec()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = layer_dims.len() - 1;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            let std = if l + 1 == n_layers {
                // small centered output init keeps the initial command near 0
                0.1 * (1.0 / fan_in as f64).sqrt()
            } else {
                (2.0 / fan_in as f64).sqrt()
            };
            let dist = Normal::new(0.0, std).unwrap();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| dist.sample(&mut rng));
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            norm,
            delta_bound,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Normalized 9-vector feature row for one sample.
    pub fn features(&self, s: &JointConfig, dp: &RelativePosition) -> [f64; INPUT_DIM] {
        let mut x = [0.0; INPUT_DIM];
        for i in 0..DOF {
            x[i] = (s.angles[i] - self.norm.shift[i]) / self.norm.scale[i];
        }
        for i in 0..3 {
            x[DOF + i] = (dp.p[i] - self.norm.shift[DOF + i]) / self.norm.scale[DOF + i];
        }
        x
    }

    /// Batched forward pass on normalized inputs (n x 9) -> deltas (n x 6),
    /// radians, each component within ±delta_bound.
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut a = x.clone();
        let last = self.n_layers() - 1;
        for (l, (w, b)) in self.weights.iter().zip(self.biases.iter()).enumerate() {
            let mut z = a.dot(&w.t());
            z += &b.view().insert_axis(Axis(0));
            if l == last {
                z.mapv_inplace(|v| self.delta_bound * (2.0 * sigmoid(v) - 1.0));
            } else {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        a
    }

    pub fn infer(&self, s: &JointConfig, dp: &RelativePosition) -> JointDelta {
        let x = Array2::from_shape_vec((1, INPUT_DIM), self.features(s, dp).to_vec()).unwrap();
        let y = self.forward(&x);
        let mut deltas = [0.0; DOF];
        for (d, v) in deltas.iter_mut().zip(y.row(0).iter()) {
            *d = *v;
        }
        JointDelta::new(deltas)
    }

    /// infer plus i.i.d. zero-mean Gaussian exploration noise per joint with
    /// std sigma(t) * delta_bound, clamped back into the bound.
    pub fn infer_noisy<R: rand::Rng>(
        &self,
        s: &JointConfig,
        dp: &RelativePosition,
        noise: &NoiseSchedule,
        rng: &mut R,
    ) -> JointDelta {
        let mut dq = self.infer(s, dp);
        let std = noise.sigma() * self.delta_bound;
        if std > 0.0 {
            let dist = Normal::new(0.0, std).unwrap();
            for d in dq.deltas.iter_mut() {
                *d = (*d + dist.sample(rng)).clamp(-self.delta_bound, self.delta_bound);
            }
        }
        dq
    }

    /// Deep, independent copy. Optimizer state never travels with the model;
    /// online fine-tuning starts from a fresh optimizer.
    pub fn replicate(&self) -> InverseModel {
        self.clone()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_MAGIC.to_string(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &ckpt)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<InverseModel, ModelError> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ckpt: Checkpoint = serde_json::from_reader(file)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::Version(ckpt.version));
        }
        Ok(ckpt.model)
    }

    /// SHA-256 over the canonical JSON encoding of the parameters.
    pub fn param_hash(&self) -> String {
        use sha2::Digest;
        let mut h = sha2::Sha256::new();
        for w in &self.weights {
            for v in w.iter() {
                h.update(v.to_le_bytes());
            }
        }
        for b in &self.biases {
            for v in b.iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

pub const CHECKPOINT_MAGIC: &str = "reach-precise-im";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: InverseModel,
}

/// Decaying exploration noise: sigma(t) = sigma0 * (1 - decay)^t, in
/// normalized output units (fraction of delta_bound).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub sigma0: f64,
    pub decay: f64,
    pub t: u64,
}

impl NoiseSchedule {
    pub fn new(sigma0: f64, decay: f64) -> Self {
        Self { sigma0, decay, t: 0 }
    }

    pub fn paper_default() -> Self {
        Self::new(0.07, 0.001)
    }

    pub fn off() -> Self {
        Self::new(0.0, 0.0)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma0 * (1.0 - self.decay).powi(self.t as i32)
    }

    pub fn advance(&mut self) {
        self.t += 1;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(model: &InverseModel, lr: f64) -> Self {
        Self {
            m_w: model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            v_w: model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            m_b: model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            v_b: model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Gradients {
    pub d_w: Vec<Array2<f64>>,
    pub d_b: Vec<Array1<f64>>,
    pub loss: f64,
}

/// Forward + backward on a normalized input batch (n x 9) against labels
/// (n x 6, radians). Loss is the batch mean of the squared error norm.
pub fn backprop(model: &InverseModel, x: &Array2<f64>, labels: &Array2<f64>) -> Gradients {
    let n = x.nrows() as f64;
    let last = model.n_layers() - 1;

    // forward, caching post-activation values per layer
    let mut acts: Vec<Array2<f64>> = Vec::with_capacity(model.n_layers() + 1);
    acts.push(x.clone());
    for (l, (w, b)) in model.weights.iter().zip(model.biases.iter()).enumerate() {
        let mut z = acts[l].dot(&w.t());
        z += &b.view().insert_axis(Axis(0));
        if l == last {
            z.mapv_inplace(|v| 2.0 * sigmoid(v) - 1.0); // in (-1, 1); scale applied below
        } else {
            z.mapv_inplace(|v| v.max(0.0));
        }
        acts.push(z);
    }
    let y = acts[last + 1].mapv(|v| v * model.delta_bound);
    let err = &y - labels;
    let loss = err.iter().map(|e| e * e).sum::<f64>() / n;

    // backward
    let mut d_w = Vec::with_capacity(model.n_layers());
    let mut d_b = Vec::with_capacity(model.n_layers());
    // d loss / d y, then through y = b_d * (2 sigma(z) - 1):
    // dy/dz = b_d * 2 sigma (1 - sigma) = b_d * (1 - u^2) / 2 with u = 2 sigma - 1
    let u = &acts[last + 1];
    let mut delta = (2.0 / n) * err * model.delta_bound * u.mapv(|v| (1.0 - v * v) / 2.0);
    for l in (0..model.n_layers()).rev() {
        if l != last {
            // gate by the rectifier of layer l's output
            delta = delta * acts[l + 1].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        }
        d_w.push(delta.t().dot(&acts[l]));
        d_b.push(delta.sum_axis(Axis(0)));
        if l > 0 {
            delta = delta.dot(&model.weights[l]);
        }
    }
    d_w.reverse();
    d_b.reverse();
    Gradients { d_w, d_b, loss }
}

/// One Adam step on a batch of (state, relative position, label) samples.
/// Returns the pre-step loss. On non-finite loss/gradients the model is left
/// unmodified.
pub fn train_batch(
    model: &mut InverseModel,
    opt: &mut OptimizerState,
    batch: &[(JointConfig, RelativePosition, JointDelta)],
) -> Result<f64, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let n = batch.len();
    let mut x = Array2::zeros((n, INPUT_DIM));
    let mut labels = Array2::zeros((n, DOF));
    for (i, (s, dp, dq)) in batch.iter().enumerate() {
        let f = model.features(s, dp);
        for j in 0..INPUT_DIM {
            x[[i, j]] = f[j];
        }
        for j in 0..DOF {
            labels[[i, j]] = dq.deltas[j];
        }
    }
    train_batch_arrays(model, opt, &x, &labels)
}

/// Same as train_batch for pre-built normalized input / label matrices.
pub fn train_batch_arrays(
    model: &mut InverseModel,
    opt: &mut OptimizerState,
    x: &Array2<f64>,
    labels: &Array2<f64>,
) -> Result<f64, ModelError> {
    let grads = backprop(model, x, labels);
    let finite = grads.loss.is_finite()
        && grads.d_w.iter().all(|g| g.iter().all(|v| v.is_finite()))
        && grads.d_b.iter().all(|g| g.iter().all(|v| v.is_finite()));
    if !finite {
        return Err(ModelError::NonFinite);
    }
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    for l in 0..model.n_layers() {
        let hp = (opt.lr, opt.beta1, opt.beta2, opt.eps);
        adam_update(
            &mut model.weights[l],
            &grads.d_w[l],
            &mut opt.m_w[l],
            &mut opt.v_w[l],
            hp,
            bc1,
            bc2,
        );
        adam_update_1d(
            &mut model.biases[l],
            &grads.d_b[l],
            &mut opt.m_b[l],
            &mut opt.v_b[l],
            hp,
            bc1,
            bc2,
        );
    }
    Ok(grads.loss)
}

fn adam_update(
    param: &mut Array2<f64>,
    grad: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    (lr, beta1, beta2, eps): (f64, f64, f64, f64),
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
}

fn adam_update_1d(
    param: &mut Array1<f64>,
    grad: &Array1<f64>,
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    (lr, beta1, beta2, eps): (f64, f64, f64, f64),
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
}
