//! Dense and gated-recurrent layers with explicit forward tapes and
//! backpropagation, an adaptive-moment optimizer, and flat binary parameter
//! checkpoints. Everything runs in 64-bit floats.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

/// Flat views over a network's parameter blocks, in declaration order.
/// Gradients mirror their network's block layout.
pub trait ParamBlocks {
    fn blocks(&self) -> Vec<&[f64]>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    Linear,
    Relu,
    Sigmoid,
    Tanh,
}

impl Act {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Act::Linear => z,
            Act::Relu => z.max(0.0),
            Act::Sigmoid => sigmoid(z),
            Act::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed in terms of the activation output.
    #[inline]
    pub fn derive_from_output(self, y: f64) -> f64 {
        match self {
            Act::Linear => 1.0,
            Act::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Act::Sigmoid => y * (1.0 - y),
            Act::Tanh => 1.0 - y * y,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Fully connected layer, weights row-major `out x in`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    /// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Dense {
            in_dim,
            out_dim,
            w: (0..in_dim * out_dim).map(|_| rng.gen_range(-bound..=bound)).collect(),
            b: (0..out_dim).map(|_| rng.gen_range(-bound..=bound)).collect(),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense { in_dim, out_dim, w: vec![0.0; in_dim * out_dim], b: vec![0.0; out_dim] }
    }

    /// Pre-activation `z = W x + b`.
    pub fn forward(&self, x: &[f64], z: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.in_dim);
        z.clear();
        z.reserve(self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            z.push(acc);
        }
    }

    /// Accumulates parameter gradients from the pre-activation gradient and
    /// returns the gradient with respect to the input in `dx`.
    pub fn backward(&self, x: &[f64], dz: &[f64], grad: &mut DenseGrad, dx: Option<&mut [f64]>) {
        for o in 0..self.out_dim {
            let g = dz[o];
            grad.b[o] += g;
            let row = &mut grad.w[o * self.in_dim..(o + 1) * self.in_dim];
            for (gw, xi) in row.iter_mut().zip(x) {
                *gw += g * xi;
            }
        }
        if let Some(dx) = dx {
            dx.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..self.out_dim {
                let g = dz[o];
                let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                for (dxi, wi) in dx.iter_mut().zip(row) {
                    *dxi += g * wi;
                }
            }
        }
    }
}

impl ParamBlocks for Dense {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![&self.w, &self.b]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w, &mut self.b]
    }
}

#[derive(Debug, Clone)]
pub struct DenseGrad {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl DenseGrad {
    pub fn zeros_like(layer: &Dense) -> Self {
        DenseGrad { w: vec![0.0; layer.w.len()], b: vec![0.0; layer.b.len()] }
    }
}

impl ParamBlocks for DenseGrad {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![&self.w, &self.b]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Gated recurrent unit cell: update gate `z`, reset gate `r`, candidate
/// `n = tanh(Wn x + Un (r.h) + bn)`, new hidden `h' = (1-z).h + z.n`.
#[derive(Debug, Clone)]
pub struct Gru {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub wz: Dense,
    pub wr: Dense,
    pub wn: Dense,
    /// Hidden-to-hidden weights, `hidden x hidden`, no bias of their own.
    pub uz: Vec<f64>,
    pub ur: Vec<f64>,
    pub un: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GruTape {
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GruGrad {
    pub wz: DenseGrad,
    pub wr: DenseGrad,
    pub wn: DenseGrad,
    pub uz: Vec<f64>,
    pub ur: Vec<f64>,
    pub un: Vec<f64>,
}

impl Gru {
    pub fn new(in_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let mut hh = || -> Vec<f64> {
            (0..hidden_dim * hidden_dim).map(|_| rng.gen_range(-bound..=bound)).collect()
        };
        let uz = hh();
        let ur = hh();
        let un = hh();
        Gru {
            in_dim,
            hidden_dim,
            wz: Dense::new(in_dim, hidden_dim, rng),
            wr: Dense::new(in_dim, hidden_dim, rng),
            wn: Dense::new(in_dim, hidden_dim, rng),
            uz,
            ur,
            un,
        }
    }

    pub fn forward(&self, x: &[f64], h: &[f64], new_h: &mut Vec<f64>, tape: Option<&mut GruTape>) {
        debug_assert_eq!(h.len(), self.hidden_dim);
        let d = self.hidden_dim;
        let mut z = Vec::new();
        let mut r = Vec::new();
        let mut n = Vec::new();
        self.wz.forward(x, &mut z);
        self.wr.forward(x, &mut r);
        self.wn.forward(x, &mut n);
        for o in 0..d {
            let mut zh = 0.0;
            let mut rh = 0.0;
            for i in 0..d {
                zh += self.uz[o * d + i] * h[i];
                rh += self.ur[o * d + i] * h[i];
            }
            z[o] = sigmoid(z[o] + zh);
            r[o] = sigmoid(r[o] + rh);
        }
        for o in 0..d {
            let mut nh = 0.0;
            for i in 0..d {
                nh += self.un[o * d + i] * (r[i] * h[i]);
            }
            n[o] = (n[o] + nh).tanh();
        }
        new_h.clear();
        new_h.extend((0..d).map(|o| (1.0 - z[o]) * h[o] + z[o] * n[o]));
        if let Some(tape) = tape {
            tape.x = x.to_vec();
            tape.h = h.to_vec();
            tape.z = z;
            tape.r = r;
            tape.n = n;
        }
    }

    /// Parameter gradients from the new-hidden gradient. The stored input
    /// and previous hidden are treated as constants (single-step truncated
    /// backpropagation through time).
    pub fn backward(&self, tape: &GruTape, dh_new: &[f64], grad: &mut GruGrad) {
        let d = self.hidden_dim;
        let (h, z, r, n) = (&tape.h, &tape.z, &tape.r, &tape.n);
        // Gate pre-activation gradients.
        let mut dz_pre = vec![0.0; d];
        let mut dn_pre = vec![0.0; d];
        for o in 0..d {
            let dz = dh_new[o] * (n[o] - h[o]);
            dz_pre[o] = dz * z[o] * (1.0 - z[o]);
            let dn = dh_new[o] * z[o];
            dn_pre[o] = dn * (1.0 - n[o] * n[o]);
        }
        // Reset gate feeds the candidate through Un (r.h).
        let mut dr_pre = vec![0.0; d];
        for i in 0..d {
            let mut acc = 0.0;
            for o in 0..d {
                acc += self.un[o * d + i] * dn_pre[o];
            }
            dr_pre[i] = acc * h[i] * r[i] * (1.0 - r[i]);
        }
        let rh: Vec<f64> = (0..d).map(|i| r[i] * h[i]).collect();
        self.wz.backward(&tape.x, &dz_pre, &mut grad.wz, None);
        self.wr.backward(&tape.x, &dr_pre, &mut grad.wr, None);
        self.wn.backward(&tape.x, &dn_pre, &mut grad.wn, None);
        for o in 0..d {
            for i in 0..d {
                grad.uz[o * d + i] += dz_pre[o] * h[i];
                grad.ur[o * d + i] += dr_pre[o] * h[i];
                grad.un[o * d + i] += dn_pre[o] * rh[i];
            }
        }
    }

    pub fn grad_zeros(&self) -> GruGrad {
        GruGrad {
            wz: DenseGrad::zeros_like(&self.wz),
            wr: DenseGrad::zeros_like(&self.wr),
            wn: DenseGrad::zeros_like(&self.wn),
            uz: vec![0.0; self.uz.len()],
            ur: vec![0.0; self.ur.len()],
            un: vec![0.0; self.un.len()],
        }
    }
}

impl ParamBlocks for Gru {
    fn blocks(&self) -> Vec<&[f64]> {
        let mut v = self.wz.blocks();
        v.extend(self.wr.blocks());
        v.extend(self.wn.blocks());
        v.push(&self.uz);
        v.push(&self.ur);
        v.push(&self.un);
        v
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![
            &mut self.wz.w,
            &mut self.wz.b,
            &mut self.wr.w,
            &mut self.wr.b,
            &mut self.wn.w,
            &mut self.wn.b,
        ];
        v.push(&mut self.uz);
        v.push(&mut self.ur);
        v.push(&mut self.un);
        v
    }
}

impl ParamBlocks for GruGrad {
    fn blocks(&self) -> Vec<&[f64]> {
        let mut v = self.wz.blocks();
        v.extend(self.wr.blocks());
        v.extend(self.wn.blocks());
        v.push(&self.uz);
        v.push(&self.ur);
        v.push(&self.un);
        v
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![
            &mut self.wz.w,
            &mut self.wz.b,
            &mut self.wr.w,
            &mut self.wr.b,
            &mut self.wn.w,
            &mut self.wn.b,
        ];
        v.push(&mut self.uz);
        v.push(&mut self.ur);
        v.push(&mut self.un);
        v
    }
}

/// Adaptive-moment gradient descent.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: &impl ParamBlocks) -> Self {
        let shapes: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut impl ParamBlocks, grads: &impl ParamBlocks) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let gblocks = grads.blocks();
        for (k, pblock) in params.blocks_mut().into_iter().enumerate() {
            let g = gblocks[k];
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for i in 0..pblock.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                pblock[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Target-network blend `target <- tau*online + (1-tau)*target`.
pub fn soft_update(
    target: &mut impl ParamBlocks,
    online: &impl ParamBlocks,
    tau: f64,
) -> Result<(), NeuralError> {
    let src = online.blocks();
    let mut dst = target.blocks_mut();
    if src.len() != dst.len() {
        return Err(NeuralError::ShapeMismatch { expected: dst.len(), got: src.len() });
    }
    for (d, s) in dst.iter_mut().zip(&src) {
        if d.len() != s.len() {
            return Err(NeuralError::ShapeMismatch { expected: d.len(), got: s.len() });
        }
        for (dv, sv) in d.iter_mut().zip(s.iter()) {
            *dv = tau * sv + (1.0 - tau) * *dv;
        }
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"PATHNET\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes the networks' parameter blocks: magic, version, block-length
/// table, then the raw values as little-endian 64-bit floats in declaration
/// order.
pub fn save_checkpoint(path: &Path, nets: &[&dyn ParamBlocks]) -> Result<(), NeuralError> {
    let blocks: Vec<&[f64]> = nets.iter().flat_map(|n| n.blocks()).collect();
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(CHECKPOINT_MAGIC)?;
    file.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    file.write_all(&(blocks.len() as u32).to_le_bytes())?;
    for b in &blocks {
        file.write_all(&(b.len() as u64).to_le_bytes())?;
    }
    for b in &blocks {
        for v in *b {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Restores parameters written by [`save_checkpoint`]; the networks must
/// already have the recorded shapes.
pub fn load_checkpoint(path: &Path, nets: &mut [&mut dyn ParamBlocks]) -> Result<(), NeuralError> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NeuralError::BadCheckpoint("wrong magic".into()));
    }
    let mut u32buf = [0u8; 4];
    file.read_exact(&mut u32buf)?;
    if u32::from_le_bytes(u32buf) != CHECKPOINT_VERSION {
        return Err(NeuralError::BadCheckpoint("unsupported version".into()));
    }
    file.read_exact(&mut u32buf)?;
    let n_blocks = u32::from_le_bytes(u32buf) as usize;
    let mut lens = Vec::with_capacity(n_blocks);
    let mut u64buf = [0u8; 8];
    for _ in 0..n_blocks {
        file.read_exact(&mut u64buf)?;
        lens.push(u64::from_le_bytes(u64buf) as usize);
    }
    let mut blocks: Vec<&mut [f64]> = Vec::new();
    for net in nets.iter_mut() {
        blocks.extend(net.blocks_mut());
    }
    if blocks.len() != n_blocks {
        return Err(NeuralError::ShapeMismatch { expected: blocks.len(), got: n_blocks });
    }
    for (b, &len) in blocks.iter_mut().zip(&lens) {
        if b.len() != len {
            return Err(NeuralError::ShapeMismatch { expected: b.len(), got: len });
        }
        for v in b.iter_mut() {
            file.read_exact(&mut u64buf)?;
            *v = f64::from_le_bytes(u64buf);
        }
    }
    Ok(())
}
