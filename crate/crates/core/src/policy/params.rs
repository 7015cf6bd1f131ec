use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub d_emb: usize,
    pub d_h: usize,
}

impl ModelDims {
    pub fn new(vocab: usize, d_emb: usize, d_h: usize) -> Self {
        ModelDims { vocab, d_emb, d_h }
    }
}

/// Named parameter blocks, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Embedding,
    WZ,
    WR,
    WN,
    UZ,
    UR,
    UN,
    BZ,
    BR,
    BN,
    WOut,
    BOut,
    WValue,
    BValue,
}

impl Block {
    pub const ALL: [Block; 14] = [
        Block::Embedding,
        Block::WZ,
        Block::WR,
        Block::WN,
        Block::UZ,
        Block::UR,
        Block::UN,
        Block::BZ,
        Block::BR,
        Block::BN,
        Block::WOut,
        Block::BOut,
        Block::WValue,
        Block::BValue,
    ];

    /// (rows, cols) for a block; vectors have one column.
    pub fn shape(self, d: &ModelDims) -> (usize, usize) {
        match self {
            Block::Embedding => (d.vocab, d.d_emb),
            Block::WZ | Block::WR | Block::WN => (d.d_h, d.d_emb),
            Block::UZ | Block::UR | Block::UN => (d.d_h, d.d_h),
            Block::BZ | Block::BR | Block::BN => (d.d_h, 1),
            Block::WOut => (d.vocab, d.d_h),
            Block::BOut => (d.vocab, 1),
            Block::WValue => (d.d_h, 1),
            Block::BValue => (1, 1),
        }
    }

    pub fn is_matrix(self) -> bool {
        self.shape(&ModelDims::new(2, 2, 2)).1 > 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Block::Embedding => "embedding",
            Block::WZ => "w_update",
            Block::WR => "w_reset",
            Block::WN => "w_candidate",
            Block::UZ => "u_update",
            Block::UR => "u_reset",
            Block::UN => "u_candidate",
            Block::BZ => "b_update",
            Block::BR => "b_reset",
            Block::BN => "b_candidate",
            Block::WOut => "w_out",
            Block::BOut => "b_out",
            Block::WValue => "w_value",
            Block::BValue => "b_value",
        }
    }
}

/// Flat storage for every weight of the recurrent policy. Gradients use the
/// same type, so their shapes match the parameters by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    dims: ModelDims,
    offsets: [usize; 15],
    data: Vec<f64>,
}

pub type Gradients = PolicyParameters;

impl PolicyParameters {
    pub fn zeros(dims: ModelDims) -> Self {
        let mut offsets = [0usize; 15];
        for (i, b) in Block::ALL.iter().enumerate() {
            let (r, c) = b.shape(&dims);
            offsets[i + 1] = offsets[i] + r * c;
        }
        PolicyParameters {
            dims,
            offsets,
            data: vec![0.0; offsets[14]],
        }
    }

    /// Weight matrices uniform in (-0.08, 0.08); biases and the value head zero.
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Self {
        let mut p = Self::zeros(dims);
        for b in Block::ALL {
            if b.is_matrix() && b != Block::WValue {
                for w in p.block_mut(b) {
                    *w = rng.gen_range(-0.08..0.08);
                }
            }
        }
        p
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn index(b: Block) -> usize {
        Block::ALL
            .iter()
            .position(|&x| x == b)
            .expect("known block")
    }

    pub fn block_range(&self, b: Block) -> std::ops::Range<usize> {
        let i = Self::index(b);
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn block(&self, b: Block) -> &[f64] {
        &self.data[self.block_range(b)]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut [f64] {
        let r = self.block_range(b);
        &mut self.data[r]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_grad_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &PolicyParameters) -> Self {
        Adam {
            config,
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
            step: 0,
        }
    }

    /// Applies one update and returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut PolicyParameters, grads: &Gradients) -> f64 {
        let norm = grads.l2_norm();
        let clip = match self.config.max_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params
            .data
            .iter_mut()
            .zip(&grads.data)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let g = g * clip;
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
        norm
    }
}
