//! Low-rank adapters for linear layers.
//!
//! An [`AdaptedLinear`] computes `W0·x + bias + scale·B·(A·x)`. The base
//! weight and bias are frozen while an adapter is attached; only `A`
//! (`r x d_in`) and `B` (`d_out x r`) are trainable. `B` starts at zero, so a
//! fresh adapter leaves the layer's function untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, NodeId, Tape};
use crate::error::{Error, Result};

/// Standard deviation used for every seeded Gaussian initialization.
pub const INIT_STD: f64 = 0.02;

/// Low-rank pair `(A, B)` with a scalar multiplier on `B·A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    /// Down-projection, `r x d_in`.
    pub a: Matrix,
    /// Up-projection, `d_out x r`.
    pub b: Matrix,
    pub scale: f64,
}

impl LoraAdapter {
    /// Fresh adapter: `A ~ N(0, 0.02²)` from `seed`, `B = 0`, scale 1.
    pub fn init(d_in: usize, d_out: usize, rank: usize, seed: u64) -> Result<Self> {
        if rank == 0 || rank > d_in.min(d_out) {
            return Err(Error::Contract(format!(
                "rank {rank} outside [1, {}] for a {d_out}x{d_in} layer",
                d_in.min(d_out)
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            a: gaussian(rank, d_in, INIT_STD, &mut rng),
            b: Matrix::zeros(d_out, rank),
            scale: 1.0,
        })
    }

    /// Builds an adapter from explicit factors, validating their shapes.
    pub fn from_parts(a: Matrix, b: Matrix, scale: f64) -> Result<Self> {
        if a.rows() != b.cols() || a.rows() == 0 || a.rows() > a.cols().min(b.rows()) {
            return Err(Error::dim("lora adapter", a.shape(), b.shape()));
        }
        if !scale.is_finite() {
            return Err(Error::Contract("adapter scale must be finite".into()));
        }
        Ok(Self { a, b, scale })
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn d_in(&self) -> usize {
        self.a.cols()
    }

    pub fn d_out(&self) -> usize {
        self.b.rows()
    }

    /// Dense `scale·B·A`. Only used for merging and inspection.
    pub fn delta(&self) -> Matrix {
        self.b
            .matmul(&self.a)
            .expect("adapter shapes validated at construction")
            .scale(self.scale)
    }

    pub fn param_count(&self) -> usize {
        self.a.len() + self.b.len()
    }
}

/// Convenience wrapper matching [`LoraAdapter::init`].
pub fn init_adapter(d_in: usize, d_out: usize, rank: usize, seed: u64) -> Result<LoraAdapter> {
    LoraAdapter::init(d_in, d_out, rank, seed)
}

/// A linear layer `d_in -> d_out` with an optional adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptedLinear {
    pub weight: Matrix,
    /// Column vector of length `d_out`.
    pub bias: Matrix,
    pub adapter: Option<LoraAdapter>,
}

/// Tape handles for the leaves a layer placed during a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LayerNodes {
    pub weight: NodeId,
    pub bias: NodeId,
    pub lora: Option<(NodeId, NodeId)>,
}

impl AdaptedLinear {
    pub fn new(weight: Matrix, bias: Matrix) -> Result<Self> {
        if bias.shape() != (weight.rows(), 1) {
            return Err(Error::dim("linear bias", weight.shape(), bias.shape()));
        }
        Ok(Self {
            weight,
            bias,
            adapter: None,
        })
    }

    /// Gaussian weight with the given std and zero bias.
    pub fn seeded(d_in: usize, d_out: usize, std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            weight: gaussian(d_out, d_in, std, &mut rng),
            bias: Matrix::zeros(d_out, 1),
            adapter: None,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn attach(&mut self, adapter: LoraAdapter) -> Result<()> {
        if adapter.d_in() != self.d_in() || adapter.d_out() != self.d_out() {
            return Err(Error::dim(
                "attach adapter",
                self.weight.shape(),
                (adapter.d_out(), adapter.d_in()),
            ));
        }
        self.adapter = Some(adapter);
        Ok(())
    }

    /// Records the layer on `tape`. With `train_base` the base weight and
    /// bias become trainable leaves; otherwise they are constants.
    pub fn forward_on_tape(&self, tape: &mut Tape, x: NodeId, train_base: bool) -> Result<(NodeId, LayerNodes)> {
        let xs = tape.value(x).shape();
        if xs.0 != self.d_in() {
            return Err(Error::dim("lora_forward", self.weight.shape(), xs));
        }
        let w = tape.leaf(self.weight.clone(), train_base);
        let bias = tape.leaf(self.bias.clone(), train_base);
        let wx = tape.matmul(w, x)?;
        let mut y = tape.add(wx, bias)?;
        let mut lora = None;
        if let Some(ad) = &self.adapter {
            let a = tape.param(ad.a.clone());
            let b = tape.param(ad.b.clone());
            let ax = tape.matmul(a, x)?;
            let bax = tape.matmul(b, ax)?;
            let delta = tape.scale(bax, ad.scale);
            y = tape.add(y, delta)?;
            lora = Some((a, b));
        }
        Ok((y, LayerNodes { weight: w, bias, lora }))
    }

    /// Tape-free forward with identical arithmetic to [`Self::forward_on_tape`].
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.d_in() {
            return Err(Error::dim("lora_forward", self.weight.shape(), x.shape()));
        }
        let mut y = self.weight.matmul(x)?.add(&self.bias)?;
        if let Some(ad) = &self.adapter {
            let delta = ad.b.matmul(&ad.a.matmul(x)?)?.scale(ad.scale);
            y = y.add(&delta)?;
        }
        Ok(y)
    }

    /// Forward through the base weights only, ignoring any adapter.
    pub fn base_forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.d_in() {
            return Err(Error::dim("linear forward", self.weight.shape(), x.shape()));
        }
        self.weight.matmul(x)?.add(&self.bias)
    }

    /// Folds `scale·B·A` into the base weight and drops the adapter.
    pub fn merge(&self) -> Result<AdaptedLinear> {
        let ad = self
            .adapter
            .as_ref()
            .ok_or_else(|| Error::Contract("merge requires an attached adapter".into()))?;
        Ok(AdaptedLinear {
            weight: self.weight.add(&ad.delta())?,
            bias: self.bias.clone(),
            adapter: None,
        })
    }

    /// `r·(d_in + d_out)` with an adapter, else 0 (the base is frozen).
    pub fn trainable_param_count(&self) -> usize {
        self.adapter
            .as_ref()
            .map_or(0, |ad| ad.rank() * (self.d_in() + self.d_out()))
    }

    pub fn base_param_count(&self) -> usize {
        self.weight.len()
    }
}

/// Free-function form of [`AdaptedLinear::forward`].
pub fn lora_forward(layer: &AdaptedLinear, x: &Matrix) -> Result<Matrix> {
    layer.forward(x)
}

pub fn merge(layer: &AdaptedLinear) -> Result<AdaptedLinear> {
    layer.merge()
}

pub fn trainable_param_count(layer: &AdaptedLinear) -> usize {
    layer.trainable_param_count()
}

pub(crate) fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let normal = Normal::new(0.0, std).expect("finite non-negative std");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("length matches shape")
}
