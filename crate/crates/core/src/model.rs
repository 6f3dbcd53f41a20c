//! Feed-forward expression classifier with LoRA-wrappable layers.
//!
//! The backbone is a chain of [`AdaptedLinear`] + ReLU blocks whose base
//! weights stand in for a pretrained model and are never trained directly.
//! The head is a plain linear layer sized to the active label set; it is
//! replaced at every stage change and trained in full.

use std::collections::HashSet;

use crate::autodiff::{Matrix, NodeId, Tape};
use crate::error::{Error, Result};
use crate::lora::{AdaptedLinear, LoraAdapter, INIT_STD};
use crate::seed::sub_seed;

pub const DEFAULT_D_IN: usize = 16;
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 32];

/// Identifies one tensor of a [`ClassifierNet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    BackboneWeight(usize),
    BackboneBias(usize),
    LoraA(usize),
    LoraB(usize),
    HeadWeight,
    HeadBias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierNet {
    backbone: Vec<AdaptedLinear>,
    head: AdaptedLinear,
    labels: Vec<String>,
}

impl ClassifierNet {
    /// Seeded base network. Backbone weights are He-scaled Gaussians with
    /// zero bias; the head follows [`Self::swap_head`].
    pub fn new(d_in: usize, hidden: &[usize], labels: Vec<String>, seed: u64) -> Result<Self> {
        validate_labels(&labels)?;
        if d_in == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::Contract(
                "network widths must be positive and hidden non-empty".into(),
            ));
        }
        let mut backbone = Vec::with_capacity(hidden.len());
        let mut fan_in = d_in;
        for (i, &width) in hidden.iter().enumerate() {
            let std = (2.0 / fan_in as f64).sqrt();
            backbone.push(AdaptedLinear::seeded(
                fan_in,
                width,
                std,
                sub_seed(seed, &format!("backbone.{i}")),
            ));
            fan_in = width;
        }
        let head = AdaptedLinear::seeded(fan_in, labels.len(), INIT_STD, sub_seed(seed, "head"));
        Ok(Self { backbone, head, labels })
    }

    /// Default 16 -> 64 -> 32 -> C network.
    pub fn with_defaults(labels: Vec<String>, seed: u64) -> Result<Self> {
        Self::new(DEFAULT_D_IN, &DEFAULT_HIDDEN, labels, seed)
    }

    pub fn from_parts(backbone: Vec<AdaptedLinear>, head: AdaptedLinear, labels: Vec<String>) -> Result<Self> {
        validate_labels(&labels)?;
        if backbone.is_empty() {
            return Err(Error::Contract("backbone needs at least one layer".into()));
        }
        for pair in backbone.windows(2) {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::dim(
                    "backbone chain",
                    pair[0].weight.shape(),
                    pair[1].weight.shape(),
                ));
            }
        }
        let last = backbone.last().expect("non-empty");
        if head.d_in() != last.d_out() {
            return Err(Error::dim("head input", last.weight.shape(), head.weight.shape()));
        }
        if head.d_out() != labels.len() {
            return Err(Error::Contract(format!(
                "head width {} does not match {} labels",
                head.d_out(),
                labels.len()
            )));
        }
        if head.adapter.is_some() {
            return Err(Error::Contract(
                "the head is trained directly and takes no adapter".into(),
            ));
        }
        Ok(Self { backbone, head, labels })
    }

    pub fn d_in(&self) -> usize {
        self.backbone[0].d_in()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn backbone(&self) -> &[AdaptedLinear] {
        &self.backbone
    }

    pub fn head(&self) -> &AdaptedLinear {
        &self.head
    }

    pub fn has_adapters(&self) -> bool {
        self.backbone.iter().any(|l| l.adapter.is_some())
    }

    /// Rank of the backbone adapters, if every layer carries one of equal rank.
    pub fn adapter_rank(&self) -> Option<usize> {
        let mut ranks = self.backbone.iter().map(|l| l.adapter.as_ref().map(LoraAdapter::rank));
        let first = ranks.next()??;
        ranks.all(|r| r == Some(first)).then_some(first)
    }

    /// Installs fresh adapters of `rank` on every backbone layer. A layer
    /// narrower than `rank` gets its maximal rank `min(d_in, d_out)`.
    pub fn attach_adapters(&mut self, rank: usize, seed: u64) -> Result<()> {
        if rank == 0 {
            return Err(Error::Contract("adapter rank must be positive".into()));
        }
        for (i, layer) in self.backbone.iter_mut().enumerate() {
            let r = rank.min(layer.d_in().min(layer.d_out()));
            let ad = LoraAdapter::init(layer.d_in(), layer.d_out(), r, sub_seed(seed, &format!("lora.{i}")))?;
            layer.attach(ad)?;
        }
        Ok(())
    }

    /// Folds every backbone adapter into its base weight.
    pub fn merge_adapters(&mut self) -> Result<()> {
        if !self.has_adapters() {
            return Err(Error::State("no adapters to merge".into()));
        }
        for layer in &mut self.backbone {
            if layer.adapter.is_some() {
                *layer = layer.merge()?;
            }
        }
        Ok(())
    }

    /// Replaces the head with a fresh seeded one for `new_labels`. Always
    /// re-initializes, even when the labels are unchanged.
    pub fn swap_head(&mut self, new_labels: Vec<String>, seed: u64) -> Result<()> {
        validate_labels(&new_labels)?;
        let hidden = self.head.d_in();
        self.head = AdaptedLinear::seeded(hidden, new_labels.len(), INIT_STD, seed);
        self.labels = new_labels;
        Ok(())
    }

    /// Backbone activations after the final ReLU.
    pub fn features(&self, x: &[f64]) -> Result<Matrix> {
        if x.len() != self.d_in() {
            return Err(Error::dim("forward", (self.d_in(), 1), (x.len(), 1)));
        }
        let mut h = Matrix::column(x);
        for layer in &self.backbone {
            h = relu(&layer.forward(&h)?);
        }
        Ok(h)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let h = self.features(x)?;
        Ok(self.head.forward(&h)?.into_vec())
    }

    pub fn predict(&self, x: &[f64]) -> Result<&str> {
        let logits = self.forward(x)?;
        Ok(&self.labels[argmax(&logits)])
    }

    /// Records the forward pass on `tape`. Returns the logits node and every
    /// tensor leaf; only trainable tensors are created with gradient.
    pub fn forward_on_tape(&self, tape: &mut Tape, x: &[f64]) -> Result<(NodeId, Vec<(ParamId, NodeId)>)> {
        if x.len() != self.d_in() {
            return Err(Error::dim("forward", (self.d_in(), 1), (x.len(), 1)));
        }
        let mut leaves = Vec::new();
        let mut h = tape.constant(Matrix::column(x));
        for (i, layer) in self.backbone.iter().enumerate() {
            let (y, nodes) = layer.forward_on_tape(tape, h, false)?;
            leaves.push((ParamId::BackboneWeight(i), nodes.weight));
            leaves.push((ParamId::BackboneBias(i), nodes.bias));
            if let Some((a, b)) = nodes.lora {
                leaves.push((ParamId::LoraA(i), a));
                leaves.push((ParamId::LoraB(i), b));
            }
            h = tape.relu(y);
        }
        let (logits, nodes) = self.head.forward_on_tape(tape, h, true)?;
        leaves.push((ParamId::HeadWeight, nodes.weight));
        leaves.push((ParamId::HeadBias, nodes.bias));
        Ok((logits, leaves))
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        match id {
            ParamId::BackboneWeight(_) | ParamId::BackboneBias(_) => false,
            ParamId::LoraA(i) | ParamId::LoraB(i) => self.backbone.get(i).is_some_and(|l| l.adapter.is_some()),
            ParamId::HeadWeight | ParamId::HeadBias => true,
        }
    }

    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        match id {
            ParamId::BackboneWeight(i) => self.backbone.get(i).map(|l| &l.weight),
            ParamId::BackboneBias(i) => self.backbone.get(i).map(|l| &l.bias),
            ParamId::LoraA(i) => self.backbone.get(i)?.adapter.as_ref().map(|a| &a.a),
            ParamId::LoraB(i) => self.backbone.get(i)?.adapter.as_ref().map(|a| &a.b),
            ParamId::HeadWeight => Some(&self.head.weight),
            ParamId::HeadBias => Some(&self.head.bias),
        }
    }

    fn param_mut(&mut self, id: ParamId) -> Option<&mut Matrix> {
        match id {
            ParamId::BackboneWeight(i) => self.backbone.get_mut(i).map(|l| &mut l.weight),
            ParamId::BackboneBias(i) => self.backbone.get_mut(i).map(|l| &mut l.bias),
            ParamId::LoraA(i) => self.backbone.get_mut(i)?.adapter.as_mut().map(|a| &mut a.a),
            ParamId::LoraB(i) => self.backbone.get_mut(i)?.adapter.as_mut().map(|a| &mut a.b),
            ParamId::HeadWeight => Some(&mut self.head.weight),
            ParamId::HeadBias => Some(&mut self.head.bias),
        }
    }

    /// Every tensor id currently present, in a fixed order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for (i, layer) in self.backbone.iter().enumerate() {
            ids.push(ParamId::BackboneWeight(i));
            ids.push(ParamId::BackboneBias(i));
            if layer.adapter.is_some() {
                ids.push(ParamId::LoraA(i));
                ids.push(ParamId::LoraB(i));
            }
        }
        ids.push(ParamId::HeadWeight);
        ids.push(ParamId::HeadBias);
        ids
    }

    /// Applies `p <- p - lr·g` to trainable tensors; frozen ones are skipped
    /// whatever their gradient.
    pub fn apply_gradients(&mut self, grads: &[(ParamId, Matrix)], lr: f64) -> Result<()> {
        for (id, g) in grads {
            if !self.is_trainable(*id) {
                continue;
            }
            let p = self
                .param_mut(*id)
                .ok_or_else(|| Error::Contract(format!("no tensor for {id:?}")))?;
            sgd_step(p, g, lr)?;
        }
        Ok(())
    }

    /// Trainable parameters across the backbone adapters and the head.
    pub fn trainable_param_count(&self) -> usize {
        self.backbone
            .iter()
            .map(AdaptedLinear::trainable_param_count)
            .sum::<usize>()
            + self.head.base_param_count()
            + self.head.bias.len()
    }

    /// Trainable parameters held by backbone adapters only.
    pub fn adapter_param_count(&self) -> usize {
        self.backbone.iter().map(AdaptedLinear::trainable_param_count).sum()
    }
}

/// `p <- p - lr·g` elementwise.
pub fn sgd_step(param: &mut Matrix, grad: &Matrix, lr: f64) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::dim("sgd_step", param.shape(), grad.shape()));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Contract(format!(
            "learning rate must be finite and non-negative, got {lr}"
        )));
    }
    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
    Ok(())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn relu(m: &Matrix) -> Matrix {
    m.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub(crate) fn validate_labels(labels: &[String]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Contract("label set must not be empty".into()));
    }
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(Error::Contract(format!("duplicate label {l:?}")));
        }
    }
    Ok(())
}
