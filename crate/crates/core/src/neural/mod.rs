//! A small pre-LayerNorm transformer encoder with hand-written reverse-mode
//! gradients, an AdamW optimizer, checkpoint I/O and a finite-difference
//! gradient checker.
//!
//! Models expose their tensors through [`Parameterized`]; gradient
//! accumulators are zero-initialised copies of the model itself, so the
//! optimizer and the checker can walk parameters and gradients in lockstep.

mod checkpoint;
mod encoder;
mod gradcheck;
pub(crate) mod ops;
mod optim;

pub use checkpoint::{read_checkpoint, save_checkpoint, Checkpoint, NamedTensor};
pub use encoder::{Encoder, EncoderConfig, EncoderFreeze, ForwardCache};
pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{AdamW, OptimConfig};

use crate::error::Result;
use crate::scalar::Scalar;

/// Which entries of a tensor the optimizer may touch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Freeze {
    None,
    All,
    /// Listed rows of a 2-D tensor are fixed; the rest train.
    Rows(Vec<usize>),
}

impl Freeze {
    pub fn is_frozen(&self, flat_index: usize, row_width: usize) -> bool {
        match self {
            Freeze::None => false,
            Freeze::All => true,
            Freeze::Rows(rows) => rows.contains(&(flat_index / row_width.max(1))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub freeze: Freeze,
}

impl ParamInfo {
    pub fn new(name: impl Into<String>, shape: &[usize], freeze: Freeze) -> Self {
        ParamInfo {
            name: name.into(),
            shape: shape.to_vec(),
            freeze,
        }
    }

    pub fn row_width(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }
}

/// A model whose parameters are a fixed, ordered list of named tensors.
pub trait Parameterized<T: Scalar>: Clone {
    fn params(&self) -> Vec<(ParamInfo, &[T])>;

    /// Same order as [`Parameterized::params`].
    fn params_mut(&mut self) -> Vec<&mut [T]>;

    /// Copy with every parameter set to zero, used as a gradient accumulator.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.params_mut() {
            t.fill(T::zero());
        }
        z
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.params().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

/// A differentiable training objective evaluated against a model.
pub trait Objective<T: Scalar, M: Parameterized<T>> {
    fn loss(&self, model: &M) -> Result<T>;

    /// Loss and gradients; frozen parameters get zero gradient.
    fn loss_and_grad(&self, model: &M) -> Result<(T, M)>;
}

/// Sets the gradient of frozen entries to zero.
pub fn mask_frozen<T: Scalar, M: Parameterized<T>>(model: &M, grads: &mut M) {
    let infos: Vec<ParamInfo> = model.params().into_iter().map(|(i, _)| i).collect();
    for (info, g) in infos.iter().zip(grads.params_mut()) {
        match &info.freeze {
            Freeze::None => {}
            Freeze::All => g.fill(T::zero()),
            Freeze::Rows(rows) => {
                let w = info.row_width();
                for &r in rows {
                    if let Some(row) = g.get_mut(r * w..(r + 1) * w) {
                        row.fill(T::zero());
                    }
                }
            }
        }
    }
}

/// `acc += other`, tensor by tensor.
pub fn accumulate<T: Scalar, M: Parameterized<T>>(acc: &mut M, other: &M) {
    let src: Vec<Vec<T>> = other.params().into_iter().map(|(_, t)| t.to_vec()).collect();
    for (dst, s) in acc.params_mut().into_iter().zip(src) {
        for (d, x) in dst.iter_mut().zip(s) {
            *d += x;
        }
    }
}

/// `grads *= factor`.
pub fn scale<T: Scalar, M: Parameterized<T>>(grads: &mut M, factor: T) {
    for t in grads.params_mut() {
        for x in t.iter_mut() {
            *x *= factor;
        }
    }
}
