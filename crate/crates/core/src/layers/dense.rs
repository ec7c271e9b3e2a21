//! Fully connected layer. 4-D inputs are flattened per sample.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// `y = x·W (+ b)` with `W: D×K`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weights: Tensor,
    pub bias: Option<Tensor>,
}

impl DenseParams {
    pub fn new(inputs: usize, outputs: usize, use_bias: bool) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::InvalidConfig(format!(
                "dense layer needs positive sizes, got {inputs}->{outputs}"
            )));
        }
        Ok(DenseParams {
            weights: Tensor::zeros(&[inputs, outputs]),
            bias: use_bias.then(|| Tensor::zeros(&[outputs])),
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[1]
    }
}

fn rows(x: &Tensor, d: usize) -> Result<usize> {
    let n = x.shape()[0];
    if x.rank() < 2 || x.len() != n * d {
        return Err(Error::ShapeMismatch(format!(
            "dense expects {d} features per sample, got shape {:?}",
            x.shape()
        )));
    }
    Ok(n)
}

pub fn dense_forward(x: &Tensor, p: &DenseParams) -> Result<Tensor> {
    let (d, k) = (p.inputs(), p.outputs());
    let n = rows(x, d)?;
    let mut y = vec![0.0; n * k];
    gemm::gemm_nn(n, d, k, x.data(), p.weights.data(), &mut y, false);
    if let Some(b) = &p.bias {
        for row in y.chunks_mut(k) {
            row.iter_mut().zip(b.data()).for_each(|(v, bv)| *v += bv);
        }
    }
    Tensor::new(vec![n, k], y)
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub grad_x: Tensor,
    pub grad_w: Tensor,
    pub grad_b: Option<Tensor>,
}

pub fn dense_backward(x: &Tensor, p: &DenseParams, grad_out: &Tensor) -> Result<DenseGrads> {
    let (d, k) = (p.inputs(), p.outputs());
    let n = rows(x, d)?;
    if grad_out.shape() != [n, k] {
        return Err(Error::TapeMismatch(format!(
            "dense grad shape {:?}, expected [{n}, {k}]",
            grad_out.shape()
        )));
    }
    let g = grad_out.data();
    let mut gw = vec![0.0; d * k];
    gemm::gemm_tn(d, n, k, x.data(), g, &mut gw, false);
    let mut gx = vec![0.0; n * d];
    gemm::gemm_nt(n, k, d, g, p.weights.data(), &mut gx, false);
    let grad_b = p
        .bias
        .as_ref()
        .map(|_| {
            let mut gb = vec![0.0; k];
            for row in g.chunks(k) {
                gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            }
            Tensor::new(vec![k], gb)
        })
        .transpose()?;
    Ok(DenseGrads {
        grad_x: Tensor::new(x.shape().to_vec(), gx)?,
        grad_w: Tensor::new(vec![d, k], gw)?,
        grad_b,
    })
}
