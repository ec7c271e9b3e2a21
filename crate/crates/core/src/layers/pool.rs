//! 2×2/stride-2 max and average pooling, and global average pooling.

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};

fn halved(s: Shape4, what: &str) -> Result<Shape4> {
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{what} needs even spatial extents, got {}x{}",
            s.h, s.w
        )));
    }
    Shape4::new(s.n, s.c, s.h / 2, s.w / 2)
}

/// Max over each 2×2 window. Returns the output and, per output element, the
/// flat input index of the window maximum (first in row-major order on ties).
pub fn maxpool2x2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let s = x.shape4()?;
    let o = halved(s, "maxpool")?;
    let xd = x.data();
    let mut out = Vec::with_capacity(o.count());
    let mut arg = Vec::with_capacity(o.count());
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for oy in 0..o.h {
            for ox in 0..o.w {
                let top = base + 2 * oy * s.w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + s.w, top + s.w + 1] {
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::from_shape4(o, out)?, arg))
}

pub fn maxpool2x2_backward(input: Shape4, argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::TapeMismatch(format!(
            "maxpool grad has {} elements, forward routed {}",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut gx = vec![0.0; input.count()];
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        gx[i] += g;
    }
    Tensor::from_shape4(input, gx)
}

pub fn avgpool2x2(x: &Tensor) -> Result<Tensor> {
    let s = x.shape4()?;
    let o = halved(s, "avgpool")?;
    let xd = x.data();
    let mut out = Vec::with_capacity(o.count());
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for oy in 0..o.h {
            for ox in 0..o.w {
                let top = base + 2 * oy * s.w + 2 * ox;
                out.push(0.25 * (xd[top] + xd[top + 1] + xd[top + s.w] + xd[top + s.w + 1]));
            }
        }
    }
    Tensor::from_shape4(o, out)
}

pub fn avgpool2x2_backward(input: Shape4, grad_out: &Tensor) -> Result<Tensor> {
    let o = halved(input, "avgpool")?;
    if grad_out.shape() != o.to_vec().as_slice() {
        return Err(Error::TapeMismatch(format!(
            "avgpool grad shape {:?}, expected {o}",
            grad_out.shape()
        )));
    }
    let mut gx = vec![0.0; input.count()];
    let gd = grad_out.data();
    for nc in 0..input.n * input.c {
        let base = nc * input.plane();
        for oy in 0..o.h {
            for ox in 0..o.w {
                let g = 0.25 * gd[(nc * o.h + oy) * o.w + ox];
                let top = base + 2 * oy * input.w + 2 * ox;
                for idx in [top, top + 1, top + input.w, top + input.w + 1] {
                    gx[idx] += g;
                }
            }
        }
    }
    Tensor::from_shape4(input, gx)
}

/// Spatial mean of every channel: N×C×H×W → N×C.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let s = x.shape4()?;
    let plane = s.plane();
    let out = x
        .data()
        .chunks(plane)
        .map(|ch| ch.iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor::new(vec![s.n, s.c], out)
}

pub fn global_avg_pool_backward(input: Shape4, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != [input.n, input.c] {
        return Err(Error::TapeMismatch(format!(
            "gap grad shape {:?}, expected [{}, {}]",
            grad_out.shape(),
            input.n,
            input.c
        )));
    }
    let plane = input.plane();
    let inv = 1.0 / plane as f64;
    let mut gx = Vec::with_capacity(input.count());
    for &g in grad_out.data() {
        gx.extend(std::iter::repeat_n(g * inv, plane));
    }
    Tensor::from_shape4(input, gx)
}
