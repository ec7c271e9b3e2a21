//! 2-D convolution via im2col and the matrix kernels.

use crate::error::{Error, Result};
use crate::paramcount::output_dim;
use crate::tensor::{gemm, Shape4, Tensor};

/// Square-kernel convolution parameters. Weights are `out × in × F × F`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weights: Tensor,
    pub bias: Option<Tensor>,
}

impl ConvParams {
    /// Zero-initialized parameters.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        use_bias: bool,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
            return Err(Error::InvalidConfig(format!(
                "conv needs positive channels, kernel and stride \
                 (in={in_channels}, out={out_channels}, F={kernel}, S={stride})"
            )));
        }
        Ok(ConvParams {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weights: Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
            bias: use_bias.then(|| Tensor::zeros(&[out_channels])),
        })
    }

    pub fn use_bias(&self) -> bool {
        self.bias.is_some()
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        if input.c != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {}",
                self.in_channels, input.c
            )));
        }
        let h = output_dim(input.h, self.kernel, self.stride, self.padding)?;
        let w = output_dim(input.w, self.kernel, self.stride, self.padding)?;
        Shape4::new(input.n, self.out_channels, h, w)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    f: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
}

/// Output columns `[lo, hi)` whose input column `ox·s + kx − p` lies inside the image.
fn valid_cols(g: &Geometry, kx: usize) -> (usize, usize) {
    let lo = if g.p > kx { (g.p - kx).div_ceil(g.s) } else { 0 };
    let hi = if g.w + g.p > kx { (g.w + g.p - kx).div_ceil(g.s).min(g.ow) } else { 0 };
    (lo.min(hi), hi)
}

fn im2col(x: &[f64], g: &Geometry, cols: &mut [f64]) {
    let out_plane = g.oh * g.ow;
    for c in 0..g.cin {
        for ky in 0..g.f {
            for kx in 0..g.f {
                let row = (c * g.f + ky) * g.f + kx;
                let dst = &mut cols[row * out_plane..(row + 1) * out_plane];
                let (lo, hi) = valid_cols(g, kx);
                for oy in 0..g.oh {
                    let iy = (oy * g.s + ky) as isize - g.p as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    line[..lo].fill(0.0);
                    line[hi..].fill(0.0);
                    if lo < hi {
                        let first = lo * g.s + kx - g.p;
                        if g.s == 1 {
                            line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (v, ix) in line[lo..hi].iter_mut().zip((first..).step_by(g.s)) {
                                *v = src[ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &Geometry, x: &mut [f64]) {
    let out_plane = g.oh * g.ow;
    for c in 0..g.cin {
        for ky in 0..g.f {
            for kx in 0..g.f {
                let row = (c * g.f + ky) * g.f + kx;
                let src = &cols[row * out_plane..(row + 1) * out_plane];
                let (lo, hi) = valid_cols(g, kx);
                if lo >= hi {
                    continue;
                }
                let first = lo * g.s + kx - g.p;
                for oy in 0..g.oh {
                    let iy = (oy * g.s + ky) as isize - g.p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    let line = &src[oy * g.ow + lo..oy * g.ow + hi];
                    if g.s == 1 {
                        let dst = &mut x[base + first..base + first + hi - lo];
                        dst.iter_mut().zip(line).for_each(|(d, v)| *d += v);
                    } else {
                        for (v, ix) in line.iter().zip((first..).step_by(g.s)) {
                            x[base + ix] += v;
                        }
                    }
                }
            }
        }
    }
}

fn geometry(p: &ConvParams, input: Shape4) -> Result<(Geometry, Shape4)> {
    let out = p.output_shape(input)?;
    Ok((
        Geometry {
            cin: input.c,
            h: input.h,
            w: input.w,
            f: p.kernel,
            s: p.stride,
            p: p.padding,
            oh: out.h,
            ow: out.w,
        },
        out,
    ))
}

pub fn conv2d_forward(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let input = x.shape4()?;
    let (g, out) = geometry(p, input)?;
    let k = p.patch_len();
    let out_plane = out.plane();
    let mut cols = vec![0.0; if p.is_pointwise() { 0 } else { k * out_plane }];
    let mut y = vec![0.0; out.count()];
    let w = p.weights.data();
    for n in 0..input.n {
        let xs = &x.data()[n * input.sample_len()..(n + 1) * input.sample_len()];
        let patches: &[f64] = if p.is_pointwise() {
            xs
        } else {
            im2col(xs, &g, &mut cols);
            &cols
        };
        let ys = &mut y[n * out.sample_len()..(n + 1) * out.sample_len()];
        gemm::gemm_nn(p.out_channels, k, out_plane, w, patches, ys, false);
        if let Some(b) = &p.bias {
            for (co, &bv) in b.data().iter().enumerate() {
                ys[co * out_plane..(co + 1) * out_plane]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
    }
    Tensor::from_shape4(out, y)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub grad_x: Tensor,
    pub grad_w: Tensor,
    pub grad_b: Option<Tensor>,
}

/// Gradients of a convolution given its forward input `x` and `grad_out`.
pub fn conv2d_backward(x: &Tensor, p: &ConvParams, grad_out: &Tensor) -> Result<ConvGrads> {
    let input = x.shape4()?;
    let (g, out) = geometry(p, input)?;
    if grad_out.shape() != out.to_vec().as_slice() {
        return Err(Error::TapeMismatch(format!(
            "conv grad_out shape {:?}, forward output was {out}",
            grad_out.shape()
        )));
    }
    let k = p.patch_len();
    let out_plane = out.plane();
    let mut cols = vec![0.0; k * out_plane];
    let mut grad_cols = vec![0.0; k * out_plane];
    let mut grad_w = vec![0.0; p.out_channels * k];
    let mut grad_b = p.bias.as_ref().map(|_| vec![0.0; p.out_channels]);
    let mut grad_x = vec![0.0; input.count()];
    let w = p.weights.data();
    for n in 0..input.n {
        let xs = &x.data()[n * input.sample_len()..(n + 1) * input.sample_len()];
        let gs = &grad_out.data()[n * out.sample_len()..(n + 1) * out.sample_len()];
        let patches: &[f64] = if p.is_pointwise() {
            xs
        } else {
            im2col(xs, &g, &mut cols);
            &cols
        };
        gemm::gemm_nt(p.out_channels, out_plane, k, gs, patches, &mut grad_w, true);
        if let Some(gb) = grad_b.as_mut() {
            for (co, slot) in gb.iter_mut().enumerate() {
                *slot += gs[co * out_plane..(co + 1) * out_plane].iter().sum::<f64>();
            }
        }
        let gx = &mut grad_x[n * input.sample_len()..(n + 1) * input.sample_len()];
        if p.is_pointwise() {
            gemm::gemm_tn(k, p.out_channels, out_plane, w, gs, gx, false);
        } else {
            gemm::gemm_tn(k, p.out_channels, out_plane, w, gs, &mut grad_cols, false);
            col2im(&grad_cols, &g, gx);
        }
    }
    Ok(ConvGrads {
        grad_x: Tensor::from_shape4(input, grad_x)?,
        grad_w: Tensor::new(p.weights.shape().to_vec(), grad_w)?,
        grad_b: grad_b.map(|b| Tensor::new(vec![p.out_channels], b)).transpose()?,
    })
}
