use rayon::prelude::*;

use super::Tensor;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

fn geometry(input: &Tensor, cout: usize, k: usize, stride: usize, pad: usize) -> Geometry {
    let oh = (input.h + 2 * pad - k) / stride + 1;
    let ow = (input.w + 2 * pad - k) / stride + 1;
    Geometry {
        cin: input.c,
        h: input.h,
        w: input.w,
        cout,
        k,
        stride,
        pad,
        oh,
        ow,
    }
}

/// Output rows `oy` whose receptive tap `ky` lands inside the input.
fn valid_range(out_len: usize, in_len: usize, tap: usize, stride: usize, pad: usize) -> std::ops::Range<usize> {
    // in = o * stride + tap - pad must lie in [0, in_len)
    let lo = if tap >= pad { 0 } else { (pad - tap).div_ceil(stride) };
    let hi = if in_len + pad > tap {
        ((in_len + pad - tap - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    lo..hi.max(lo)
}

/// Square-kernel 2-D convolution (cross-correlation) with zero padding.
/// `weight` is laid out `[cout][cin][k][k]`.
pub fn conv2d(input: &Tensor, weight: &[f64], bias: &[f64], k: usize, stride: usize, pad: usize) -> Tensor {
    let cout = bias.len();
    let g = geometry(input, cout, k, stride, pad);
    debug_assert_eq!(weight.len(), cout * g.cin * k * k);
    let plane = g.oh * g.ow;
    let mut out = Tensor::zeros(cout, g.oh, g.ow);
    out.data.par_chunks_mut(plane).enumerate().for_each(|(co, o)| {
        o.fill(bias[co]);
        for ci in 0..g.cin {
            let inp = input.plane(ci);
            for ky in 0..k {
                let ys = valid_range(g.oh, g.h, ky, stride, pad);
                for kx in 0..k {
                    let wv = weight[((co * g.cin + ci) * k + ky) * k + kx];
                    let xs = valid_range(g.ow, g.w, kx, stride, pad);
                    for oy in ys.clone() {
                        let iy = oy * stride + ky - pad;
                        let row = &inp[iy * g.w..(iy + 1) * g.w];
                        let orow = &mut o[oy * g.ow..(oy + 1) * g.ow];
                        for ox in xs.clone() {
                            orow[ox] += wv * row[ox * stride + kx - pad];
                        }
                    }
                }
            }
        }
    });
    out
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of [`conv2d`]. Weight and bias gradients are skipped (left
/// empty) when `param_grads` is false; the input gradient is skipped when
/// `input_grad` is false.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
    k: usize,
    stride: usize,
    pad: usize,
    param_grads: bool,
    input_grad: bool,
) -> ConvGrads {
    let cout = grad_out.c;
    let g = geometry(input, cout, k, stride, pad);
    debug_assert_eq!((grad_out.h, grad_out.w), (g.oh, g.ow));
    let (weight_grad, bias_grad) = if param_grads {
        let per_co: Vec<(Vec<f64>, f64)> = (0..cout)
            .into_par_iter()
            .map(|co| weight_grad_for(input, grad_out.plane(co), &g))
            .collect();
        let mut wg = Vec::with_capacity(cout * g.cin * k * k);
        let mut bg = Vec::with_capacity(cout);
        for (w, b) in per_co {
            wg.extend(w);
            bg.push(b);
        }
        (wg, bg)
    } else {
        (Vec::new(), Vec::new())
    };
    let input = input_grad.then(|| {
        let mut gi = Tensor::zeros(g.cin, g.h, g.w);
        gi.data
            .par_chunks_mut(g.h * g.w)
            .enumerate()
            .for_each(|(ci, gplane)| input_grad_for(ci, weight, grad_out, &g, gplane));
        gi
    });
    ConvGrads {
        input,
        weight: weight_grad,
        bias: bias_grad,
    }
}

fn weight_grad_for(input: &Tensor, gout: &[f64], g: &Geometry) -> (Vec<f64>, f64) {
    let k = g.k;
    let mut wg = vec![0.0; g.cin * k * k];
    for ci in 0..g.cin {
        let inp = input.plane(ci);
        for ky in 0..k {
            let ys = valid_range(g.oh, g.h, ky, g.stride, g.pad);
            for kx in 0..k {
                let xs = valid_range(g.ow, g.w, kx, g.stride, g.pad);
                let mut s = 0.0;
                for oy in ys.clone() {
                    let iy = oy * g.stride + ky - g.pad;
                    let row = &inp[iy * g.w..(iy + 1) * g.w];
                    let grow = &gout[oy * g.ow..(oy + 1) * g.ow];
                    for ox in xs.clone() {
                        s += grow[ox] * row[ox * g.stride + kx - g.pad];
                    }
                }
                wg[(ci * k + ky) * k + kx] = s;
            }
        }
    }
    (wg, gout.iter().sum())
}

fn input_grad_for(ci: usize, weight: &[f64], grad_out: &Tensor, g: &Geometry, gplane: &mut [f64]) {
    let k = g.k;
    for co in 0..g.cout {
        let gout = grad_out.plane(co);
        for ky in 0..k {
            let ys = valid_range(g.oh, g.h, ky, g.stride, g.pad);
            for kx in 0..k {
                let wv = weight[((co * g.cin + ci) * k + ky) * k + kx];
                let xs = valid_range(g.ow, g.w, kx, g.stride, g.pad);
                for oy in ys.clone() {
                    let iy = oy * g.stride + ky - g.pad;
                    let grow = &gout[oy * g.ow..(oy + 1) * g.ow];
                    let irow = &mut gplane[iy * g.w..(iy + 1) * g.w];
                    for ox in xs.clone() {
                        irow[ox * g.stride + kx - g.pad] += wv * grow[ox];
                    }
                }
            }
        }
    }
}
