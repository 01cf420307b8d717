//! Minimal float64 tensor operations with hand-written backward passes.
//!
//! Tensors are single samples in channel-height-width layout; batching is
//! done by the caller. Every reduction runs in a fixed order so results are
//! bit-identical regardless of the number of worker threads.

mod conv;
mod dense;

pub use conv::{conv2d, conv2d_backward, ConvGrads};
pub use dense::{dense, dense_backward};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::Shape(format!(
                "{} values for a {c}x{h}x{w} tensor",
                data.len()
            )));
        }
        Ok(Self { c, h, w, data })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    /// Stack along the channel axis.
    pub fn concat(parts: &[&Tensor]) -> Tensor {
        let (h, w) = (parts[0].h, parts[0].w);
        debug_assert!(parts.iter().all(|t| t.h == h && t.w == w));
        let c = parts.iter().map(|t| t.c).sum();
        let mut data = Vec::with_capacity(c * h * w);
        for t in parts {
            data.extend_from_slice(&t.data);
        }
        Tensor { c, h, w, data }
    }

    /// Inverse of [`Tensor::concat`] for a gradient.
    pub fn split(&self, channels: &[usize]) -> Vec<Tensor> {
        let n = self.h * self.w;
        let mut off = 0;
        channels
            .iter()
            .map(|&c| {
                let t = Tensor {
                    c,
                    h: self.h,
                    w: self.w,
                    data: self.data[off * n..(off + c) * n].to_vec(),
                };
                off += c;
                t
            })
            .collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }
}

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(t: &mut Tensor) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
}

pub fn relu(t: &mut Tensor) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Backward through an activation given its output `y`, in place on `grad`.
pub fn leaky_relu_backward(y: &[f64], grad: &mut [f64]) {
    for (g, &v) in grad.iter_mut().zip(y) {
        if v < 0.0 {
            *g *= LEAKY_SLOPE;
        }
    }
}

pub fn relu_backward(y: &[f64], grad: &mut [f64]) {
    for (g, &v) in grad.iter_mut().zip(y) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn upsample2(t: &Tensor) -> Tensor {
    let (h2, w2) = (2 * t.h, 2 * t.w);
    let mut out = Tensor::zeros(t.c, h2, w2);
    for c in 0..t.c {
        for y in 0..h2 {
            for x in 0..w2 {
                out.data[(c * h2 + y) * w2 + x] = t.data[(c * t.h + y / 2) * t.w + x / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(grad: &Tensor) -> Tensor {
    let (h, w) = (grad.h / 2, grad.w / 2);
    let mut out = Tensor::zeros(grad.c, h, w);
    for c in 0..grad.c {
        for y in 0..grad.h {
            for x in 0..grad.w {
                out.data[(c * h + y / 2) * w + x / 2] += grad.data[(c * grad.h + y) * grad.w + x];
            }
        }
    }
    out
}

/// 2x2 max pooling with stride 2. Returns the output and, per output
/// element, the flat index of the selected input element.
pub fn max_pool2(t: &Tensor) -> (Tensor, Vec<usize>) {
    let (h, w) = (t.h / 2, t.w / 2);
    let mut out = Tensor::zeros(t.c, h, w);
    let mut arg = vec![0; t.c * h * w];
    for c in 0..t.c {
        for y in 0..h {
            for x in 0..w {
                let mut best = (c * t.h + 2 * y) * t.w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (c * t.h + 2 * y + dy) * t.w + 2 * x + dx;
                    if t.data[i] > t.data[best] {
                        best = i;
                    }
                }
                let o = (c * h + y) * w + x;
                out.data[o] = t.data[best];
                arg[o] = best;
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward(grad: &Tensor, arg: &[usize], input_shape: (usize, usize, usize)) -> Tensor {
    let (c, h, w) = input_shape;
    let mut out = Tensor::zeros(c, h, w);
    for (g, &i) in grad.data.iter().zip(arg) {
        out.data[i] += g;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_backward_is_the_adjoint() {
        let t = Tensor::from_vec(2, 2, 3, (0..12).map(|v| v as f64 * 0.3 - 1.0).collect()).unwrap();
        let g = Tensor::from_vec(2, 4, 6, (0..48).map(|v| ((v * 7) % 11) as f64).collect()).unwrap();
        let lhs: f64 = upsample2(&t).data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = t.data.iter().zip(&upsample2_backward(&g).data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn pooling_picks_the_maximum() {
        let t = Tensor::from_vec(1, 2, 4, vec![1.0, 5.0, 0.0, -1.0, 2.0, 3.0, -2.0, -3.0]).unwrap();
        let (p, arg) = max_pool2(&t);
        assert_eq!(p.data, vec![5.0, 0.0]);
        let g = max_pool2_backward(&Tensor::from_vec(1, 1, 2, vec![1.0, 2.0]).unwrap(), &arg, t.shape());
        assert_eq!(g.data, vec![0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn concat_split_round_trip() {
        let a = Tensor::from_vec(1, 1, 2, vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(2, 1, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = Tensor::concat(&[&a, &b]);
        assert_eq!(c.split(&[1, 2]), vec![a, b]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.3) - 1.0 / (1.0 + (-0.3f64).exp())).abs() < 1e-16);
    }
}
