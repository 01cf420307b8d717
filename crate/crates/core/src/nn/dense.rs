use rayon::prelude::*;

/// `y = W x + b` with `W` stored row-major as `[out][in]`.
pub fn dense(x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    debug_assert_eq!(weight.len(), n_in * bias.len());
    weight
        .par_chunks(n_in)
        .zip(bias.par_iter())
        .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

/// Returns `(dL/dx, dL/dW, dL/db)`; `dL/dW` is empty unless `param_grads`.
pub fn dense_backward(x: &[f64], weight: &[f64], grad_out: &[f64], param_grads: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n_in = x.len();
    let mut gx = vec![0.0; n_in];
    gx.par_chunks_mut(1024).enumerate().for_each(|(blk, chunk)| {
        let start = blk * 1024;
        for (o, g) in grad_out.iter().enumerate() {
            if *g == 0.0 {
                continue;
            }
            let row = &weight[o * n_in + start..o * n_in + start + chunk.len()];
            for (c, w) in chunk.iter_mut().zip(row) {
                *c += g * w;
            }
        }
    });
    let gw = if param_grads {
        let mut gw = vec![0.0; weight.len()];
        gw.par_chunks_mut(n_in).zip(grad_out.par_iter()).for_each(|(row, g)| {
            for (r, v) in row.iter_mut().zip(x) {
                *r = g * v;
            }
        });
        gw
    } else {
        Vec::new()
    };
    (gx, gw, grad_out.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_and_backward_by_hand() {
        let w = [1.0, 2.0, 3.0, -1.0, 0.5, 0.0];
        let y = dense(&[1.0, -1.0, 2.0], &w, &[0.5, 1.0]);
        assert_eq!(y, vec![1.0 - 2.0 + 6.0 + 0.5, -1.0 - 0.5 + 1.0]);
        let (gx, gw, gb) = dense_backward(&[1.0, -1.0, 2.0], &w, &[1.0, 2.0], true);
        assert_eq!(gx, vec![1.0 - 2.0, 2.0 + 1.0, 3.0]);
        assert_eq!(gw, vec![1.0, -1.0, 2.0, 2.0, -2.0, 4.0]);
        assert_eq!(gb, vec![1.0, 2.0]);
    }
}
