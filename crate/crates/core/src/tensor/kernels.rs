// Raw slice kernels shared by the graph's forward and backward passes.

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · g[m×n]`
pub(crate) fn gemm_tn_acc(out: &mut [f64], a: &[f64], g: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Numerically stable softmax over contiguous slices of length `n`.
pub(crate) fn softmax_rows(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    out
}

pub(crate) struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm_rows(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    d: usize,
    eps: f64,
) -> (Vec<f64>, LayerNormCache) {
    let rows = x.len() / d;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let s = &x[r * d..(r + 1) * d];
        let mean = s.iter().sum::<f64>() / d as f64;
        let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (s[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gamma[j] + beta[j];
        }
    }
    (out, LayerNormCache { xhat, rstd })
}

/// Shape parameters of a single-sample 1-D convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv1dDims {
    pub c_in: usize,
    pub len: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_len: usize,
}

impl Conv1dDims {
    /// Input index for output position `t` and tap `k`, or `None` inside padding.
    #[inline]
    fn src(&self, t: usize, k: usize) -> Option<usize> {
        let pos = (t * self.stride + k).checked_sub(self.padding)?;
        (pos < self.len).then_some(pos)
    }
}

/// Cross-correlation: `y[o,t] = b[o] + Σ_{c,k} w[o,c,k] · x[c, t·stride + k − padding]`.
pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, d: Conv1dDims) -> Vec<f64> {
    let mut y = vec![0.0; d.c_out * d.out_len];
    for o in 0..d.c_out {
        let yrow = &mut y[o * d.out_len..(o + 1) * d.out_len];
        if let Some(b) = bias {
            yrow.iter_mut().for_each(|v| *v = b[o]);
        }
        for c in 0..d.c_in {
            let xrow = &x[c * d.len..(c + 1) * d.len];
            for k in 0..d.kernel {
                let wv = w[(o * d.c_in + c) * d.kernel + k];
                for (t, yv) in yrow.iter_mut().enumerate() {
                    if let Some(p) = d.src(t, k) {
                        *yv += wv * xrow[p];
                    }
                }
            }
        }
    }
    y
}

/// Returns `(dx, dw, db)` for upstream gradient `gy`.
pub(crate) fn conv1d_backward(x: &[f64], w: &[f64], gy: &[f64], d: Conv1dDims) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; d.c_out];
    for o in 0..d.c_out {
        let grow = &gy[o * d.out_len..(o + 1) * d.out_len];
        db[o] = grow.iter().sum();
        for c in 0..d.c_in {
            let xrow = &x[c * d.len..(c + 1) * d.len];
            for k in 0..d.kernel {
                let wi = (o * d.c_in + c) * d.kernel + k;
                let wv = w[wi];
                let mut acc = 0.0;
                for (t, g) in grow.iter().enumerate() {
                    if let Some(p) = d.src(t, k) {
                        acc += g * xrow[p];
                        dx[c * d.len + p] += g * wv;
                    }
                }
                dw[wi] += acc;
            }
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut ab = vec![0.0; 4];
        gemm_acc(&mut ab, &a, &b, 2, 3, 2);
        assert_eq!(ab, vec![58.0, 64.0, 139.0, 154.0]);

        // b transposed is 2x3: [[7,9,11],[8,10,12]]
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut abt = vec![0.0; 4];
        gemm_nt_acc(&mut abt, &a, &bt, 2, 3, 2);
        assert_eq!(abt, ab);

        let mut atg = vec![0.0; 6];
        gemm_tn_acc(&mut atg, &a, &[1.0, 0.0, 0.0, 1.0], 2, 3, 2);
        assert_eq!(atg, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((num - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }
}
