use super::window::{relative_position_index, shift_mask, window_partition, window_reverse};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, Mlp, MultiHeadAttention};
use crate::tensor::{Graph, Init, ParamStore, Tensor, Var};

/// Shift used by a block that asks for `shift` on an `h×w` grid: windows
/// that already cover the short side are never shifted.
pub fn effective_shift(h: usize, w: usize, win: usize, shift: usize) -> usize {
    if h.min(w) <= win {
        0
    } else {
        shift
    }
}

/// Pre-norm transformer block with (shifted) window attention.
#[derive(Debug, Clone)]
pub struct SwinBlock {
    norm1: LayerNorm,
    attn: MultiHeadAttention,
    rel_bias: Option<(String, Vec<Option<usize>>)>,
    norm2: LayerNorm,
    mlp: Mlp,
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
}

pub struct BlockOutput<'g> {
    pub out: Var<'g>,
    /// Post-softmax attention weights `[nW×heads×w²×w²]`.
    pub attention: Var<'g>,
}

impl SwinBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        seed: u64,
        prefix: &str,
        dim: usize,
        heads: usize,
        window: usize,
        mlp_ratio: usize,
        relative_bias: bool,
    ) -> Result<Self> {
        let attn = MultiHeadAttention::new(store, seed, &format!("{prefix}.attn"), dim, heads)?;
        let rel_bias = relative_bias.then(|| {
            let name = format!("{prefix}.attn.rel_bias");
            let side = 2 * window - 1;
            store.init(&name, &[side * side, heads], Init::Normal { std: crate::nn::EMBED_STD }, seed);
            let n = window * window;
            let rel = relative_position_index(window);
            let mut idx = Vec::with_capacity(heads * n * n);
            for h in 0..heads {
                idx.extend(rel.iter().map(|&r| Some(r * heads + h)));
            }
            (name, idx)
        });
        Ok(Self {
            norm1: LayerNorm::new(store, seed, &format!("{prefix}.norm1"), dim),
            attn,
            rel_bias,
            norm2: LayerNorm::new(store, seed, &format!("{prefix}.norm2"), dim),
            mlp: Mlp::new(store, seed, &format!("{prefix}.mlp"), dim, dim * mlp_ratio),
            dim,
            heads,
            window,
        })
    }

    /// `x` is `[H×W′×C]`; the output has the same shape.
    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>, shift: usize) -> Result<BlockOutput<'g>> {
        let shape = x.shape();
        let [h, w, c] = shape[..] else {
            return Err(Error::shape(format!("swin block expects [H, W, C], got {shape:?}")));
        };
        if c != self.dim {
            return Err(Error::shape(format!("swin block width {c}, expected {}", self.dim)));
        }
        let win = self.window;
        let n = win * win;

        let mut y = self.norm1.forward(g, store, x)?;
        if shift > 0 {
            y = y.roll(0, -(shift as isize))?.roll(1, -(shift as isize))?;
        }
        let windows = window_partition(y, win)?;
        let nw = windows.shape()[0];

        let mut biases = Vec::with_capacity(2);
        if let Some((name, idx)) = &self.rel_bias {
            biases.push(g.param(store, name)?.take(&[self.heads, n, n], idx)?);
        }
        if shift > 0 {
            let mask = shift_mask(h, w, win, shift)?;
            let mut full = Vec::with_capacity(nw * self.heads * n * n);
            for wi in 0..nw {
                let m = &mask.data()[wi * n * n..(wi + 1) * n * n];
                for _ in 0..self.heads {
                    full.extend_from_slice(m);
                }
            }
            biases.push(g.constant(Tensor::new(&[nw, self.heads, n, n], full)?));
        }
        let att = self.attn.forward(g, store, windows, &biases)?;
        let mut y = window_reverse(att.out, h, w, win)?;
        if shift > 0 {
            y = y.roll(0, shift as isize)?.roll(1, shift as isize)?;
        }
        let x = x.add(y)?;
        let m = self.mlp.forward(g, store, self.norm2.forward(g, store, x)?)?;
        Ok(BlockOutput { out: x.add(m)?, attention: att.weights })
    }
}

/// 2×2 neighbourhood concatenation, layer norm, and a bias-free `4C → 2C`
/// projection.
#[derive(Debug, Clone)]
pub struct PatchMerge {
    norm: LayerNorm,
    reduction: Linear,
    pub dim: usize,
}

impl PatchMerge {
    pub fn new(store: &mut ParamStore, seed: u64, prefix: &str, dim: usize) -> Self {
        Self {
            norm: LayerNorm::new(store, seed, &format!("{prefix}.norm"), 4 * dim),
            reduction: Linear::new(store, seed, &format!("{prefix}.reduction"), 4 * dim, 2 * dim, false),
            dim,
        }
    }

    /// `[H×W′×C] → [H/2×W′/2×2C]`. The concatenation order is
    /// `(2i,2j), (2i+1,2j), (2i,2j+1), (2i+1,2j+1)`.
    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        let shape = x.shape();
        let [h, w, c] = shape[..] else {
            return Err(Error::shape(format!("patch merge expects [H, W, C], got {shape:?}")));
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!("patch merge needs even grid, got {h}x{w}")));
        }
        if c != self.dim {
            return Err(Error::shape(format!("patch merge width {c}, expected {}", self.dim)));
        }
        let cat = x.reshape(&[h / 2, 2, w / 2, 2, c])?.permute(&[0, 2, 3, 1, 4])?.reshape(&[h / 2, w / 2, 4 * c])?;
        let normed = self.norm.forward(g, store, cat)?;
        self.reduction.forward(g, store, normed)
    }
}
