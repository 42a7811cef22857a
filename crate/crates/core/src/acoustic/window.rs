//! Window partitioning, cyclic-shift masks and relative-position indices.

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Additive mask value separating tokens from different shift regions.
pub const MASK_NEG: f64 = -1e9;

fn check_divisible(h: usize, w: usize, win: usize) -> Result<()> {
    if win == 0 || h % win != 0 || w % win != 0 {
        return Err(Error::shape(format!("grid {h}x{w} not divisible by window {win}")));
    }
    Ok(())
}

/// `[H×W′×C] → [(H/w·W′/w)×w²×C]`, windows in row-major grid order and
/// tokens row-major within each window.
pub fn window_partition<'g>(x: Var<'g>, win: usize) -> Result<Var<'g>> {
    let shape = x.shape();
    let [h, w, c] = shape[..] else {
        return Err(Error::shape(format!("window_partition expects [H, W, C], got {shape:?}")));
    };
    check_divisible(h, w, win)?;
    x.reshape(&[h / win, win, w / win, win, c])?.permute(&[0, 2, 1, 3, 4])?.reshape(&[
        (h / win) * (w / win),
        win * win,
        c,
    ])
}

/// Inverse of [`window_partition`].
pub fn window_reverse<'g>(windows: Var<'g>, h: usize, w: usize, win: usize) -> Result<Var<'g>> {
    let shape = windows.shape();
    let [n, t, c] = shape[..] else {
        return Err(Error::shape(format!("window_reverse expects [nW, w*w, C], got {shape:?}")));
    };
    check_divisible(h, w, win)?;
    if n != (h / win) * (w / win) || t != win * win {
        return Err(Error::shape(format!("{n} windows of {t} tokens cannot tile a {h}x{w} grid with window {win}")));
    }
    windows.reshape(&[h / win, w / win, win, win, c])?.permute(&[0, 2, 1, 3, 4])?.reshape(&[h, w, c])
}

/// Region label of every grid cell after a cyclic shift: each axis is cut
/// into `[0, n−w)`, `[n−w, n−shift)`, `[n−shift, n)` and the label is
/// `3·row_slice + col_slice`. Row-major `H×W′`.
pub fn region_ids(h: usize, w: usize, win: usize, shift: usize) -> Vec<usize> {
    let slice = |i: usize, n: usize| {
        if i < n - win {
            0
        } else if i < n - shift {
            1
        } else {
            2
        }
    };
    let mut ids = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            ids.push(3 * slice(r, h) + slice(c, w));
        }
    }
    ids
}

/// Per-window additive attention masks `[nW×w²×w²]`: 0 where two tokens
/// share a region label, [`MASK_NEG`] otherwise. All zeros when `shift == 0`.
pub fn shift_mask(h: usize, w: usize, win: usize, shift: usize) -> Result<Tensor> {
    check_divisible(h, w, win)?;
    if shift >= win {
        return Err(Error::invalid(format!("shift {shift} must be smaller than window {win}")));
    }
    let n = win * win;
    let nw = (h / win) * (w / win);
    if shift == 0 {
        return Ok(Tensor::zeros(&[nw, n, n]));
    }
    let ids = region_ids(h, w, win, shift);
    let mut data = Vec::with_capacity(nw * n * n);
    for wr in 0..h / win {
        for wc in 0..w / win {
            let label = |t: usize| ids[(wr * win + t / win) * w + wc * win + t % win];
            for i in 0..n {
                for j in 0..n {
                    data.push(if label(i) == label(j) { 0.0 } else { MASK_NEG });
                }
            }
        }
    }
    Tensor::new(&[nw, n, n], data)
}

/// For window side `win`, the flat `[N×N]` map from token pair `(i, j)` to a
/// row of the `(2·win−1)²` relative-position bias table.
pub fn relative_position_index(win: usize) -> Vec<usize> {
    let n = win * win;
    let side = 2 * win - 1;
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let dr = (i / win) as isize - (j / win) as isize + win as isize - 1;
            let dc = (i % win) as isize - (j % win) as isize + win as isize - 1;
            idx.push(dr as usize * side + dc as usize);
        }
    }
    idx
}
