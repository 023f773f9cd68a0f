use crate::error::{QuotaError, Result};
use crate::model::{FrameEmbedding, Grid};

/// `[start, end)` of output cell `i` when `src` cells are pooled into `dst`.
fn window(i: usize, src: usize, dst: usize) -> (usize, usize) {
    let start = i * src / dst;
    let end = ((i + 1) * src).div_ceil(dst);
    (start, end)
}

/// Adaptive average pooling of the token grid to `grid`. Down-sampling only.
pub fn pool_adaptive(frame: &FrameEmbedding, grid: Grid) -> Result<FrameEmbedding> {
    let (h, w, c) = (frame.height(), frame.width(), frame.dim());
    if grid.height > h || grid.width > w || grid.height == 0 || grid.width == 0 {
        return Err(QuotaError::UpsampleRequested {
            source_h: h,
            source_w: w,
            target_h: grid.height,
            target_w: grid.width,
        });
    }
    let src = frame.data();
    let mut out = Vec::with_capacity(grid.tokens() * c);
    let mut acc = vec![0.0f64; c];
    for i in 0..grid.height {
        let (r0, r1) = window(i, h, grid.height);
        for j in 0..grid.width {
            let (c0, c1) = window(j, w, grid.width);
            acc.fill(0.0);
            for r in r0..r1 {
                for col in c0..c1 {
                    let token = &src[(r * w + col) * c..(r * w + col + 1) * c];
                    for (a, &v) in acc.iter_mut().zip(token) {
                        *a += f64::from(v);
                    }
                }
            }
            let count = ((r1 - r0) * (c1 - c0)) as f64;
            out.extend(acc.iter().map(|a| (a / count) as f32));
        }
    }
    FrameEmbedding::new(grid.height, grid.width, c, out)
}
