use crate::error::Result;
use crate::model::{FrameEmbedding, Grid};

/// Source sample position for each output index under half-pixel centers:
/// lower index, upper index and the weight of the upper one.
fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|j| {
            let pos = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Bilinear resize of the token grid, per channel, with half-pixel centers.
/// Works for both up- and down-sampling.
pub fn resize_bilinear(frame: &FrameEmbedding, grid: Grid) -> Result<FrameEmbedding> {
    let (h, w, c) = (frame.height(), frame.width(), frame.dim());
    let rows = sample_positions(h, grid.height);
    let cols = sample_positions(w, grid.width);
    let src = frame.data();
    let at = |r: usize, col: usize, ch: usize| f64::from(src[(r * w + col) * c + ch]);

    let mut out = Vec::with_capacity(grid.tokens() * c);
    for &(r0, r1, fy) in &rows {
        for &(c0, c1, fx) in &cols {
            for ch in 0..c {
                let top = at(r0, c0, ch) * (1.0 - fx) + at(r0, c1, ch) * fx;
                let bottom = at(r1, c0, ch) * (1.0 - fx) + at(r1, c1, ch) * fx;
                out.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    FrameEmbedding::new(grid.height, grid.width, c, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_downsample() {
        let f = FrameEmbedding::new(1, 4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let out = resize_bilinear(&f, Grid::new(1, 2)).unwrap();
        assert_eq!(out.data(), &[0.5, 2.5]);
    }

    #[test]
    fn constant_field() {
        let f = FrameEmbedding::filled(3, 5, 2, 5.0).unwrap();
        for g in [Grid::new(1, 1), Grid::new(7, 2), Grid::new(3, 9)] {
            let out = resize_bilinear(&f, g).unwrap();
            assert_eq!(
                (out.height(), out.width(), out.dim()),
                (g.height, g.width, 2)
            );
            assert!(out.data().iter().all(|&v| v == 5.0));
        }
    }

    #[test]
    fn identity_is_bit_exact() {
        let data: Vec<f32> = (0..24).map(|i| (i as f32).sin() * 1e3).collect();
        let f = FrameEmbedding::new(3, 4, 2, data).unwrap();
        assert_eq!(resize_bilinear(&f, Grid::new(3, 4)).unwrap(), f);
    }

    #[test]
    fn upsample_edges_clamp() {
        let f = FrameEmbedding::new(1, 2, 1, vec![0.0, 4.0]).unwrap();
        let out = resize_bilinear(&f, Grid::new(1, 4)).unwrap();
        assert_eq!(out.data(), &[0.0, 1.0, 3.0, 4.0]);
    }
}
