//! Bipartite soft matching on a 2-D token grid.
//!
//! A width pass merges the same number of token pairs in every row, a height
//! pass the same number in every column, so the grid stays rectangular. Each
//! pass shrinks whichever axis is relatively further from its target.
//!
//! Within a line, even positions form set A and odd positions set B. Pairs
//! `(a, b)` are taken greedily in order of decreasing cosine similarity (ties
//! to the lowest A index, then lowest B index), skipping tokens already
//! paired, until `r` disjoint pairs are chosen. Each chosen A token is folded
//! into its B partner as a size-weighted mean, and the merged token keeps B's
//! position.

use crate::error::{QuotaError, Result};
use crate::model::{FrameEmbedding, Grid};

/// Working grid in 64-bit precision with merge counters.
#[derive(Debug, Clone)]
struct TokenGrid {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f64>,
    sizes: Vec<u64>,
}

impl TokenGrid {
    fn from_frame(frame: &FrameEmbedding) -> Self {
        let sizes = match frame.sizes() {
            Some(s) => s.iter().map(|&v| u64::from(v)).collect(),
            None => vec![1; frame.token_count()],
        };
        Self {
            height: frame.height(),
            width: frame.width(),
            dim: frame.dim(),
            data: frame.data().iter().map(|&v| f64::from(v)).collect(),
            sizes,
        }
    }

    fn token(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.dim;
        &self.data[start..start + self.dim]
    }

    fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        let mut sizes = Vec::with_capacity(self.sizes.len());
        for col in 0..self.width {
            for row in 0..self.height {
                data.extend_from_slice(self.token(row, col));
                sizes.push(self.sizes[row * self.width + col]);
            }
        }
        Self {
            height: self.width,
            width: self.height,
            dim: self.dim,
            data,
            sizes,
        }
    }

    /// Merges `r` pairs in every row.
    fn merge_rows(&self, r: usize) -> Self {
        let width = self.width - r;
        let mut data = Vec::with_capacity(self.height * width * self.dim);
        let mut sizes = Vec::with_capacity(self.height * width);
        for row in 0..self.height {
            let tokens: Vec<&[f64]> = (0..self.width).map(|col| self.token(row, col)).collect();
            let row_sizes = &self.sizes[row * self.width..(row + 1) * self.width];
            let partner = match_line(&tokens, r);

            // Fold each chosen A token into its B partner.
            let mut merged: Vec<Option<(Vec<f64>, u64)>> = vec![None; self.width];
            for (a_col, b_col) in partner
                .iter()
                .enumerate()
                .filter_map(|(a, b)| b.map(|b| (a, b)))
            {
                let (sa, sb) = (row_sizes[a_col], row_sizes[b_col]);
                let total = sa + sb;
                let value = tokens[a_col]
                    .iter()
                    .zip(tokens[b_col])
                    .map(|(&x, &y)| (sa as f64 * x + sb as f64 * y) / total as f64)
                    .collect();
                merged[b_col] = Some((value, total));
            }
            for col in 0..self.width {
                if partner[col].is_some() {
                    continue;
                }
                match merged[col].take() {
                    Some((value, size)) => {
                        data.extend(value);
                        sizes.push(size);
                    }
                    None => {
                        data.extend_from_slice(tokens[col]);
                        sizes.push(row_sizes[col]);
                    }
                }
            }
        }
        Self {
            height: self.height,
            width,
            dim: self.dim,
            data,
            sizes,
        }
    }

    fn into_frame(self) -> Result<FrameEmbedding> {
        let sizes = self
            .sizes
            .iter()
            .map(|&s| {
                u32::try_from(s).map_err(|_| QuotaError::InvalidValue("merge size overflow".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        FrameEmbedding::with_sizes(
            self.height,
            self.width,
            self.dim,
            self.data.into_iter().map(|v| v as f32).collect(),
            Some(sizes),
        )
    }
}

/// Cosine similarity with 64-bit accumulation; zero vectors score 0.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// For each position in the line, the position of the B token it merges
/// into, if it is a chosen A token.
fn match_line(tokens: &[&[f64]], r: usize) -> Vec<Option<usize>> {
    let a_cols: Vec<usize> = (0..tokens.len()).step_by(2).collect();
    let b_cols: Vec<usize> = (1..tokens.len()).step_by(2).collect();
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(a_cols.len() * b_cols.len());
    for (ai, &a) in a_cols.iter().enumerate() {
        for (bi, &b) in b_cols.iter().enumerate() {
            edges.push((cosine_similarity(tokens[a], tokens[b]), ai, bi));
        }
    }
    edges.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut partner = vec![None; tokens.len()];
    let mut a_used = vec![false; a_cols.len()];
    let mut b_used = vec![false; b_cols.len()];
    let mut chosen = 0;
    for (_, ai, bi) in edges {
        if chosen == r {
            break;
        }
        if a_used[ai] || b_used[bi] {
            continue;
        }
        a_used[ai] = true;
        b_used[bi] = true;
        partner[a_cols[ai]] = Some(b_cols[bi]);
        chosen += 1;
    }
    partner
}

/// Merges tokens until the grid is `grid`. Down-sampling only.
///
/// The output carries merge counters; their sum equals the input's token mass.
pub fn merge_tokens(frame: &FrameEmbedding, grid: Grid) -> Result<FrameEmbedding> {
    let (h, w) = (frame.height(), frame.width());
    if grid.height > h || grid.width > w || grid.height == 0 || grid.width == 0 {
        return Err(QuotaError::UpsampleRequested {
            source_h: h,
            source_w: w,
            target_h: grid.height,
            target_w: grid.width,
        });
    }
    let mut tokens = TokenGrid::from_frame(frame);
    while (tokens.height, tokens.width) != (grid.height, grid.width) {
        let width_excess = tokens.width - grid.width;
        let height_excess = tokens.height - grid.height;
        // Compare relative excess (W - W') / W against (H - H') / H.
        let along_width = width_excess * tokens.height >= height_excess * tokens.width;
        if along_width {
            let r = width_excess.min(tokens.width / 2);
            tokens = tokens.merge_rows(r);
        } else {
            let r = height_excess.min(tokens.height / 2);
            tokens = tokens.transpose().merge_rows(r).transpose();
        }
    }
    tokens.into_frame()
}
