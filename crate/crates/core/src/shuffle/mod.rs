//! Dual-grid shuffling: whole-tile reordering on a coarse grid followed by
//! in-tile pixel permutation on a fine grid.
//!
//! [`shuffle_image`] returns the shuffled image together with the two
//! supervision targets: the binary mark of which fine blocks were permuted and
//! the normalized source coordinates of every coarse block.

mod grid;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BslError, Result};
use crate::image::ImageTensor;

pub use grid::{
    assemble_blocks, check_divisible, intra_shuffle_block, partition_blocks,
    validate_permutation, BlockGrid, Tile,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShuffleConfig {
    /// Side of the blocks whose pixels are permuted.
    pub s_intra: usize,
    /// Side of the blocks that are reordered. Must be a multiple of `s_intra`.
    pub s_inter: usize,
    /// Interval the per-image shuffle probability `q` is drawn from.
    pub q_range: [f64; 2],
    /// Probability that the tile reordering is applied to an image.
    pub p_inter: f64,
    /// Root seed for shuffles drawn outside training (evaluation, inspection).
    /// Training derives per-sample streams from the run seed instead.
    pub seed: u64,
}

impl Default for ShuffleConfig {
    fn default() -> Self {
        Self {
            s_intra: 16,
            s_inter: 32,
            q_range: [0.4, 0.6],
            p_inter: 1.0,
            seed: 0,
        }
    }
}

impl ShuffleConfig {
    /// Configuration that leaves every image untouched.
    pub fn disabled(s_intra: usize, s_inter: usize) -> Self {
        Self {
            s_intra,
            s_inter,
            q_range: [0.0, 0.0],
            p_inter: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_intra == 0 || self.s_inter == 0 {
            return Err(BslError::Validation("block sizes must be positive".into()));
        }
        if self.s_inter % self.s_intra != 0 {
            return Err(BslError::Validation(format!(
                "s_inter ({}) must be a multiple of s_intra ({})",
                self.s_inter, self.s_intra
            )));
        }
        let [lo, hi] = self.q_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(BslError::Validation(format!(
                "q_range [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1"
            )));
        }
        if !(0.0..=1.0).contains(&self.p_inter) {
            return Err(BslError::Validation(format!(
                "p_inter {} outside [0, 1]",
                self.p_inter
            )));
        }
        Ok(())
    }

    pub fn intra_grid(&self, height: usize, width: usize) -> (usize, usize) {
        (height / self.s_intra, width / self.s_intra)
    }

    pub fn inter_grid(&self, height: usize, width: usize) -> (usize, usize) {
        (height / self.s_inter, width / self.s_inter)
    }
}

/// Binary `m_a x n_a` matrix; 1 where a fine block was permuted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntraMark {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<u8>,
}

impl IntraMark {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0; rows * cols],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.values[row * self.cols + col]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.values.chunks(self.cols).map(|r| r.to_vec()).collect()
    }
}

/// Maps a grid index to `[-1, 1]`; a single-cell axis maps to 0.
pub fn normalize_coord(index: usize, count: usize) -> f64 {
    if count <= 1 {
        0.0
    } else {
        2.0 * index as f64 / (count - 1) as f64 - 1.0
    }
}

/// Source coordinates of every coarse block: the integer map `beta` and its
/// normalization `m` (channel 0 rows, channel 1 columns; `2 x rows x cols`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordTarget {
    pub rows: usize,
    pub cols: usize,
    pub beta: Vec<(usize, usize)>,
    pub m: Vec<f64>,
}

impl CoordTarget {
    pub fn identity(rows: usize, cols: usize) -> Self {
        let beta = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .collect();
        Self::from_beta_unchecked(rows, cols, beta)
    }

    /// Builds the target from an integer map, rejecting maps that are not bijections.
    pub fn from_beta(rows: usize, cols: usize, beta: Vec<(usize, usize)>) -> Result<Self> {
        if beta.len() != rows * cols {
            return Err(BslError::Structural(format!(
                "coordinate map has {} entries for a {rows}x{cols} grid",
                beta.len()
            )));
        }
        let mut seen = vec![false; rows * cols];
        for &(r, c) in &beta {
            if r >= rows || c >= cols || std::mem::replace(&mut seen[r * cols + c], true) {
                return Err(BslError::Validation(format!(
                    "coordinate map is not a bijection at ({r}, {c})"
                )));
            }
        }
        Ok(Self::from_beta_unchecked(rows, cols, beta))
    }

    fn from_beta_unchecked(rows: usize, cols: usize, beta: Vec<(usize, usize)>) -> Self {
        let n = rows * cols;
        let mut m = vec![0.0; 2 * n];
        for (k, &(r, c)) in beta.iter().enumerate() {
            m[k] = normalize_coord(r, rows);
            m[n + k] = normalize_coord(c, cols);
        }
        Self {
            rows,
            cols,
            beta,
            m,
        }
    }

    pub fn source_of(&self, row: usize, col: usize) -> (usize, usize) {
        self.beta[row * self.cols + col]
    }

    pub fn is_identity(&self) -> bool {
        self.beta
            .iter()
            .enumerate()
            .all(|(k, &(r, c))| r * self.cols + c == k)
    }
}

/// The permutation applied to one fine block. Output pixel `k` came from `perm[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPerm {
    pub row: usize,
    pub col: usize,
    pub perm: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShuffleOutcome {
    pub image: ImageTensor,
    pub mark: IntraMark,
    pub coords: CoordTarget,
    pub intra_perms: Vec<BlockPerm>,
    pub inter_applied: bool,
    /// The per-image shuffle probability that was drawn.
    pub q: f64,
    pub s_intra: usize,
    pub s_inter: usize,
}

impl ShuffleOutcome {
    /// Drops the recorded permutations, leaving only what training needs.
    pub fn without_records(mut self) -> Self {
        self.intra_perms.clear();
        self
    }
}

fn random_perm(len: usize, rng: &mut impl Rng) -> Vec<u32> {
    let mut perm: Vec<u32> = (0..len as u32).collect();
    perm.shuffle(rng);
    perm
}

/// Copies `side x side` block `src` of `from` into block `dst` of `to`.
fn copy_block(
    from: &[f32],
    to: &mut [f32],
    width: usize,
    ch: usize,
    side: usize,
    src: (usize, usize),
    dst: (usize, usize),
) {
    for y in 0..side {
        let s = ((src.0 * side + y) * width + src.1 * side) * ch;
        let d = ((dst.0 * side + y) * width + dst.1 * side) * ch;
        to[d..d + side * ch].copy_from_slice(&from[s..s + side * ch]);
    }
}

/// Applies `perm` to fine block `(bi, bj)` of `data` in place.
fn permute_block(
    data: &mut [f32],
    scratch: &mut Vec<f32>,
    width: usize,
    ch: usize,
    side: usize,
    (bi, bj): (usize, usize),
    perm: &[u32],
    inverse: bool,
) {
    scratch.clear();
    for y in 0..side {
        let s = ((bi * side + y) * width + bj * side) * ch;
        scratch.extend_from_slice(&data[s..s + side * ch]);
    }
    for (k, &p) in perm.iter().enumerate() {
        let (dst, src) = if inverse {
            (p as usize, k)
        } else {
            (k, p as usize)
        };
        let d = ((bi * side + dst / side) * width + bj * side + dst % side) * ch;
        data[d..d + ch].copy_from_slice(&scratch[src * ch..(src + 1) * ch]);
    }
}

/// Shuffles one image.
///
/// Draw order on `rng`: the tile-reordering gate, the tile permutation (only
/// when applied), the per-image probability `q`, then for every fine block in
/// row-major order a gate draw followed by a fresh permutation when the gate
/// fires. `q` is the probability that a block IS permuted.
pub fn shuffle_image(
    img: &ImageTensor,
    cfg: &ShuffleConfig,
    rng: &mut impl Rng,
) -> Result<ShuffleOutcome> {
    cfg.validate()?;
    check_divisible(img.height(), img.width(), cfg.s_inter)?;
    check_divisible(img.height(), img.width(), cfg.s_intra)?;
    let (h, w, ch) = (img.height(), img.width(), img.channels());

    let (mb, nb) = cfg.inter_grid(h, w);
    let gate: f64 = rng.random();
    let inter_applied = gate < cfg.p_inter;
    let (mut data, coords) = if inter_applied {
        let order = random_perm(mb * nb, rng);
        let beta: Vec<(usize, usize)> = order
            .iter()
            .map(|&k| (k as usize / nb, k as usize % nb))
            .collect();
        let mut out = vec![0.0f32; img.data().len()];
        for (k, &src) in beta.iter().enumerate() {
            copy_block(img.data(), &mut out, w, ch, cfg.s_inter, src, (k / nb, k % nb));
        }
        (out, CoordTarget::from_beta_unchecked(mb, nb, beta))
    } else {
        (img.data().to_vec(), CoordTarget::identity(mb, nb))
    };

    let [lo, hi] = cfg.q_range;
    let u: f64 = rng.random();
    let q = if hi > lo { lo + (hi - lo) * u } else { lo };

    let (ma, na) = cfg.intra_grid(h, w);
    let side = cfg.s_intra;
    let mut mark = IntraMark::zeros(ma, na);
    let mut intra_perms = Vec::new();
    let mut scratch = Vec::with_capacity(side * side * ch);
    for bi in 0..ma {
        for bj in 0..na {
            let draw: f64 = rng.random();
            if draw < q {
                let perm = random_perm(side * side, rng);
                permute_block(&mut data, &mut scratch, w, ch, side, (bi, bj), &perm, false);
                mark.values[bi * na + bj] = 1;
                intra_perms.push(BlockPerm {
                    row: bi,
                    col: bj,
                    perm,
                });
            }
        }
    }

    Ok(ShuffleOutcome {
        image: ImageTensor::new(h, w, ch, data)?,
        mark,
        coords,
        intra_perms,
        inter_applied,
        q,
        s_intra: cfg.s_intra,
        s_inter: cfg.s_inter,
    })
}

/// Moves whole `side x side` tiles so output tile `k` holds source tile
/// `coords.beta[k]`, without any pixel permutation.
pub fn reorder_blocks(img: &ImageTensor, coords: &CoordTarget, side: usize) -> Result<ImageTensor> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    if coords.rows * side != h || coords.cols * side != w {
        return Err(BslError::Structural("coordinates do not match the image".into()));
    }
    let mut out = vec![0.0f32; img.data().len()];
    for (k, &src) in coords.beta.iter().enumerate() {
        copy_block(img.data(), &mut out, w, ch, side, src, (k / coords.cols, k % coords.cols));
    }
    ImageTensor::new(h, w, ch, out)
}

/// Recovers the pre-shuffle image from the recorded permutations.
pub fn unshuffle(outcome: &ShuffleOutcome) -> Result<ImageTensor> {
    let img = &outcome.image;
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let side = outcome.s_intra;
    let mark = &outcome.mark;
    if mark.rows * side != h || mark.cols * side != w {
        return Err(BslError::Structural("mark does not match the image".into()));
    }
    let mut recorded = IntraMark::zeros(mark.rows, mark.cols);
    for rec in &outcome.intra_perms {
        if rec.row >= mark.rows || rec.col >= mark.cols {
            return Err(BslError::Structural(format!(
                "permutation record for block ({}, {}) outside the grid",
                rec.row, rec.col
            )));
        }
        validate_permutation(&rec.perm, side * side)?;
        recorded.values[rec.row * mark.cols + rec.col] += 1;
    }
    if let Some(k) = (0..mark.values.len()).find(|&k| recorded.values[k] != mark.values[k]) {
        return Err(BslError::Unsupported(format!(
            "no usable permutation record for block ({}, {})",
            k / mark.cols,
            k % mark.cols
        )));
    }

    let mut data = img.data().to_vec();
    let mut scratch = Vec::with_capacity(side * side * ch);
    for rec in &outcome.intra_perms {
        permute_block(&mut data, &mut scratch, w, ch, side, (rec.row, rec.col), &rec.perm, true);
    }

    let coords = &outcome.coords;
    if coords.rows * outcome.s_inter != h || coords.cols * outcome.s_inter != w {
        return Err(BslError::Structural("coordinates do not match the image".into()));
    }
    if coords.is_identity() {
        return ImageTensor::new(h, w, ch, data);
    }
    let mut out = vec![0.0f32; data.len()];
    for (k, &src) in coords.beta.iter().enumerate() {
        copy_block(&data, &mut out, w, ch, outcome.s_inter, (k / coords.cols, k % coords.cols), src);
    }
    ImageTensor::new(h, w, ch, out)
}
