//! Block partitioning of images and in-block pixel permutation.

use crate::error::{BslError, Result};
use crate::image::ImageTensor;

/// An `s x s x C` pixel tile, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    side: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Tile {
    pub fn new(side: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != side * side * channels {
            return Err(BslError::Structural(format!(
                "{side}x{side}x{channels} tile needs {} values, got {}",
                side * side * channels,
                data.len()
            )));
        }
        Ok(Self {
            side,
            channels,
            data,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Pixel at flat (row-major) position `k`, all channels.
    pub fn pixel(&self, k: usize) -> &[f32] {
        &self.data[k * self.channels..(k + 1) * self.channels]
    }
}

/// An `m x n` grid of equally sized tiles, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrid {
    rows: usize,
    cols: usize,
    tiles: Vec<Tile>,
}

impl BlockGrid {
    /// Builds a grid without checking tile consistency; [`assemble_blocks`] validates.
    pub fn from_tiles(rows: usize, cols: usize, tiles: Vec<Tile>) -> Self {
        Self { rows, cols, tiles }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn tile(&self, row: usize, col: usize) -> &Tile {
        &self.tiles[row * self.cols + col]
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    pub fn tiles_mut(&mut self) -> &mut [Tile] {
        &mut self.tiles
    }

    pub fn swap(&mut self, a: (usize, usize), b: (usize, usize)) {
        self.tiles.swap(a.0 * self.cols + a.1, b.0 * self.cols + b.1);
    }
}

/// Checks that both image axes are multiples of `side`.
pub fn check_divisible(height: usize, width: usize, side: usize) -> Result<()> {
    if side == 0 {
        return Err(BslError::Validation("block size must be positive".into()));
    }
    if height % side != 0 {
        return Err(BslError::NotDivisible {
            axis: "height",
            size: height,
            block: side,
        });
    }
    if width % side != 0 {
        return Err(BslError::NotDivisible {
            axis: "width",
            size: width,
            block: side,
        });
    }
    Ok(())
}

pub fn partition_blocks(img: &ImageTensor, side: usize) -> Result<BlockGrid> {
    check_divisible(img.height(), img.width(), side)?;
    let (rows, cols, ch) = (img.height() / side, img.width() / side, img.channels());
    let mut tiles = Vec::with_capacity(rows * cols);
    for bi in 0..rows {
        for bj in 0..cols {
            let mut data = Vec::with_capacity(side * side * ch);
            for y in 0..side {
                let start = img.index(bi * side + y, bj * side, 0);
                data.extend_from_slice(&img.data()[start..start + side * ch]);
            }
            tiles.push(Tile {
                side,
                channels: ch,
                data,
            });
        }
    }
    Ok(BlockGrid { rows, cols, tiles })
}

pub fn assemble_blocks(grid: &BlockGrid) -> Result<ImageTensor> {
    let first = grid
        .tiles
        .first()
        .ok_or_else(|| BslError::Structural("empty block grid".into()))?;
    if grid.tiles.len() != grid.rows * grid.cols {
        return Err(BslError::Structural(format!(
            "{}x{} grid holds {} tiles",
            grid.rows,
            grid.cols,
            grid.tiles.len()
        )));
    }
    let (side, ch) = (first.side, first.channels);
    if let Some(bad) = grid
        .tiles
        .iter()
        .position(|t| t.side != side || t.channels != ch || t.data.len() != side * side * ch)
    {
        return Err(BslError::Structural(format!(
            "ragged grid: tile {bad} differs from {side}x{side}x{ch}"
        )));
    }
    let (h, w) = (grid.rows * side, grid.cols * side);
    let mut data = vec![0.0f32; h * w * ch];
    for bi in 0..grid.rows {
        for bj in 0..grid.cols {
            let tile = &grid.tiles[bi * grid.cols + bj];
            for y in 0..side {
                let dst = ((bi * side + y) * w + bj * side) * ch;
                data[dst..dst + side * ch]
                    .copy_from_slice(&tile.data[y * side * ch..(y + 1) * side * ch]);
            }
        }
    }
    ImageTensor::new(h, w, ch, data)
}

/// Checks that `perm` is a permutation of `0..len`.
pub fn validate_permutation(perm: &[u32], len: usize) -> Result<()> {
    if perm.len() != len {
        return Err(BslError::Validation(format!(
            "permutation has length {}, expected {len}",
            perm.len()
        )));
    }
    let mut seen = vec![false; len];
    for &p in perm {
        let p = p as usize;
        if p >= len || std::mem::replace(&mut seen[p], true) {
            return Err(BslError::Validation(format!(
                "not a permutation of 0..{len}: index {p} repeated or out of range"
            )));
        }
    }
    Ok(())
}

/// Output pixel `k` takes input pixel `perm[k]`; channels of a pixel move together.
pub fn intra_shuffle_block(tile: &Tile, perm: &[u32]) -> Result<Tile> {
    validate_permutation(perm, tile.side * tile.side)?;
    let ch = tile.channels;
    let mut data = Vec::with_capacity(tile.data.len());
    for &src in perm {
        data.extend_from_slice(tile.pixel(src as usize));
    }
    Ok(Tile {
        side: tile.side,
        channels: ch,
        data,
    })
}
