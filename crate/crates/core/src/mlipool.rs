//! Spiking max pooling by lateral inhibition (MLIPooling).
//!
//! Every output window owns a private copy of its members' spike streams, so
//! overlapping windows (stride != kernel) never compete for the same neuron.
//! Ceil-mode windows that hang off the right or bottom edge are completed with
//! silent padding members.
//!
//! Inside a block the member with the largest cumulative count wins (ties go
//! to the lowest member index). The winner's spikes pass through, minus what
//! the block has already emitted, so the block's cumulative output tracks the
//! running maximum of its members' cumulative counts. Negative twin-synapse
//! spikes lower a member's count; when the running maximum drops the block
//! forwards the difference on its own negative channel.

use crate::error::{Error, Result};
use crate::model::PoolGeometry;

/// Marks a padding member outside the input map.
pub const PAD: isize = -1;

/// Output window to input index map for one pooling layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMap {
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub geometry: PoolGeometry,
    /// Per output position, `k * k` flat input indices in row-major window
    /// order, [`PAD`] for padding.
    pub blocks: Vec<Vec<isize>>,
}

impl BlockMap {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// True if the block contains at least one padding member.
    pub fn is_partial(&self, b: usize) -> bool {
        self.blocks[b].contains(&PAD)
    }

    /// Number of blocks each input neuron belongs to.
    pub fn membership(&self) -> Vec<usize> {
        let n: usize = self.in_shape.iter().product();
        let mut m = vec![0; n];
        for block in &self.blocks {
            for &i in block {
                if i != PAD {
                    m[i as usize] += 1;
                }
            }
        }
        m
    }
}

/// Lays out pooling windows over the last two axes of `shape`.
pub fn build_blocks(shape: &[usize], kernel: usize, stride: usize, ceil_mode: bool) -> Result<BlockMap> {
    let g = PoolGeometry::new(kernel, stride, ceil_mode)?;
    if shape.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "pooling needs spatial input, got {shape:?}"
        )));
    }
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let channels: usize = shape[..r - 2].iter().product();
    let oh = g.output_extent(h).map_err(Error::InvalidConfig)?;
    let ow = g.output_extent(w).map_err(Error::InvalidConfig)?;
    let mut blocks = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut members = Vec::with_capacity(kernel * kernel);
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let (iy, ix) = (oy * stride + ky, ox * stride + kx);
                        members.push(if iy < h && ix < w {
                            ((c * h + iy) * w + ix) as isize
                        } else {
                            PAD
                        });
                    }
                }
                blocks.push(members);
            }
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[r - 2] = oh;
    out_shape[r - 1] = ow;
    Ok(BlockMap {
        in_shape: shape.to_vec(),
        out_shape,
        geometry: g,
        blocks,
    })
}

/// Inhibition state of one pooling block.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Block {
    /// Private cumulative net spike count of each member.
    pub counts: Vec<i64>,
    /// Cumulative net output of the block.
    pub emitted: i64,
    pub winner: Option<usize>,
    /// Times the elected winner changed.
    pub winner_changes: u64,
    /// Per member, positive spikes that did not reach the output.
    pub suppressed: Vec<u64>,
}

impl Block {
    fn new(members: usize) -> Self {
        Self {
            counts: vec![0; members],
            suppressed: vec![0; members],
            ..Default::default()
        }
    }

    /// Advances the block by one step given its members' private net
    /// spikes; returns `(positive, negative)` output spikes.
    pub fn step(&mut self, member_spikes: &[i64]) -> (u32, u32) {
        debug_assert_eq!(member_spikes.len(), self.counts.len());
        for (c, &s) in self.counts.iter_mut().zip(member_spikes) {
            *c += s;
        }
        let mut w = 0;
        for (j, &c) in self.counts.iter().enumerate() {
            if c > self.counts[w] {
                w = j;
            }
        }
        if self.winner.is_some_and(|prev| prev != w) {
            self.winner_changes += 1;
        }
        self.winner = Some(w);
        let delta = self.counts[w] - self.emitted;
        self.emitted = self.counts[w];
        let pos = delta.max(0) as u32;
        for (j, &s) in member_spikes.iter().enumerate() {
            let fired = s.max(0) as u64;
            self.suppressed[j] += if j == w { fired.saturating_sub(pos as u64) } else { fired };
        }
        (pos, (-delta).max(0) as u32)
    }
}

/// Pools a spiking layer with one private lateral-inhibition block per window.
#[derive(Clone, Debug)]
pub struct PoolBlockState {
    map: BlockMap,
    blocks: Vec<Block>,
    scratch: Vec<i64>,
}

impl PoolBlockState {
    pub fn new(map: BlockMap) -> Self {
        let members = map.geometry.kernel * map.geometry.kernel;
        let blocks = (0..map.len()).map(|_| Block::new(members)).collect();
        Self {
            map,
            blocks,
            scratch: vec![0; members],
        }
    }

    pub fn map(&self) -> &BlockMap {
        &self.map
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Copies block `b`'s members out of the layer's net spikes.
    pub fn private_copy(&self, b: usize, spikes_in: &[i64]) -> Vec<i64> {
        self.map.blocks[b]
            .iter()
            .map(|&i| if i == PAD { 0 } else { spikes_in[i as usize] })
            .collect()
    }

    /// Feeds a private member stream straight into block `b`.
    pub fn step_block(&mut self, b: usize, member_spikes: &[i64]) -> (u32, u32) {
        self.blocks[b].step(member_spikes)
    }

    /// One step of the whole layer on net input spikes.
    pub fn pool_step(&mut self, spikes_in: &[i64], pos: &mut [u32], neg: &mut [u32]) {
        for (b, block) in self.blocks.iter_mut().enumerate() {
            for (slot, &i) in self.scratch.iter_mut().zip(&self.map.blocks[b]) {
                *slot = if i == PAD { 0 } else { spikes_in[i as usize] };
            }
            let (p, n) = block.step(&self.scratch);
            pos[b] = p;
            neg[b] = n;
        }
    }
}

/// Baseline spiking max pooling: each step forwards the largest member input
/// of that step, with no memory across steps.
#[derive(Clone, Debug)]
pub struct NaiveMaxPool {
    map: BlockMap,
}

impl NaiveMaxPool {
    pub fn new(map: BlockMap) -> Self {
        Self { map }
    }

    pub fn map(&self) -> &BlockMap {
        &self.map
    }

    pub fn pool_step(&self, spikes_in: &[i64], pos: &mut [u32], neg: &mut [u32]) {
        for (b, members) in self.map.blocks.iter().enumerate() {
            let m = members
                .iter()
                .map(|&i| if i == PAD { 0 } else { spikes_in[i as usize] })
                .max()
                .unwrap_or(0);
            pos[b] = m.max(0) as u32;
            neg[b] = (-m).max(0) as u32;
        }
    }
}
