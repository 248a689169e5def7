//! Fusion of the per-collision gate list into contiguous blocks of at most
//! three chain sites.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::gates::GateSequence;
use crate::linalg;

/// Widest block handed to the MPS engine.
pub const MAX_WIDTH: usize = 3;

#[derive(Clone, Debug)]
pub struct Block {
    /// First chain position covered.
    pub lo: usize,
    pub width: usize,
    /// Product of the fused gates on the `2^width` window (first site most
    /// significant).
    pub matrix: Array2<C64>,
}

impl Block {
    fn hi(&self) -> usize {
        self.lo + self.width - 1
    }

    fn window(&self) -> Vec<usize> {
        (self.lo..=self.hi()).collect()
    }

    fn overlaps(&self, lo: usize, hi: usize) -> bool {
        self.lo <= hi && lo <= self.hi()
    }

    /// Append `gate` (acting after the block) and widen the window to `[lo, hi]`.
    fn absorb(&mut self, gate: &Array2<C64>, sites: &[usize], lo: usize, hi: usize) {
        let window: Vec<usize> = (lo..=hi).collect();
        let old = linalg::embed(&self.matrix, &self.window(), &window);
        let g = linalg::embed(gate, sites, &window);
        self.matrix = g.dot(&old);
        self.lo = lo;
        self.width = hi - lo + 1;
    }
}

/// Greedy fusion: each gate joins the last block it overlaps when the union
/// stays within [`MAX_WIDTH`] sites, otherwise any later block it fits into,
/// otherwise it opens a new block. Application order of overlapping gates is
/// preserved.
pub fn compile_step(seq: &GateSequence) -> Vec<Block> {
    let mut blocks: Vec<Block> = Vec::new();
    for gate in seq.iter_step() {
        let glo = *gate.sites.iter().min().unwrap();
        let ghi = *gate.sites.iter().max().unwrap();
        let last = blocks.iter().rposition(|b| b.overlaps(glo, ghi));
        let start = last.unwrap_or(0);
        let target = (start..blocks.len()).find(|&j| {
            let b = &blocks[j];
            b.hi().max(ghi) - b.lo.min(glo) < MAX_WIDTH
                && (Some(j) == last || !b.overlaps(glo, ghi))
        });
        match target {
            Some(j) => {
                let b = &mut blocks[j];
                let (lo, hi) = (b.lo.min(glo), b.hi().max(ghi));
                b.absorb(&gate.matrix, &gate.sites, lo, hi);
            }
            None => {
                let mut b = Block {
                    lo: glo,
                    width: 1,
                    matrix: linalg::identity(2),
                };
                b.absorb(&gate.matrix, &gate.sites, glo, ghi);
                blocks.push(b);
            }
        }
    }
    blocks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParams, SiteCouplings};

    fn product_of_blocks(blocks: &[Block], n: usize) -> Array2<C64> {
        let window: Vec<usize> = (0..n).collect();
        let mut u = linalg::identity(1 << n);
        for b in blocks {
            u = linalg::embed(&b.matrix, &b.window(), &window).dot(&u);
        }
        u
    }

    #[test]
    fn fused_blocks_reproduce_the_gate_product() {
        let p = ModelParams::reference(3).with_substeps(2);
        let seq = GateSequence::from_params(&p, &SiteCouplings::uniform(&p)).unwrap();
        let blocks = compile_step(&seq);
        assert!(blocks.iter().all(|b| b.width <= MAX_WIDTH));
        let window: Vec<usize> = (0..6).collect();
        let mut direct = linalg::identity(64);
        for g in seq.iter_step() {
            direct = linalg::embed(&g.matrix, &g.sites, &window).dot(&direct);
        }
        assert!(linalg::max_abs_diff(&direct, &product_of_blocks(&blocks, 6)) < 1e-12);
    }

    #[test]
    fn block_count_scales_with_substeps() {
        let p = ModelParams::reference(5);
        let seq = GateSequence::from_params(&p, &SiteCouplings::uniform(&p)).unwrap();
        let blocks = compile_step(&seq);
        // one pair block per site up front, then per substep L-1 interaction
        // blocks plus the last pair
        assert_eq!(blocks.len(), 5 + 10 * 4 + 9);
    }
}
