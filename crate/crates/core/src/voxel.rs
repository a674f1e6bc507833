//! Binary occupancy grids, bit-packed, with the mask file format.
//!
//! Axis order is `[depth, height, width]` everywhere, matching tensor layout
//! `[1, D, H, W]`; linear index = (z*H + y)*W + x, packed LSB-first.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"PDM1";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum VoxelError {
    #[error("mask io: {0}")]
    Io(#[from] std::io::Error),
    #[error("mask format: {0}")]
    Format(String),
    #[error("dimension mismatch: {a:?} vs {b:?}")]
    DimMismatch { a: [usize; 3], b: [usize; 3] },
    #[error("empty mask")]
    EmptyMask,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelGrid {
    dims: [usize; 3],
    words: Vec<u64>,
}

/// Offsets of the six face neighbors.
pub const NEIGHBORS_6: [[isize; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

impl VoxelGrid {
    pub fn new(dims: [usize; 3]) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "zero-sized grid");
        let n = dims[0] * dims[1] * dims[2];
        VoxelGrid {
            dims,
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn from_fn(dims: [usize; 3], f: impl Fn([usize; 3]) -> bool) -> Self {
        let mut g = VoxelGrid::new(dims);
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    if f([z, y, x]) {
                        g.set([z, y, x], true);
                    }
                }
            }
        }
        g
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, p: [usize; 3]) -> usize {
        debug_assert!(p[0] < self.dims[0] && p[1] < self.dims[1] && p[2] < self.dims[2]);
        (p[0] * self.dims[1] + p[1]) * self.dims[2] + p[2]
    }

    pub fn position(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[2];
        let rest = index / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], x]
    }

    #[inline]
    pub fn get(&self, p: [usize; 3]) -> bool {
        let i = self.index(p);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, p: [usize; 3], value: bool) {
        let i = self.index(p);
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn count_foreground(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty_mask(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// |self AND other|, for overlap metrics.
    pub fn intersection_count(&self, other: &VoxelGrid) -> Result<usize, VoxelError> {
        if self.dims != other.dims {
            return Err(VoxelError::DimMismatch {
                a: self.dims,
                b: other.dims,
            });
        }
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }

    /// Positions of all foreground voxels, in linear-index order.
    pub fn foreground_positions(&self) -> Vec<[usize; 3]> {
        let mut out = Vec::with_capacity(self.count_foreground());
        for (wi, &w) in self.words.iter().enumerate() {
            let mut bits = w;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                let idx = wi * 64 + b;
                if idx < self.voxel_count() {
                    out.push(self.position(idx));
                }
                bits &= bits - 1;
            }
        }
        out
    }

    /// Inclusive `(lo, hi)` corners of the minimal foreground bounding box.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for p in self.foreground_positions() {
            any = true;
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        any.then_some((lo, hi))
    }

    /// True iff the foreground is nonempty and a single 6-connected component.
    pub fn is_single_component(&self) -> bool {
        let total = self.count_foreground();
        if total == 0 {
            return false;
        }
        let start = self
            .foreground_positions()
            .into_iter()
            .next()
            .expect("nonempty");
        let mut seen = vec![false; self.voxel_count()];
        let mut stack = vec![start];
        seen[self.index(start)] = true;
        let mut reached = 0usize;
        while let Some(p) = stack.pop() {
            reached += 1;
            for d in NEIGHBORS_6 {
                let q = [
                    p[0] as isize + d[0],
                    p[1] as isize + d[1],
                    p[2] as isize + d[2],
                ];
                if q[0] < 0 || q[1] < 0 || q[2] < 0 {
                    continue;
                }
                let q = [q[0] as usize, q[1] as usize, q[2] as usize];
                if q[0] >= self.dims[0] || q[1] >= self.dims[1] || q[2] >= self.dims[2] {
                    continue;
                }
                let qi = self.index(q);
                if self.get(q) && !seen[qi] {
                    seen[qi] = true;
                    stack.push(q);
                }
            }
        }
        reached == total
    }

    /// A voxel is boundary if any of its six neighbors (or the outside of the
    /// grid, for background voxels this never applies) has the opposite value:
    /// foreground voxels touching background, and background voxels touching
    /// foreground.
    pub fn is_boundary(&self, p: [usize; 3]) -> bool {
        let v = self.get(p);
        for d in NEIGHBORS_6 {
            let q = [
                p[0] as isize + d[0],
                p[1] as isize + d[1],
                p[2] as isize + d[2],
            ];
            if q[0] < 0
                || q[1] < 0
                || q[2] < 0
                || q[0] as usize >= self.dims[0]
                || q[1] as usize >= self.dims[1]
                || q[2] as usize >= self.dims[2]
            {
                // Outside counts as background: a foreground voxel on the
                // grid face is boundary.
                if v {
                    return true;
                }
                continue;
            }
            if self.get([q[0] as usize, q[1] as usize, q[2] as usize]) != v {
                return true;
            }
        }
        false
    }

    /// Network-ready `[1, D, H, W]` tensor of 0.0 / 1.0 values.
    pub fn to_tensor(&self) -> Tensor {
        let n = self.voxel_count();
        let mut data = vec![0.0f64; n];
        for (wi, &w) in self.words.iter().enumerate() {
            let mut bits = w;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                let idx = wi * 64 + b;
                if idx < n {
                    data[idx] = 1.0;
                }
                bits &= bits - 1;
            }
        }
        Tensor::new(vec![1, self.dims[0], self.dims[1], self.dims[2]], data).expect("shape")
    }

    pub fn save(&self, path: &Path) -> Result<(), VoxelError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&u32::try_from(d).unwrap().to_le_bytes())?;
        }
        let n = self.voxel_count();
        let mut byte = 0u8;
        let mut filled = 0;
        for i in 0..n {
            if self.words[i / 64] >> (i % 64) & 1 == 1 {
                byte |= 1 << filled;
            }
            filled += 1;
            if filled == 8 {
                w.write_all(&[byte])?;
                byte = 0;
                filled = 0;
            }
        }
        if filled > 0 {
            w.write_all(&[byte])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, VoxelError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(VoxelError::Format(format!(
                "bad magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let mut vbuf = [0u8; 2];
        r.read_exact(&mut vbuf)?;
        let version = u16::from_le_bytes(vbuf);
        if version != VERSION {
            return Err(VoxelError::Format(format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
            if *d == 0 {
                return Err(VoxelError::Format("zero dimension".into()));
            }
        }
        let n = dims[0] * dims[1] * dims[2];
        let mut bytes = vec![0u8; n.div_ceil(8)];
        r.read_exact(&mut bytes)?;
        let mut g = VoxelGrid::new(dims);
        for i in 0..n {
            if bytes[i / 8] >> (i % 8) & 1 == 1 {
                g.words[i / 64] |= 1 << (i % 64);
            }
        }
        Ok(g)
    }
}
