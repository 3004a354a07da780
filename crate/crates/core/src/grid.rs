//! Dense hypercubic boxes `[-half, half]^dims` stored as flat arrays, and the
//! nearest-neighbour averaging stencil used by every transfer-matrix sweep.

use crate::{Budget, Result};

#[derive(Clone, Debug)]
pub(crate) struct BoxGrid {
    dims: usize,
    half: usize,
    strides: Vec<usize>,
    len: usize,
}

impl BoxGrid {
    pub(crate) fn new(dims: usize, half: usize) -> Self {
        let side = 2 * half + 1;
        let mut strides = vec![1usize; dims];
        for i in (0..dims.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * side;
        }
        let len = side.pow(dims as u32);
        BoxGrid {
            dims,
            half,
            strides,
            len,
        }
    }

    /// Bytes needed for `buffers` arrays of this shape.
    pub(crate) fn bytes(dims: usize, half: usize, buffers: usize) -> u128 {
        let side = (2 * half + 1) as u128;
        side.saturating_pow(dims as u32)
            .saturating_mul(8)
            .saturating_mul(buffers as u128)
    }

    pub(crate) fn checked(
        dims: usize,
        half: usize,
        buffers: usize,
        budget: Budget,
        what: &'static str,
    ) -> Result<Self> {
        budget.check(what, Self::bytes(dims, half, buffers))?;
        Ok(Self::new(dims, half))
    }

    pub(crate) fn zeros(&self) -> Vec<f64> {
        vec![0.0; self.len]
    }

    pub(crate) fn center(&self) -> usize {
        self.strides.iter().map(|s| s * self.half).sum()
    }

    /// Flat index of `coords`; the caller guarantees they lie inside the box.
    #[inline]
    pub(crate) fn index(&self, coords: &[i64]) -> usize {
        debug_assert_eq!(coords.len(), self.dims);
        coords
            .iter()
            .zip(&self.strides)
            .map(|(&c, &s)| (c + self.half as i64) as usize * s)
            .sum()
    }

    /// Calls `f(first_index)` for every row of the sub-box `[-reach, reach]^dims`;
    /// a row runs along the last axis and holds `2 * reach + 1` entries.
    pub(crate) fn for_each_row(&self, reach: usize, mut f: impl FnMut(usize)) {
        debug_assert!(reach <= self.half);
        let width = 2 * reach + 1;
        let lo = self.half - reach;
        let outer = self.dims - 1;
        let mut counter = vec![0usize; outer];
        loop {
            let mut start = lo * self.strides[self.dims - 1];
            for (axis, &c) in counter.iter().enumerate() {
                start += (lo + c) * self.strides[axis];
            }
            f(start);
            // odometer over the leading axes
            let mut axis = outer;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                counter[axis] += 1;
                if counter[axis] < width {
                    break;
                }
                counter[axis] = 0;
            }
        }
    }

    /// One averaging step of the simple walk moving along `axes`:
    /// `dst[i] = (1 / 2|axes|) sum_{axis} (src[i + s] + src[i - s])` on the
    /// sub-box of half width `reach`. Entries of `dst` outside the sub-box are
    /// left untouched, and `src` must vanish on the boundary layer of the box.
    pub(crate) fn walk_step(
        &self,
        src: &[f64],
        dst: &mut [f64],
        reach: usize,
        axes: std::ops::Range<usize>,
    ) {
        debug_assert!(reach < self.half, "stencil would leave the box");
        let width = 2 * reach + 1;
        let weight = 1.0 / (2 * axes.len()) as f64;
        self.for_each_row(reach, |start| {
            let row = &mut dst[start..start + width];
            row.iter_mut().for_each(|v| *v = 0.0);
            for axis in axes.clone() {
                let s = self.strides[axis];
                let up = &src[start + s..start + s + width];
                let down = &src[start - s..start - s + width];
                for ((v, &u), &w) in row.iter_mut().zip(up).zip(down) {
                    *v += u + w;
                }
            }
            row.iter_mut().for_each(|v| *v *= weight);
        });
    }
}

/// Calls `f(x)` for every lattice point of `[-half, half]^d`.
pub(crate) fn for_each_point(d: usize, half: i64, mut f: impl FnMut(&[i64])) {
    let mut x = vec![-half; d];
    loop {
        f(&x);
        let mut axis = d;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            x[axis] += 1;
            if x[axis] <= half {
                break;
            }
            x[axis] = -half;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_cover_sub_box_once() {
        let g = BoxGrid::new(3, 4);
        let mut seen = vec![0u8; g.zeros().len()];
        g.for_each_row(2, |start| {
            for i in start..start + 5 {
                seen[i] += 1;
            }
        });
        assert_eq!(seen.iter().filter(|&&v| v == 1).count(), 125);
        assert!(seen.iter().all(|&v| v <= 1));
        assert_eq!(seen[g.center()], 1);
    }

    #[test]
    fn stencil_spreads_mass_evenly() {
        let g = BoxGrid::new(2, 3);
        let mut src = g.zeros();
        src[g.center()] = 1.0;
        let mut dst = g.zeros();
        g.walk_step(&src, &mut dst, 1, 0..2);
        for p in [[1, 0], [-1, 0], [0, 1], [0, -1]] {
            assert_eq!(dst[g.index(&p)], 0.25);
        }
        assert_eq!(dst.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn point_enumeration_count() {
        let mut n = 0;
        for_each_point(3, 2, |_| n += 1);
        assert_eq!(n, 125);
    }
}
