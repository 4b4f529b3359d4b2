//! Run-length encoded binary masks.
//!
//! Runs follow a row-major scan and alternate between background and
//! foreground, starting with a (possibly empty) background run.

use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MaskError {
    #[error("run lengths sum to {got}, expected {expected}")]
    LengthMismatch { expected: u64, got: u64 },
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRle {
    height: u32,
    width: u32,
    counts: Vec<u32>,
}

/// Pixel bounding box, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub row_min: u32,
    pub row_max: u32,
    pub col_min: u32,
    pub col_max: u32,
}

impl MaskRle {
    pub fn new(height: u32, width: u32, counts: Vec<u32>) -> Result<Self, MaskError> {
        let expected = height as u64 * width as u64;
        let got: u64 = counts.iter().map(|c| *c as u64).sum();
        if got != expected {
            return Err(MaskError::LengthMismatch { expected, got });
        }
        Ok(MaskRle { height, width, counts })
    }

    pub fn empty(height: u32, width: u32) -> Self {
        MaskRle { height, width, counts: alloc::vec![height * width] }
    }

    pub fn from_bitmap(height: u32, width: u32, bits: &[bool]) -> Result<Self, MaskError> {
        let expected = height as u64 * width as u64;
        if bits.len() as u64 != expected {
            return Err(MaskError::LengthMismatch { expected, got: bits.len() as u64 });
        }
        let mut enc = Encoder::new();
        for b in bits {
            enc.push(*b, 1);
        }
        Ok(enc.finish(height, width))
    }

    /// Builds a mask from at most one half-open foreground span
    /// `[start, end)` per row.
    pub fn from_row_spans(height: u32, width: u32, spans: impl Fn(u32) -> Option<(u32, u32)>) -> Self {
        let mut enc = Encoder::new();
        for row in 0..height {
            match spans(row) {
                Some((a, b)) if a < b.min(width) => {
                    let b = b.min(width);
                    enc.push(false, a);
                    enc.push(true, b - a);
                    enc.push(false, width - b);
                }
                _ => enc.push(false, width),
            }
        }
        enc.finish(height, width)
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn to_bitmap(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity((self.height * self.width) as usize);
        for (k, c) in self.counts.iter().enumerate() {
            out.extend(core::iter::repeat_n(k % 2 == 1, *c as usize));
        }
        out
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|c| *c as u64).sum()
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut pos: u64 = 0;
        let mut bbox: Option<BoundingBox> = None;
        let w = self.width as u64;
        for (k, c) in self.counts.iter().enumerate() {
            let len = *c as u64;
            if k % 2 == 1 && len > 0 {
                let (first, last) = (pos, pos + len - 1);
                let (r0, r1) = ((first / w) as u32, (last / w) as u32);
                let (c0, c1) = if r0 == r1 { ((first % w) as u32, (last % w) as u32) } else { (0, self.width - 1) };
                bbox = Some(match bbox {
                    None => BoundingBox { row_min: r0, row_max: r1, col_min: c0, col_max: c1 },
                    Some(b) => BoundingBox {
                        row_min: b.row_min.min(r0),
                        row_max: b.row_max.max(r1),
                        col_min: b.col_min.min(c0),
                        col_max: b.col_max.max(c1),
                    },
                });
            }
            pos += len;
        }
        bbox
    }

    fn check_dims(&self, other: &MaskRle) -> Result<(), MaskError> {
        if self.height != other.height || self.width != other.width {
            return Err(MaskError::DimensionMismatch(self.height, self.width, other.height, other.width));
        }
        Ok(())
    }

    /// Number of pixels set in both masks, computed on the runs directly.
    pub fn intersection(&self, other: &MaskRle) -> Result<u64, MaskError> {
        self.check_dims(other)?;
        let mut a = Runs::new(&self.counts);
        let mut b = Runs::new(&other.counts);
        let mut overlap = 0u64;
        while let (Some((la, va)), Some((lb, vb))) = (a.peek(), b.peek()) {
            let step = la.min(lb);
            if va && vb {
                overlap += step;
            }
            a.advance(step);
            b.advance(step);
        }
        Ok(overlap)
    }
}

/// Intersection over union, defined as 0 when both masks are empty.
pub fn mask_iou(a: &MaskRle, b: &MaskRle) -> Result<f64, MaskError> {
    let inter = a.intersection(b)?;
    let union = a.area() + b.area() - inter;
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

struct Runs<'a> {
    counts: &'a [u32],
    index: usize,
    remaining: u64,
}

impl<'a> Runs<'a> {
    fn new(counts: &'a [u32]) -> Self {
        let mut r = Runs { counts, index: 0, remaining: counts.first().map_or(0, |c| *c as u64) };
        r.skip_empty();
        r
    }

    fn skip_empty(&mut self) {
        while self.remaining == 0 && self.index < self.counts.len() {
            self.index += 1;
            self.remaining = self.counts.get(self.index).map_or(0, |c| *c as u64);
        }
    }

    fn peek(&self) -> Option<(u64, bool)> {
        (self.index < self.counts.len()).then_some((self.remaining, self.index % 2 == 1))
    }

    fn advance(&mut self, n: u64) {
        self.remaining -= n;
        self.skip_empty();
    }
}

struct Encoder {
    counts: Vec<u32>,
    current: bool,
}

impl Encoder {
    fn new() -> Self {
        Encoder { counts: alloc::vec![0], current: false }
    }

    fn push(&mut self, value: bool, len: u32) {
        if len == 0 {
            return;
        }
        if value != self.current {
            self.counts.push(0);
            self.current = value;
        }
        *self.counts.last_mut().unwrap() += len;
    }

    fn finish(self, height: u32, width: u32) -> MaskRle {
        MaskRle { height, width, counts: self.counts }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn strip(cols: core::ops::Range<usize>) -> MaskRle {
        // 4x4 image, foreground in the given columns of rows 0 and 1
        let mut bits = [false; 16];
        for r in 0..2 {
            for c in cols.clone() {
                bits[r * 4 + c] = true;
            }
        }
        MaskRle::from_bitmap(4, 4, &bits).unwrap()
    }

    #[test]
    fn iou_fixtures() {
        let a = strip(0..4);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        let top = MaskRle::from_row_spans(4, 4, |r| (r < 2).then_some((0, 4)));
        let bottom = MaskRle::from_row_spans(4, 4, |r| (r >= 2).then_some((0, 4)));
        assert_eq!(mask_iou(&top, &bottom).unwrap(), 0.0);
        // 8-pixel masks overlapping in 4 pixels
        let left = MaskRle::from_row_spans(4, 4, |_| Some((0, 2)));
        let right = MaskRle::from_row_spans(4, 4, |_| Some((1, 3)));
        assert_eq!(left.area(), 8);
        assert_eq!(left.intersection(&right).unwrap(), 4);
        assert!((mask_iou(&left, &right).unwrap() - 4.0 / 12.0).abs() < 1e-15);
        let e = MaskRle::empty(4, 4);
        assert_eq!(mask_iou(&e, &e).unwrap(), 0.0);
    }

    #[test]
    fn dimension_and_length_checks() {
        assert!(matches!(
            mask_iou(&MaskRle::empty(4, 4), &MaskRle::empty(4, 5)),
            Err(MaskError::DimensionMismatch(..))
        ));
        assert!(MaskRle::new(2, 2, alloc::vec![1, 2]).is_err());
        assert!(MaskRle::new(2, 2, alloc::vec![0, 4]).is_ok());
    }

    #[test]
    fn bounding_box_of_spans() {
        let m = MaskRle::from_row_spans(10, 8, |r| (3..=5).contains(&r).then_some((2, 6)));
        assert_eq!(m.bounding_box(), Some(BoundingBox { row_min: 3, row_max: 5, col_min: 2, col_max: 5 }));
        assert_eq!(MaskRle::empty(3, 3).bounding_box(), None);
    }

    proptest! {
        #[test]
        fn iou_matches_bitmap(a in proptest::collection::vec(any::<bool>(), 256), b in proptest::collection::vec(any::<bool>(), 256)) {
            let ma = MaskRle::from_bitmap(16, 16, &a).unwrap();
            let mb = MaskRle::from_bitmap(16, 16, &b).unwrap();
            prop_assert_eq!(ma.to_bitmap(), a.clone());
            let inter = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
            let union = a.iter().zip(&b).filter(|(x, y)| **x || **y).count();
            let want = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
            prop_assert_eq!(mask_iou(&ma, &mb).unwrap(), want);
            prop_assert_eq!(mask_iou(&mb, &ma).unwrap(), want);
        }
    }
}
