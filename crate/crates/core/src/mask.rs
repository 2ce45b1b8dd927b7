//! Binary masks and their run-length encoding.
//!
//! RLE layout: column-major scan, the first run counts zeros (possibly 0),
//! runs alternate 0/1, and counts sum to `height * width`. On the wire the
//! counts are a space separated string: `{"size":[h,w],"counts":"1 3"}`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Dense binary mask stored column-major: pixel `(r, c)` lives at
/// `c * height + r`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: u32,
    width: u32,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn zeros(height: u32, width: u32) -> Self {
        Self {
            height,
            width,
            data: vec![false; height as usize * width as usize],
        }
    }

    /// Build from a column-major pixel vector.
    pub fn from_column_major(height: u32, width: u32, data: Vec<bool>) -> Result<Self> {
        let expected = height as u64 * width as u64;
        if data.len() as u64 != expected {
            return Err(Error::RleLengthMismatch {
                got: data.len() as u64,
                expected,
            });
        }
        Ok(Self { height, width, data })
    }

    /// Build from row-major rows, convenient for hand-written fixtures.
    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let height = rows.len() as u32;
        let width = rows.first().map_or(0, |r| r.len()) as u32;
        let mut m = Self::zeros(height, width);
        for (r, row) in rows.iter().enumerate() {
            if row.len() as u32 != width {
                return Err(Error::ShapeMismatch {
                    left_h: height,
                    left_w: width,
                    right_h: height,
                    right_w: row.len() as u32,
                });
            }
            for (c, &v) in row.iter().enumerate() {
                m.set(r as u32, c as u32, v != 0);
            }
        }
        Ok(m)
    }

    /// Filled rectangle covering every pixel the box touches.
    pub fn from_box(height: u32, width: u32, bbox: &BBox) -> Self {
        let mut m = Self::zeros(height, width);
        let (c0, r0, c1, r1) = bbox.pixel_span(width, height);
        for c in c0..c1 {
            for r in r0..r1 {
                m.set(r, c, true);
            }
        }
        m
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, row: u32, col: u32) -> bool {
        self.data[col as usize * self.height as usize + row as usize]
    }

    pub fn set(&mut self, row: u32, col: u32, value: bool) {
        let idx = col as usize * self.height as usize + row as usize;
        self.data[idx] = value;
    }

    pub fn area(&self) -> u64 {
        self.data.iter().filter(|&&v| v).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    fn check_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::ShapeMismatch {
                left_h: self.height,
                left_w: self.width,
                right_h: other.height,
                right_w: other.width,
            });
        }
        Ok(())
    }

    /// `(|a ∩ b|, |a ∪ b|)` in pixels.
    pub fn intersection_union(&self, other: &BinaryMask) -> Result<(u64, u64)> {
        self.check_shape(other)?;
        let (mut inter, mut union) = (0u64, 0u64);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as u64;
            union += (a || b) as u64;
        }
        Ok((inter, union))
    }

    pub fn to_rle(&self) -> Rle {
        encode(self)
    }
}

/// Run-length encoded mask as it appears in dataset and prediction files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rle {
    pub height: u32,
    pub width: u32,
    pub counts: Vec<u64>,
}

impl Rle {
    pub fn decode(&self) -> Result<BinaryMask> {
        decode(self)
    }

    /// True when no interior run has zero length (only the leading zero run
    /// may be 0). Canonical counts round-trip exactly through decode/encode.
    pub fn is_canonical(&self) -> bool {
        self.counts.iter().skip(1).all(|&c| c > 0)
    }

    pub fn counts_string(&self) -> String {
        let parts: Vec<String> = self.counts.iter().map(u64::to_string).collect();
        parts.join(" ")
    }

    pub fn parse_counts(s: &str) -> Result<Vec<u64>> {
        s.split_whitespace()
            .map(|t| {
                t.parse::<u64>()
                    .map_err(|_| Error::InvalidRle(format!("bad count token {t:?}")))
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct RleWire {
    size: [u32; 2],
    counts: String,
}

impl Serialize for Rle {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RleWire {
            size: [self.height, self.width],
            counts: self.counts_string(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rle {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let w = RleWire::deserialize(d)?;
        let counts = Rle::parse_counts(&w.counts).map_err(serde::de::Error::custom)?;
        Ok(Rle {
            height: w.size[0],
            width: w.size[1],
            counts,
        })
    }
}

pub fn encode(mask: &BinaryMask) -> Rle {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for &v in &mask.data {
        if v != current {
            counts.push(run);
            run = 0;
            current = v;
        }
        run += 1;
    }
    counts.push(run);
    Rle {
        height: mask.height,
        width: mask.width,
        counts,
    }
}

pub fn decode(rle: &Rle) -> Result<BinaryMask> {
    let expected = rle.height as u64 * rle.width as u64;
    let got: u64 = rle.counts.iter().sum();
    if got != expected {
        return Err(Error::RleLengthMismatch { got, expected });
    }
    let mut data = Vec::with_capacity(expected as usize);
    let mut value = false;
    for &c in &rle.counts {
        data.extend(std::iter::repeat_n(value, c as usize));
        value = !value;
    }
    Ok(BinaryMask {
        height: rle.height,
        width: rle.width,
        data,
    })
}

/// Mask IoU. Two empty masks agree vacuously (1.0); empty against
/// nonempty is 0.0.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, union) = a.intersection_union(b)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Tight bounding box of the foreground under the half-open pixel
/// convention.
pub fn mask_bbox(m: &BinaryMask) -> Result<BBox> {
    let (mut c0, mut r0, mut c1, mut r1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    let h = m.height as usize;
    for (idx, _) in m.data.iter().enumerate().filter(|(_, &v)| v) {
        let (c, r) = ((idx / h) as u32, (idx % h) as u32);
        c0 = c0.min(c);
        r0 = r0.min(r);
        c1 = c1.max(c + 1);
        r1 = r1.max(r + 1);
    }
    if c0 == u32::MAX {
        return Err(Error::EmptyMask);
    }
    BBox::new(c0 as f64, r0 as f64, c1 as f64, r1 as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_examples() {
        assert_eq!(BinaryMask::zeros(3, 3).to_rle().counts, vec![9]);
        let ones = BinaryMask::from_column_major(3, 3, vec![true; 9]).unwrap();
        assert_eq!(ones.to_rle().counts, vec![0, 9]);
        // column-major: r0c0=0, r1c0=1, r0c1=1, r1c1=1
        let m = BinaryMask::from_rows(&[&[0, 1], &[1, 1]]).unwrap();
        assert_eq!(m.to_rle().counts, vec![1, 3]);
    }

    #[test]
    fn decode_rejects_bad_length() {
        let rle = Rle {
            height: 2,
            width: 2,
            counts: vec![1, 2],
        };
        let err = rle.decode().unwrap_err();
        assert_eq!(err.code(), "rle-length-mismatch");
    }

    #[test]
    fn wire_format() {
        let m = BinaryMask::from_rows(&[&[0, 1], &[1, 1]]).unwrap();
        let s = serde_json::to_string(&m.to_rle()).unwrap();
        assert_eq!(s, r#"{"size":[2,2],"counts":"1 3"}"#);
        let back: Rle = serde_json::from_str(&s).unwrap();
        assert_eq!(back.decode().unwrap(), m);
        assert!(serde_json::from_str::<Rle>(r#"{"size":[2,2],"counts":"1 x"}"#).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = BinaryMask::from_rows(&[&[1, 0], &[0, 0]]).unwrap();
        let b = BinaryMask::from_rows(&[&[1, 0], &[0, 1]]).unwrap();
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.5);
        assert_eq!(mask_iou(&b, &b).unwrap(), 1.0);
        let comp = BinaryMask::from_rows(&[&[0, 1], &[1, 0]]).unwrap();
        assert_eq!(mask_iou(&b, &comp).unwrap(), 0.0);
        let e = BinaryMask::zeros(2, 2);
        assert_eq!(mask_iou(&e, &e).unwrap(), 1.0);
        assert_eq!(mask_iou(&e, &a).unwrap(), 0.0);
        let err = mask_iou(&a, &BinaryMask::zeros(3, 2)).unwrap_err();
        assert_eq!(err.code(), "shape-mismatch");
    }

    #[test]
    fn bbox_examples() {
        let mut m = BinaryMask::zeros(4, 5);
        m.set(2, 3, true);
        assert_eq!(mask_bbox(&m).unwrap().to_array(), [3.0, 2.0, 4.0, 3.0]);
        let full = BinaryMask::from_column_major(4, 4, vec![true; 16]).unwrap();
        assert_eq!(mask_bbox(&full).unwrap().to_array(), [0.0, 0.0, 4.0, 4.0]);
        let mut two = BinaryMask::zeros(4, 4);
        two.set(0, 0, true);
        two.set(2, 3, true);
        assert_eq!(mask_bbox(&two).unwrap().to_array(), [0.0, 0.0, 4.0, 3.0]);
        assert_eq!(
            mask_bbox(&BinaryMask::zeros(4, 4)).unwrap_err().code(),
            "empty-mask"
        );
    }

    #[test]
    fn box_mask_roundtrip() {
        let b = BBox::new(1.0, 2.0, 4.0, 3.0).unwrap();
        let m = BinaryMask::from_box(5, 6, &b);
        assert_eq!(m.area(), 3);
        assert_eq!(mask_bbox(&m).unwrap(), b);
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1u32..12, 1u32..12).prop_flat_map(|(h, w)| {
            proptest::collection::vec(any::<bool>(), (h * w) as usize)
                .prop_map(move |d| BinaryMask::from_column_major(h, w, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn rle_roundtrip(m in arb_mask()) {
            let rle = m.to_rle();
            prop_assert!(rle.is_canonical());
            prop_assert_eq!(rle.counts.iter().sum::<u64>(), (m.height() * m.width()) as u64);
            prop_assert_eq!(rle.decode().unwrap(), m);
        }

        #[test]
        fn bbox_is_tight(m in arb_mask()) {
            match mask_bbox(&m) {
                Err(_) => prop_assert!(m.is_empty()),
                Ok(b) => {
                    let (c0, r0, c1, r1) = b.pixel_span(m.width(), m.height());
                    let mut edges = [false; 4];
                    for r in 0..m.height() {
                        for c in 0..m.width() {
                            if m.get(r, c) {
                                prop_assert!(c >= c0 && c < c1 && r >= r0 && r < r1);
                                edges[0] |= c == c0;
                                edges[1] |= r == r0;
                                edges[2] |= c + 1 == c1;
                                edges[3] |= r + 1 == r1;
                            }
                        }
                    }
                    prop_assert!(edges.iter().all(|&e| e));
                }
            }
        }
    }
}
