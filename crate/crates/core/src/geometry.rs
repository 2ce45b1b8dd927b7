//! Axis-aligned boxes in continuous pixel coordinates.
//!
//! Pixel `(r, c)` occupies `[c, c+1) x [r, r+1)`, so the analytic IoU of two
//! integer-aligned boxes equals the IoU obtained by counting covered pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `xyxy` box with `x1 < x2` and `y1 < y2`. Degenerate boxes cannot be
/// constructed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(Error::DegenerateBox(x1, y1, x2, y2));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            [x1, y1, x2, y2] => Self::new(*x1, *y1, *x2, *y2),
            _ => Err(Error::DegenerateBox(f64::NAN, f64::NAN, f64::NAN, f64::NAN)),
        }
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    /// Clamp to `[0, width] x [0, height]`. Fails when nothing of the box
    /// remains inside the image.
    pub fn clamp_to(&self, width: u32, height: u32) -> Result<BBox> {
        let (w, h) = (width as f64, height as f64);
        BBox::new(
            self.x1.clamp(0.0, w),
            self.y1.clamp(0.0, h),
            self.x2.clamp(0.0, w),
            self.y2.clamp(0.0, h),
        )
    }

    pub fn is_inside(&self, width: u32, height: u32) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width as f64 && self.y2 <= height as f64
    }

    /// Expand by `frac` of the box size on every side.
    pub fn expand(&self, frac: f64) -> BBox {
        let dx = self.width() * frac;
        let dy = self.height() * frac;
        BBox {
            x1: self.x1 - dx,
            y1: self.y1 - dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Integer pixel range `[c0, c1) x [r0, r1)` touched by the box, limited
    /// to an image of the given size.
    pub fn pixel_span(&self, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let c0 = self.x1.floor().max(0.0) as u32;
        let r0 = self.y1.floor().max(0.0) as u32;
        let c1 = (self.x2.ceil().max(0.0) as u32).min(width);
        let r1 = (self.y2.ceil().max(0.0) as u32).min(height);
        (c0.min(c1), r0.min(r1), c1, r1)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;
    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl std::fmt::Display for BBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Intersection over union. Always in `[0, 1]`; 0 for disjoint boxes.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}
