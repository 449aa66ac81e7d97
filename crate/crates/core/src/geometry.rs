//! Axis-aligned boxes tagged with the coordinate space they live in.

use std::fmt;

use crate::error::{Error, Result};

/// Which pixel grid a box is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Space {
    /// Layer-one (full resolution) specimen coordinates.
    Slide,
    /// A whole pyramid layer.
    Layer(usize),
    /// A single tile, by tile id.
    Tile(u32),
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Space::Slide => f.write_str("slide"),
            Space::Layer(n) => write!(f, "layer-{n}"),
            Space::Tile(id) => write!(f, "tile({id})"),
        }
    }
}

/// Box stored as top-left corner plus extent, in real pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub space: Space,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64, space: Space) -> Result<BBox> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::Contract(format!(
                "non-finite box ({x}, {y}, {w}, {h})"
            )));
        }
        if w < 0.0 || h < 0.0 {
            return Err(Error::Contract(format!("negative box extent {w}x{h}")));
        }
        Ok(BBox { x, y, w, h, space })
    }

    pub fn slide(x: f64, y: f64, w: f64, h: f64) -> Result<BBox> {
        BBox::new(x, y, w, h, Space::Slide)
    }

    /// Builds a box from its corners; an inverted corner pair gives zero extent.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64, space: Space) -> Result<BBox> {
        BBox::new(x1, y1, (x2 - x1).max(0.0), (y2 - y1).max(0.0), space)
    }

    /// Builds a box from center and extent, the convention some annotation tools use.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64, space: Space) -> Result<BBox> {
        BBox::new(cx - w / 2.0, cy - h / 2.0, w, h, space)
    }

    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn with_space(self, space: Space) -> BBox {
        BBox { space, ..self }
    }

    /// Area of the overlap, ignoring the space tag.
    fn overlap_area(&self, other: &BBox) -> f64 {
        let iw = (self.x2().min(other.x2()) - self.x.max(other.x)).max(0.0);
        let ih = (self.y2().min(other.y2()) - self.y.max(other.y)).max(0.0);
        iw * ih
    }

    /// Intersection with the rectangle `[0, width] x [0, height]`.
    pub fn clip_to(&self, width: f64, height: f64) -> BBox {
        let x1 = self.x.clamp(0.0, width);
        let y1 = self.y.clamp(0.0, height);
        let x2 = self.x2().clamp(0.0, width);
        let y2 = self.y2().clamp(0.0, height);
        BBox {
            x: x1,
            y: y1,
            w: (x2 - x1).max(0.0),
            h: (y2 - y1).max(0.0),
            space: self.space,
        }
    }
}

/// Intersection over union of two boxes in the same space.
///
/// Zero-area boxes give 0 against anything, themselves included.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    if a.space != b.space {
        return Err(Error::SpaceMismatch {
            left: a.space,
            right: b.space,
        });
    }
    Ok(iou_unchecked(a, b))
}

/// [`iou`] for callers that have already established both boxes share a space.
pub(crate) fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    if (a.x, a.y, a.w, a.h) == (b.x, b.y, b.w, b.h) {
        // (x + w) - x need not equal w, so identical boxes are special-cased
        return if a.area() > 0.0 { 1.0 } else { 0.0 };
    }
    let inter = a.overlap_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 || inter <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::slide(x, y, w, h).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = b(3.0, 4.0, 10.0, 7.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(
            iou(&b(0.0, 0.0, 10.0, 10.0), &b(20.0, 20.0, 5.0, 5.0)).unwrap(),
            0.0
        );
        let v = iou(&b(0.0, 0.0, 2.0, 2.0), &b(1.0, 1.0, 2.0, 2.0)).unwrap();
        assert!((v - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn zero_area_is_legal_and_scores_zero() {
        let z = b(5.0, 5.0, 0.0, 4.0);
        assert_eq!(iou(&z, &z).unwrap(), 0.0);
        assert_eq!(iou(&z, &b(0.0, 0.0, 10.0, 10.0)).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_spaces_rejected() {
        let a = b(0.0, 0.0, 1.0, 1.0);
        let t = a.with_space(Space::Tile(3));
        assert!(matches!(iou(&a, &t), Err(Error::SpaceMismatch { .. })));
    }

    #[test]
    fn negative_or_nan_extent_rejected() {
        assert!(BBox::slide(0.0, 0.0, -1.0, 1.0).is_err());
        assert!(BBox::slide(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn converters_agree() {
        let c = BBox::from_center(15.0, 20.0, 10.0, 8.0, Space::Slide).unwrap();
        let k = BBox::from_corners(10.0, 16.0, 20.0, 24.0, Space::Slide).unwrap();
        assert_eq!(c, k);
    }

    #[test]
    fn clip_to_bounds() {
        let c = b(-5.0, 590.0, 20.0, 20.0).clip_to(800.0, 600.0);
        assert_eq!((c.x, c.y, c.w, c.h), (0.0, 590.0, 15.0, 10.0));
        let out = b(900.0, 0.0, 10.0, 10.0).clip_to(800.0, 600.0);
        assert_eq!(out.area(), 0.0);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..500.0f64, 0.0..500.0f64, 0.5..200.0f64, 0.5..200.0f64)
            .prop_map(|(x, y, w, h)| b(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let ab = iou(&a, &c).unwrap();
            let ba = iou(&c, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn iou_translation_invariant(a in arb_box(), c in arb_box(), dx in -64i32..64, dy in -64i32..64) {
            let shift = |bx: BBox| b(bx.x + dx as f64, bx.y + dy as f64, bx.w, bx.h);
            let before = iou(&a, &c).unwrap();
            let after = iou(&shift(a), &shift(c)).unwrap();
            prop_assert!((before - after).abs() < 1e-9);
        }

        #[test]
        fn iou_one_only_for_identical(a in arb_box(), c in arb_box()) {
            let v = iou(&a, &c).unwrap();
            if v == 1.0 {
                prop_assert!((a.x - c.x).abs() < 1e-6 && (a.w - c.w).abs() < 1e-6);
            }
            prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
        }
    }
}
