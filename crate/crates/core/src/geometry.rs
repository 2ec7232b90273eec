//! Box overlap and vector similarity.

use crate::error::{Error, Result};
use crate::types::BBox;

/// Intersection over union of two boxes; 0 when the union has no area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// `p.q / (|p||q|)`, or 0 when either vector has zero norm.
pub fn cosine_similarity(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ClassCountMismatch { expected: p.len(), actual: q.len() });
    }
    if p.is_empty() {
        return Err(Error::invalid("cosine similarity of empty vectors"));
    }
    let (mut dot, mut pp, mut qq) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(q) {
        dot += a * b;
        pp += a * a;
        qq += b * b;
    }
    if pp == 0.0 || qq == 0.0 {
        return Ok(0.0);
    }
    // Rounding can push identical vectors a hair above 1.
    Ok((dot / (pp.sqrt() * qq.sqrt())).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&bb(0., 0., 10., 10.), &bb(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&bb(0., 0., 10., 10.), &bb(20., 20., 30., 30.)), 0.0);
        // intersection 1x1, union 4 + 4 - 1
        let expected = 1.0 / (4.0 + 4.0 - 1.0);
        assert!((iou(&bb(0., 0., 2., 2.), &bb(1., 1., 3., 3.)) - expected).abs() < 1e-12);
    }

    #[test]
    fn iou_degenerate_is_zero() {
        let p = bb(3., 3., 3., 3.);
        assert_eq!(iou(&p, &p), 0.0);
        assert_eq!(iou(&p, &bb(0., 0., 1., 1.)), 0.0);
    }

    #[test]
    fn touching_boxes_do_not_overlap() {
        assert_eq!(iou(&bb(0., 0., 2., 2.), &bb(2., 0., 4., 2.)), 0.0);
    }

    #[test]
    fn cosine_examples() {
        let e = |i: usize| {
            let mut v = vec![0.0; 4];
            v[i] = 1.0;
            v
        };
        assert_eq!(cosine_similarity(&e(3), &e(3)).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&e(1), &e(2)).unwrap(), 0.0);
        // dot 0.6, norms 1 and 1
        assert!((cosine_similarity(&[0.6, 0.8], &[1.0, 0.0]).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..100.0f64, 0.0..100.0f64, 0.0..50.0f64, 0.0..50.0f64).prop_map(|(x, y, w, h)| bb(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn iou_self_is_one(a in arb_box()) {
            prop_assume!(a.area() > 1e-6);
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn iou_of_contained_box_is_area_ratio(a in arb_box(), fx in 0.0..1.0f64, fy in 0.0..1.0f64, fw in 0.0..1.0f64, fh in 0.0..1.0f64) {
            prop_assume!(a.area() > 1e-3);
            let x1 = a.x1 + fx * a.width();
            let y1 = a.y1 + fy * a.height();
            let b = bb(x1, y1, x1 + fw * (a.x2 - x1), y1 + fh * (a.y2 - y1));
            let expected = b.area() / a.area();
            prop_assert!((iou(&a, &b) - expected).abs() < 1e-9);
        }

        #[test]
        fn cosine_bounded_and_scale_invariant(
            p in prop::collection::vec(0.0..1.0f64, 5),
            q in prop::collection::vec(0.0..1.0f64, 5),
            alpha in 0.01..100.0f64,
        ) {
            let c = cosine_similarity(&p, &q).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
            let scaled: Vec<f64> = p.iter().map(|v| v * alpha).collect();
            prop_assert!((cosine_similarity(&scaled, &q).unwrap() - c).abs() < 1e-9);
        }
    }
}
