//! Box geometry shared by the filter, the networks, training and evaluation.
//!
//! Boxes are kept in center form `(cx, cy, w, h)` internally. MOT files use the
//! top-left convention and are converted with [`BBox::from_tlwh`] /
//! [`BBox::to_tlwh`] at the I/O boundary.

use crate::error::{domain, Error, Result};

/// Default number of observations in a model input window.
pub const TRACKLET_LEN: usize = 5;

/// Smooth-L1 transition point, applied to image-normalized coordinates.
pub const SMOOTH_L1_BETA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn from_tlwh(left: f64, top: f64, w: f64, h: f64) -> Self {
        Self::new(left + w / 2.0, top + h / 2.0, w, h)
    }

    pub fn to_tlwh(&self) -> [f64; 4] {
        [
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.w,
            self.h,
        ]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// `(x1, y1, x2, y2)` corner form.
    pub fn corners(&self) -> [f64; 4] {
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        [self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    fn check_positive(&self, what: &str) -> Result<()> {
        if self.w > 0.0 && self.h > 0.0 && self.is_finite() {
            Ok(())
        } else {
            domain(format!(
                "{what} must have positive finite size, got {self:?}"
            ))
        }
    }
}

/// A box plus its first differences from the previous frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxObservation {
    pub bbox: BBox,
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl BoxObservation {
    pub fn first(bbox: BBox) -> Self {
        Self {
            bbox,
            dx: 0.0,
            dy: 0.0,
            dw: 0.0,
            dh: 0.0,
        }
    }

    pub fn following(prev: &BBox, bbox: BBox) -> Self {
        Self {
            bbox,
            dx: bbox.cx - prev.cx,
            dy: bbox.cy - prev.cy,
            dw: bbox.w - prev.w,
            dh: bbox.h - prev.h,
        }
    }

    pub fn to_array(&self) -> [f64; 8] {
        let b = &self.bbox;
        [b.cx, b.cy, b.w, b.h, self.dx, self.dy, self.dw, self.dh]
    }

    /// The 8-vector with positions and deltas divided by the image size.
    pub fn normalized(&self, img_w: f64, img_h: f64) -> [f64; 8] {
        let v = self.to_array();
        let s = [img_w, img_h, img_w, img_h];
        std::array::from_fn(|i| v[i] / s[i % 4])
    }
}

/// An ordered run of observations of one object.
///
/// `padded` counts leading observations that were synthesized by
/// [`Tracklet::to_window`] rather than observed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tracklet {
    pub observations: Vec<BoxObservation>,
    pub frame_ids: Vec<i64>,
    pub padded: usize,
}

impl Tracklet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a contiguous-delta tracklet from `(frame, box)` pairs.
    pub fn from_boxes(frames: &[i64], boxes: &[BBox]) -> Result<Self> {
        if frames.len() != boxes.len() {
            return domain("frame and box lists differ in length");
        }
        let mut t = Self::new();
        for (&f, &b) in frames.iter().zip(boxes) {
            t.push(f, b)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, frame: i64, bbox: BBox) -> Result<()> {
        if let Some(&last) = self.frame_ids.last() {
            if frame <= last {
                return domain(format!("frame {frame} does not follow frame {last}"));
            }
        }
        let obs = match self.observations.last() {
            Some(prev) => BoxObservation::following(&prev.bbox, bbox),
            None => BoxObservation::first(bbox),
        };
        self.observations.push(obs);
        self.frame_ids.push(frame);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn last_box(&self) -> Option<BBox> {
        self.observations.last().map(|o| o.bbox)
    }

    pub fn last_frame(&self) -> Option<i64> {
        self.frame_ids.last().copied()
    }

    /// Observations that were actually seen, excluding left padding.
    pub fn observed(&self) -> (&[i64], &[BoxObservation]) {
        (
            &self.frame_ids[self.padded..],
            &self.observations[self.padded..],
        )
    }

    /// Fixed-length view: the most recent `length` observations, or the
    /// earliest box repeated with zero deltas in front when shorter.
    pub fn to_window(&self, length: usize) -> Result<Tracklet> {
        if self.is_empty() {
            return domain("cannot window an empty tracklet");
        }
        if length == 0 {
            return domain("window length must be positive");
        }
        let n = self.len();
        if n >= length {
            let start = n - length;
            return Ok(Tracklet {
                observations: self.observations[start..].to_vec(),
                frame_ids: self.frame_ids[start..].to_vec(),
                padded: self.padded.saturating_sub(start),
            });
        }
        let missing = length - n;
        let first = self.observations[0].bbox;
        let first_frame = self.frame_ids[0];
        let mut observations = vec![BoxObservation::first(first); missing];
        observations.extend_from_slice(&self.observations);
        let mut frame_ids: Vec<i64> = (1..=missing as i64)
            .rev()
            .map(|k| first_frame - k)
            .collect();
        frame_ids.extend_from_slice(&self.frame_ids);
        Ok(Tracklet {
            observations,
            frame_ids,
            padded: self.padded + missing,
        })
    }
}

pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.check_positive("iou lhs")?;
    b.check_positive("iou rhs")?;
    Ok(iou_unchecked(a, b))
}

pub(crate) fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let [ax1, ay1, ax2, ay2] = a.corners();
    let [bx1, by1, bx2, by2] = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// `1 - GIoU(a, b)`, so zero for identical boxes and approaching 2 far apart.
pub fn giou_loss(a: &BBox, b: &BBox) -> Result<f64> {
    a.check_positive("giou lhs")?;
    b.check_positive("giou rhs")?;
    Ok(giou_loss_grad(a, b).0)
}

/// GIoU loss and its gradient with respect to `pred` in `(cx, cy, w, h)`.
///
/// At the non-differentiable points (coinciding edges) the one-sided
/// derivative with the prediction edge treated as the inner one is returned.
pub fn giou_loss_grad(pred: &BBox, target: &BBox) -> (f64, [f64; 4]) {
    let [px1, py1, px2, py2] = pred.corners();
    let [tx1, ty1, tx2, ty2] = target.corners();

    let iw_raw = px2.min(tx2) - px1.max(tx1);
    let ih_raw = py2.min(ty2) - py1.max(ty1);
    let iw = iw_raw.max(0.0);
    let ih = ih_raw.max(0.0);
    let inter = iw * ih;
    let union = pred.area() + target.area() - inter;
    let cw = px2.max(tx2) - px1.min(tx1);
    let ch = py2.max(ty2) - py1.min(ty1);
    let enclose = cw * ch;
    if union <= 0.0 || enclose <= 0.0 {
        return (2.0, [0.0; 4]);
    }
    let iou = inter / union;
    let loss = 2.0 - iou - union / enclose;

    // Partials with respect to the prediction corners (x1, x2, y1, y2).
    let pw = px2 - px1;
    let ph = py2 - py1;
    let overlap = iw_raw > 0.0 && ih_raw > 0.0;
    let di_dx2 = if overlap && px2 <= tx2 { ih } else { 0.0 };
    let di_dx1 = if overlap && px1 >= tx1 { -ih } else { 0.0 };
    let di_dy2 = if overlap && py2 <= ty2 { iw } else { 0.0 };
    let di_dy1 = if overlap && py1 >= ty1 { -iw } else { 0.0 };
    let da = [-ph, ph, -pw, pw];
    let di = [di_dx1, di_dx2, di_dy1, di_dy2];
    let dc = [
        if px1 <= tx1 { -ch } else { 0.0 },
        if px2 >= tx2 { ch } else { 0.0 },
        if py1 <= ty1 { -cw } else { 0.0 },
        if py2 >= ty2 { cw } else { 0.0 },
    ];
    let mut dl = [0.0; 4];
    for k in 0..4 {
        let du = da[k] - di[k];
        let d_iou = (di[k] * union - inter * du) / (union * union);
        let d_ratio = (du * enclose - union * dc[k]) / (enclose * enclose);
        dl[k] = -d_iou - d_ratio;
    }
    let [dx1, dx2, dy1, dy2] = dl;
    let grad = [dx1 + dx2, dy1 + dy2, (dx2 - dx1) / 2.0, (dy2 - dy1) / 2.0];
    (loss, grad)
}

/// Summed per-coordinate Smooth-L1 with `beta = 1`.
pub fn smooth_l1(pred: &[f64; 4], target: &[f64; 4]) -> f64 {
    smooth_l1_grad(pred, target).0
}

pub fn smooth_l1_grad(pred: &[f64; 4], target: &[f64; 4]) -> (f64, [f64; 4]) {
    let mut loss = 0.0;
    let mut grad = [0.0; 4];
    for i in 0..4 {
        let r = pred[i] - target[i];
        if r.abs() < SMOOTH_L1_BETA {
            loss += 0.5 * r * r / SMOOTH_L1_BETA;
            grad[i] = r / SMOOTH_L1_BETA;
        } else {
            loss += r.abs() - 0.5 * SMOOTH_L1_BETA;
            grad[i] = r.signum();
        }
    }
    (loss, grad)
}

pub fn normalize_box(b: &BBox, img_w: f64, img_h: f64) -> Result<[f64; 4]> {
    check_image(img_w, img_h)?;
    Ok([b.cx / img_w, b.cy / img_h, b.w / img_w, b.h / img_h])
}

pub fn denormalize_box(v: &[f64; 4], img_w: f64, img_h: f64) -> Result<BBox> {
    check_image(img_w, img_h)?;
    Ok(BBox::new(
        v[0] * img_w,
        v[1] * img_h,
        v[2] * img_w,
        v[3] * img_h,
    ))
}

fn check_image(img_w: f64, img_h: f64) -> Result<()> {
    if img_w > 0.0 && img_h > 0.0 && img_w.is_finite() && img_h.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "image dimensions must be positive, got {img_w}x{img_h}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tl(l: f64, t: f64, w: f64, h: f64) -> BBox {
        BBox::from_tlwh(l, t, w, h)
    }

    /// Counts grid cells of side `step` whose centers fall inside each box.
    /// Axis-aligned rectangles are product sets, so the 2-D count is the
    /// product of per-axis cell counts.
    fn raster_areas(a: &BBox, b: &BBox, step: f64) -> (f64, f64, f64) {
        let [ax1, ay1, ax2, ay2] = a.corners();
        let [bx1, by1, bx2, by2] = b.corners();
        let count = |lo: f64, hi: f64, origin: f64, n: usize, lo2: f64, hi2: f64| {
            let (mut one, mut both) = (0usize, 0usize);
            for i in 0..n {
                let c = origin + (i as f64 + 0.5) * step;
                let in1 = c >= lo && c < hi;
                one += in1 as usize;
                both += (in1 && c >= lo2 && c < hi2) as usize;
            }
            (one, both)
        };
        let (x0, y0) = (ax1.min(bx1), ay1.min(by1));
        let nx = ((ax2.max(bx2) - x0) / step).ceil() as usize;
        let ny = ((ay2.max(by2) - y0) / step).ceil() as usize;
        let (ax, ixs) = count(ax1, ax2, x0, nx, bx1, bx2);
        let (bx, _) = count(bx1, bx2, x0, nx, bx1, bx2);
        let (ay, iys) = count(ay1, ay2, y0, ny, by1, by2);
        let (by, _) = count(by1, by2, y0, ny, by1, by2);
        let cell = step * step;
        let inter = (ixs * iys) as f64 * cell;
        let union = (ax * ay + bx * by) as f64 * cell - inter;
        let enclose = (nx as f64 * step) * (ny as f64 * step);
        (inter, union, enclose)
    }

    #[test]
    fn iou_examples() {
        let a = tl(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &tl(10.0, 0.0, 2.0, 2.0)).unwrap(), 0.0);
        let third = iou(&a, &tl(1.0, 0.0, 2.0, 2.0)).unwrap();
        assert!((third - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_rejects_degenerate_boxes() {
        let a = tl(0.0, 0.0, 2.0, 2.0);
        assert!(matches!(
            iou(&a, &tl(0.0, 0.0, 0.0, 2.0)),
            Err(Error::Domain(_))
        ));
        assert!(giou_loss(&tl(0.0, 0.0, 2.0, -1.0), &a).is_err());
    }

    #[test]
    fn giou_examples() {
        let a = tl(0.0, 0.0, 2.0, 2.0);
        assert_eq!(giou_loss(&a, &a).unwrap(), 0.0);
        let far = giou_loss(&a, &tl(10.0, 0.0, 2.0, 2.0)).unwrap();
        assert!((far - 5.0 / 3.0).abs() < 1e-12);

        // Rasterized oracle for the overlapping case; the enclosing box equals
        // the union hull (3x2), so GIoU = IoU there.
        let b = tl(1.0, 0.0, 2.0, 2.0);
        let (inter, union, enclose) = raster_areas(&a, &b, 0.001);
        let oracle = 1.0 - (inter / union - (enclose - union) / enclose);
        let loss = giou_loss(&a, &b).unwrap();
        assert!((loss - oracle).abs() < 1e-3, "{loss} vs {oracle}");
        assert!((loss - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_l1_examples() {
        let z = [0.3, 0.1, 0.2, 0.4];
        assert_eq!(smooth_l1(&z, &z), 0.0);
        assert!((smooth_l1(&[0.5, 0.0, 0.0, 0.0], &[0.0; 4]) - 0.125).abs() < 1e-15);
        assert!((smooth_l1(&[0.0, 2.0, 0.0, 0.0], &[0.0; 4]) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn giou_gradient_matches_central_differences() {
        let cases = [
            (BBox::new(5.0, 5.0, 4.0, 3.0), BBox::new(6.1, 4.3, 5.0, 4.0)),
            (BBox::new(0.0, 0.0, 2.0, 2.0), BBox::new(7.0, 1.0, 2.0, 2.0)),
            (
                BBox::new(3.0, 3.0, 10.0, 9.0),
                BBox::new(3.2, 2.9, 4.0, 3.0),
            ),
        ];
        for (p, t) in cases {
            let (_, g) = giou_loss_grad(&p, &t);
            for k in 0..4 {
                let h = 1e-6;
                let mut plus = p.to_array();
                let mut minus = p.to_array();
                plus[k] += h;
                minus[k] -= h;
                let fd = (giou_loss_grad(&BBox::from_array(plus), &t).0
                    - giou_loss_grad(&BBox::from_array(minus), &t).0)
                    / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6, "coord {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn windowing() {
        let boxes: Vec<BBox> = (0..7)
            .map(|i| BBox::new(i as f64, 2.0 * i as f64, 5.0, 6.0))
            .collect();
        let frames: Vec<i64> = (1..=7).collect();
        let seven = Tracklet::from_boxes(&frames, &boxes).unwrap();
        let w = seven.to_window(5).unwrap();
        assert_eq!(w.frame_ids, vec![3, 4, 5, 6, 7]);
        assert_eq!(w.observations[0].dx, 1.0);
        assert_eq!(w.padded, 0);

        let five = Tracklet::from_boxes(&frames[..5], &boxes[..5]).unwrap();
        assert_eq!(five.to_window(5).unwrap(), five);

        let two = Tracklet::from_boxes(&frames[..2], &boxes[..2]).unwrap();
        let w = two.to_window(5).unwrap();
        assert_eq!(w.len(), 5);
        assert_eq!(w.padded, 3);
        for o in &w.observations[..3] {
            assert_eq!(o.bbox, boxes[0]);
            assert_eq!([o.dx, o.dy, o.dw, o.dh], [0.0; 4]);
        }
        assert_eq!(&w.observations[3..], &two.observations[..]);
        assert!(w.frame_ids.windows(2).all(|p| p[0] < p[1]));

        assert!(Tracklet::new().to_window(5).is_err());
    }

    #[test]
    fn tracklet_rejects_non_increasing_frames() {
        let b = BBox::new(1.0, 1.0, 1.0, 1.0);
        assert!(Tracklet::from_boxes(&[3, 3], &[b, b]).is_err());
    }

    #[test]
    fn normalization() {
        let b = BBox::new(960.0, 540.0, 96.0, 108.0);
        assert_eq!(
            normalize_box(&b, 1920.0, 1080.0).unwrap(),
            [0.5, 0.5, 0.05, 0.1]
        );
        let z = normalize_box(&BBox::new(0.0, 0.0, 3.0, 4.0), 10.0, 10.0).unwrap();
        assert_eq!(&z[..2], &[0.0, 0.0]);
        assert!(normalize_box(&b, 0.0, 1080.0).is_err());
        assert!(denormalize_box(&[0.1; 4], 1920.0, -1.0).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.5..40.0f64, 0.5..40.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b).unwrap();
            let ba = iou(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            let g = giou_loss(&a, &b).unwrap();
            prop_assert!(g >= (1.0 - ab) - 1e-9);
            prop_assert!(g <= 2.0 + 1e-12);
        }

        #[test]
        fn tlwh_round_trip(b in arb_box()) {
            let [l, t, w, h] = b.to_tlwh();
            let back = BBox::from_tlwh(l, t, w, h);
            for (x, y) in back.to_array().iter().zip(b.to_array()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn normalize_round_trip(b in arb_box(), iw in 1.0..4000.0f64, ih in 1.0..4000.0f64) {
            let n = normalize_box(&b, iw, ih).unwrap();
            let back = denormalize_box(&n, iw, ih).unwrap();
            for (x, y) in back.to_array().iter().zip(b.to_array()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn window_idempotent(len in 1usize..12, n in 1usize..12) {
            let boxes: Vec<BBox> = (0..n).map(|i| BBox::new(i as f64, 1.0, 2.0 + i as f64, 3.0)).collect();
            let frames: Vec<i64> = (0..n as i64).collect();
            let t = Tracklet::from_boxes(&frames, &boxes).unwrap();
            let once = t.to_window(len).unwrap();
            prop_assert_eq!(once.to_window(len).unwrap(), once.clone());
            prop_assert_eq!(once.len(), len);
        }
    }

    #[test]
    fn analytic_iou_matches_raster_counting() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let mut arb = || {
                BBox::new(
                    rng.random_range(0.0..6.0),
                    rng.random_range(0.0..6.0),
                    rng.random_range(0.5..4.0),
                    rng.random_range(0.5..4.0),
                )
            };
            let (a, b) = (arb(), arb());
            let (inter, union, _) = raster_areas(&a, &b, 1e-4);
            let oracle = inter / union;
            let analytic = iou(&a, &b).unwrap();
            assert!(
                (analytic - oracle).abs() < 2e-3,
                "{a:?} {b:?}: {analytic} vs {oracle}"
            );
        }
    }
}
