//! Square boxes, region overlap, context windows, bilinear crop-resize and
//! the transforms between frame space and the search region.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Which coordinate frame a box lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    Frame,
    Search,
}

/// Axis-aligned square given by its center and side length, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquareBox {
    pub cx: f64,
    pub cy: f64,
    pub side: f64,
    pub space: Space,
}

impl SquareBox {
    pub fn new(cx: f64, cy: f64, side: f64, space: Space) -> Self {
        Self { cx, cy, side, space }
    }

    pub fn frame(cx: f64, cy: f64, side: f64) -> Self {
        Self::new(cx, cy, side, Space::Frame)
    }

    pub fn left(&self) -> f64 {
        self.cx - self.side / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cy - self.side / 2.0
    }

    pub fn area(&self) -> f64 {
        self.side * self.side
    }
}

/// Intersection-over-union of two squares in continuous geometry.
pub fn region_overlap(a: &SquareBox, b: &SquareBox) -> Result<f64> {
    if a.space != b.space {
        return Err(Error::Consistency(format!(
            "overlap between {:?} and {:?} boxes",
            a.space, b.space
        )));
    }
    // Interval overlap written from centers so identical boxes give exactly
    // their side (left + side - left can round below it).
    let extent = |da: f64| a.side.min(b.side).min(0.5 * (a.side + b.side) - da.abs());
    let ix = extent(a.cx - b.cx);
    let iy = extent(a.cy - b.cy);
    if ix <= 0.0 || iy <= 0.0 {
        return Ok(0.0);
    }
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return Ok(0.0);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Square crop region in frame coordinates; may extend past the frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropWindow {
    pub left: f64,
    pub top: f64,
    pub side: f64,
    pub frame_width: usize,
    pub frame_height: usize,
}

/// Window of twice the box side, centered on the box.
pub fn context_window(b: &SquareBox, frame_width: usize, frame_height: usize) -> CropWindow {
    let side = 2.0 * b.side;
    CropWindow {
        left: b.cx - side / 2.0,
        top: b.cy - side / 2.0,
        side,
        frame_width,
        frame_height,
    }
}

/// An RGB frame with 8-bit channels, stored row-major and interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl FrameImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height * 3 {
            return Err(Error::dim(
                "frame",
                format!("{width}x{height} RGB frame needs {} bytes, got {}", width * height * 3, pixels.len()),
            ));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * 3 + c]
    }
}

/// Network input cut from a frame: `[3, S, S]` values after mean subtraction.
#[derive(Debug, Clone)]
pub struct SearchPatch {
    pub pixels: Tensor,
    pub window: CropWindow,
}

impl SearchPatch {
    pub fn size(&self) -> usize {
        self.pixels.shape()[1]
    }
}

/// Bilinear resample of `window` to `size × size`, then subtract `mean_rgb`.
///
/// Sample positions use pixel-center alignment and are clamped to the span of
/// pixel centers inside the window, so pixels whose centers fall outside the
/// window never contribute. Pixels outside the frame read as `mean_rgb`.
pub fn crop_resize(frame: &FrameImage, window: &CropWindow, mean_rgb: [f64; 3], size: usize) -> Result<SearchPatch> {
    if !(window.side > 0.0) || !window.side.is_finite() {
        return Err(Error::Config(format!("degenerate crop window side {}", window.side)));
    }
    if size == 0 {
        return Err(Error::Config("patch size must be positive".into()));
    }
    let scale = window.side / size as f64;
    let axis = |origin: f64| -> Vec<(isize, isize, f64)> {
        // pixel k has its center at k + 0.5
        let lo = (origin - 0.5).ceil();
        let hi = (origin + window.side - 0.5).floor().max(lo);
        (0..size)
            .map(|i| {
                let x = (origin + (i as f64 + 0.5) * scale - 0.5).clamp(lo, hi);
                let x0 = x.floor();
                let frac = x - x0;
                let x0 = x0 as isize;
                (x0, if frac > 0.0 { x0 + 1 } else { x0 }, frac)
            })
            .collect()
    };
    let xs = axis(window.left);
    let ys = axis(window.top);
    let (w, h) = (frame.width as isize, frame.height as isize);
    let fetch = |x: isize, y: isize, c: usize| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            mean_rgb[c]
        } else {
            frame.pixels[((y * w + x) as usize) * 3 + c] as f64
        }
    };
    let plane = size * size;
    let mut out = vec![0.0; 3 * plane];
    for (row, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (col, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..3 {
                let top = fetch(x0, y0, c) * (1.0 - fx) + fetch(x1, y0, c) * fx;
                let bottom = fetch(x0, y1, c) * (1.0 - fx) + fetch(x1, y1, c) * fx;
                out[c * plane + row * size + col] = top * (1.0 - fy) + bottom * fy - mean_rgb[c];
            }
        }
    }
    Ok(SearchPatch {
        pixels: Tensor::new(vec![3, size, size], out)?,
        window: *window,
    })
}

/// Map a frame-space box into the `size × size` search region of `window`.
pub fn to_search_coords(b: &SquareBox, window: &CropWindow, size: usize) -> Result<SquareBox> {
    if b.space != Space::Frame {
        return Err(Error::Consistency("expected a frame-space box".into()));
    }
    let s = size as f64 / window.side;
    Ok(SquareBox::new(
        (b.cx - window.left) * s,
        (b.cy - window.top) * s,
        b.side * s,
        Space::Search,
    ))
}

/// Inverse of [`to_search_coords`].
pub fn to_frame_coords(b: &SquareBox, window: &CropWindow, size: usize) -> Result<SquareBox> {
    if b.space != Space::Search {
        return Err(Error::Consistency("expected a search-space box".into()));
    }
    let s = window.side / size as f64;
    Ok(SquareBox::new(
        b.cx * s + window.left,
        b.cy * s + window.top,
        b.side * s,
        Space::Frame,
    ))
}

/// Regression target: the search-space box normalized by the patch size.
pub fn encode_target(b: &SquareBox, size: usize) -> Result<[f64; 3]> {
    if b.space != Space::Search {
        return Err(Error::Consistency("targets are encoded from search-space boxes".into()));
    }
    let s = size as f64;
    Ok([b.cx / s, b.cy / s, b.side / s])
}

/// Inverse of [`encode_target`], clamping the side to at least one pixel.
pub fn decode_output(v: [f64; 3], size: usize) -> SquareBox {
    let s = size as f64;
    SquareBox::new(v[0] * s, v[1] * s, (v[2] * s).max(1.0), Space::Search)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame_box(cx: f64, cy: f64, side: f64) -> SquareBox {
        SquareBox::frame(cx, cy, side)
    }

    /// Fraction of a fine sample grid covered by both / either box.
    fn rasterized_iou(a: &SquareBox, b: &SquareBox, step: f64) -> f64 {
        let x0 = a.left().min(b.left());
        let y0 = a.top().min(b.top());
        let x1 = (a.left() + a.side).max(b.left() + b.side);
        let y1 = (a.top() + a.side).max(b.top() + b.side);
        let inside = |bx: &SquareBox, x: f64, y: f64| {
            x >= bx.left() && x < bx.left() + bx.side && y >= bx.top() && y < bx.top() + bx.side
        };
        let (mut inter, mut union) = (0u64, 0u64);
        let mut y = y0 + step / 2.0;
        while y < y1 {
            let mut x = x0 + step / 2.0;
            while x < x1 {
                let (ia, ib) = (inside(a, x, y), inside(b, x, y));
                inter += (ia && ib) as u64;
                union += (ia || ib) as u64;
                x += step;
            }
            y += step;
        }
        if union == 0 { 0.0 } else { inter as f64 / union as f64 }
    }

    #[test]
    fn overlap_examples() {
        let a = frame_box(10.0, 10.0, 10.0);
        assert_eq!(region_overlap(&a, &a).unwrap(), 1.0);
        assert_eq!(region_overlap(&a, &frame_box(100.0, 100.0, 10.0)).unwrap(), 0.0);
        // corners at (5,5) and (10,10), both side 10
        let b = frame_box(15.0, 15.0, 10.0);
        let iou = region_overlap(&a, &b).unwrap();
        assert!((iou - 25.0 / 175.0).abs() < 1e-12);
        assert!((rasterized_iou(&a, &b, 0.05) - 25.0 / 175.0).abs() < 1e-3);
        let s = SquareBox::new(10.0, 10.0, 10.0, Space::Search);
        assert!(matches!(region_overlap(&a, &s), Err(Error::Consistency(_))));
    }

    #[test]
    fn context_window_examples() {
        let w = context_window(&frame_box(100.0, 100.0, 50.0), 320, 240);
        assert_eq!((w.left, w.top, w.side), (50.0, 50.0, 100.0));
        let w = context_window(&frame_box(0.0, 0.0, 40.0), 320, 240);
        assert_eq!((w.left, w.top, w.side), (-40.0, -40.0, 80.0));
        let w = context_window(&frame_box(160.0, 120.0, 120.0), 320, 240);
        assert_eq!((w.top, w.side), (0.0, 240.0));
    }

    #[test]
    fn crop_of_whole_frame_is_identity() {
        let pixels: Vec<u8> = (0..4 * 4 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let frame = FrameImage::new(4, 4, pixels).unwrap();
        let window = CropWindow { left: 0.0, top: 0.0, side: 4.0, frame_width: 4, frame_height: 4 };
        let patch = crop_resize(&frame, &window, [0.0; 3], 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                for c in 0..3 {
                    assert_eq!(patch.pixels.data()[c * 16 + y * 4 + x], frame.get(x, y, c) as f64);
                }
            }
        }
    }

    #[test]
    fn mean_colored_frame_gives_zero_patch() {
        let frame = FrameImage::filled(20, 10, [10, 20, 30]);
        let window = context_window(&frame_box(3.0, 3.0, 12.0), 20, 10);
        let patch = crop_resize(&frame, &window, [10.0, 20.0, 30.0], 16).unwrap();
        assert!(patch.pixels.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkerboard_upsample_matches_direct_bilinear() {
        let mut pixels = vec![0u8; 12];
        for (i, v) in [255u8, 0, 0, 255].iter().enumerate() {
            pixels[i * 3..i * 3 + 3].fill(*v);
        }
        let frame = FrameImage::new(2, 2, pixels).unwrap();
        let window = CropWindow { left: 0.0, top: 0.0, side: 2.0, frame_width: 2, frame_height: 2 };
        let patch = crop_resize(&frame, &window, [0.0; 3], 4).unwrap();
        // source coordinate of output i: (i + 0.5) / 2 - 0.5 clamped to [0, 1]
        let coord = |i: usize| ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0);
        let src = |x: usize, y: usize| frame.get(x, y, 0) as f64;
        for row in 0..4 {
            for col in 0..4 {
                let (u, v) = (coord(col), coord(row));
                let expected = src(0, 0) * (1.0 - u) * (1.0 - v)
                    + src(1, 0) * u * (1.0 - v)
                    + src(0, 1) * (1.0 - u) * v
                    + src(1, 1) * u * v;
                assert!((patch.pixels.data()[row * 4 + col] - expected).abs() < 1e-12);
            }
        }
        // interior samples are genuine blends
        assert!((patch.pixels.data()[5] - 255.0 * 0.625).abs() < 1e-12);
    }

    #[test]
    fn degenerate_window_is_rejected() {
        let frame = FrameImage::filled(4, 4, [0, 0, 0]);
        let window = CropWindow { left: 0.0, top: 0.0, side: 0.0, frame_width: 4, frame_height: 4 };
        assert!(matches!(crop_resize(&frame, &window, [0.0; 3], 4), Err(Error::Config(_))));
    }

    #[test]
    fn search_transform_example() {
        let window = CropWindow { left: 50.0, top: 50.0, side: 100.0, frame_width: 320, frame_height: 240 };
        let s = to_search_coords(&frame_box(100.0, 100.0, 50.0), &window, 224).unwrap();
        for v in [s.cx, s.cy, s.side] {
            assert!((v - 112.0).abs() < 1e-9);
        }
        for v in encode_target(&s, 224).unwrap() {
            assert!((v - 0.5).abs() < 1e-12);
        }
        let back = to_frame_coords(&s, &window, 224).unwrap();
        assert_eq!(back.space, Space::Frame);
        assert!((back.cx - 100.0).abs() < 1e-9 && (back.cy - 100.0).abs() < 1e-9 && (back.side - 50.0).abs() < 1e-9);
    }

    #[test]
    fn decode_clamps_side() {
        assert_eq!(decode_output([0.5, 0.5, 0.001], 224).side, 1.0);
    }

    fn arb_box() -> impl Strategy<Value = SquareBox> {
        (-50.0..400.0f64, -50.0..300.0f64, 8.0..120.0f64).prop_map(|(x, y, s)| frame_box(x, y, s))
    }

    proptest! {
        #[test]
        fn overlap_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = region_overlap(&a, &b).unwrap();
            let ba = region_overlap(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn self_overlap_is_exactly_one(a in arb_box()) {
            prop_assert_eq!(region_overlap(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn overlap_invariant_under_joint_translation_and_scale(
            a in arb_box(), b in arb_box(), dx in -100.0..100.0f64, dy in -100.0..100.0f64, k in 0.25..4.0f64,
        ) {
            let map = |bx: &SquareBox| frame_box(bx.cx * k + dx, bx.cy * k + dy, bx.side * k);
            let before = region_overlap(&a, &b).unwrap();
            let after = region_overlap(&map(&a), &map(&b)).unwrap();
            prop_assert!((before - after).abs() < 1e-9);
        }

        #[test]
        fn transforms_round_trip(b in arb_box(), anchor in arb_box(), size in 16usize..300) {
            let window = context_window(&anchor, 320, 240);
            let s = to_search_coords(&b, &window, size).unwrap();
            let back = to_frame_coords(&s, &window, size).unwrap();
            prop_assert!((back.cx - b.cx).abs() < 1e-9);
            prop_assert!((back.cy - b.cy).abs() < 1e-9);
            prop_assert!((back.side - b.side).abs() < 1e-9);
            let dec = decode_output(encode_target(&s, size).unwrap(), size);
            prop_assert!((dec.cx - s.cx).abs() < 1e-9 && (dec.side - s.side.max(1.0)).abs() < 1e-9);
        }

        #[test]
        fn centered_box_maps_to_patch_center(b in arb_box(), size in 16usize..300) {
            let window = context_window(&b, 320, 240);
            let s = to_search_coords(&b, &window, size).unwrap();
            prop_assert!((s.cx - size as f64 / 2.0).abs() < 1e-9);
            prop_assert!((s.cy - size as f64 / 2.0).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn crop_ignores_pixels_outside_window(
            cx in 0.0..64.0f64, cy in 0.0..48.0f64, side in 4.0..30.0f64, seed in any::<u64>(), size in 4usize..40,
        ) {
            let (w, h) = (64usize, 48usize);
            let base: Vec<u8> = (0..w * h * 3).map(|i| ((i as u64).wrapping_mul(seed | 1) >> 7) as u8).collect();
            let window = context_window(&frame_box(cx, cy, side), w, h);
            let mut altered = base.clone();
            for y in 0..h {
                for x in 0..w {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let inside = px >= window.left && px <= window.left + window.side
                        && py >= window.top && py <= window.top + window.side;
                    if !inside {
                        altered[(y * w + x) * 3..(y * w + x) * 3 + 3].fill(seed as u8 ^ 0x5a);
                    }
                }
            }
            let mean = [100.0, 110.0, 120.0];
            let a = crop_resize(&FrameImage::new(w, h, base).unwrap(), &window, mean, size).unwrap();
            let b = crop_resize(&FrameImage::new(w, h, altered).unwrap(), &window, mean, size).unwrap();
            prop_assert_eq!(a.pixels, b.pixels);
        }
    }
}
