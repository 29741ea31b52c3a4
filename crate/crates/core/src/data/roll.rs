//! Piano-roll images of event streams.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::notes::unflatten;
use crate::error::{Error, Result};
use crate::events::EventStream;

#[derive(Clone, Debug)]
pub struct RollStyle {
    pub pixels_per_second: f64,
    pub pixels_per_pitch: u32,
    /// Images are never wider than this; longer streams are compressed.
    pub max_width: u32,
}

impl Default for RollStyle {
    fn default() -> Self {
        RollStyle {
            pixels_per_second: 100.0,
            pixels_per_pitch: 4,
            max_width: 8192,
        }
    }
}

const BACKGROUND: Rgb<u8> = Rgb([16, 16, 20]);
const OCTAVE_LINE: Rgb<u8> = Rgb([40, 40, 48]);

/// A stable, saturated color per instrument.
fn color(instrument: u16) -> Rgb<u8> {
    let hue = (instrument as f64 * 0.618_033_988_75).fract() * 6.0;
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    let (r, g, b) = match hue as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    let c = |v: f64| (60.0 + 195.0 * v) as u8;
    Rgb([c(r), c(g), c(b)])
}

/// Time runs left to right, pitch bottom to top; brightness follows
/// velocity. Unpaired events are not drawn.
pub fn render(stream: &EventStream, style: &RollStyle) -> RgbImage {
    let notes = unflatten(stream);
    let end = notes.iter().map(|n| n.offset).fold(0.0, f64::max);
    let natural = (end * style.pixels_per_second).ceil() as u32 + 1;
    let width = natural.clamp(1, style.max_width.max(1));
    let scale = (width - 1) as f64 / end.max(1e-9);
    let pp = style.pixels_per_pitch.max(1);
    let height = 128 * pp;
    let mut img = RgbImage::from_pixel(width, height, BACKGROUND);
    for octave in (0..128).step_by(12) {
        let y = height - 1 - octave * pp;
        for x in 0..width {
            img.put_pixel(x, y, OCTAVE_LINE);
        }
    }
    for n in &notes {
        let x0 = (n.onset * scale).floor() as u32;
        let x1 = ((n.offset * scale).ceil() as u32).clamp(x0 + 1, width);
        let top = height - (n.pitch as u32 + 1) * pp;
        let Rgb(c) = color(n.instrument.get());
        let k = 0.35 + 0.65 * (n.velocity / 127.0).clamp(0.0, 1.0);
        let px = Rgb(c.map(|v| (v as f64 * k) as u8));
        for x in x0.min(width - 1)..x1 {
            for y in top..top + pp.saturating_sub(1).max(1) {
                img.put_pixel(x, y, px);
            }
        }
    }
    img
}

pub fn save_png(stream: &EventStream, style: &RollStyle, path: &Path) -> Result<()> {
    render(stream, style)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
