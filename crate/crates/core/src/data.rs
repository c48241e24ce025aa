//! Synthetic moving-shapes video clips with dense labels.
//!
//! Each clip holds a textured static background (class 0) and a handful of
//! colored geometric shapes (classes 1..K-1) translating with constant speed;
//! velocity components flip sign at the walls so every per-frame displacement
//! has exactly the configured magnitude and shapes never leave the frame.
//! Labels take the topmost (last-drawn) shape per pixel. Everything is a pure
//! function of the seed.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::init::seed_stream;
use crate::tensor::{read_tensor, write_tensor, DType, Tensor};

/// Generation parameters for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideoConfig {
    pub height: usize,
    pub width: usize,
    /// Background plus up to five shape classes.
    pub num_classes: usize,
    pub shapes_per_clip: usize,
    /// Exact centroid displacement per frame, in pixels.
    pub motion_px_per_frame: f64,
    pub clip_length: usize,
    /// Amplitude of the static background texture.
    pub texture_amp: f64,
    /// Std-dev of the static per-pixel clutter field (frozen per clip).
    pub noise_std: f64,
    /// Hue spread around each class's color family center, in degrees.
    /// Class centers sit 72 degrees apart, so spreads past 36 make neighbor
    /// families overlap and force classification off shape geometry.
    pub hue_jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticVideoConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            num_classes: 6,
            shapes_per_clip: 5,
            motion_px_per_frame: 8.0,
            clip_length: 8,
            texture_amp: 0.08,
            noise_std: 0.06,
            hue_jitter: 36.0,
            seed: 0,
        }
    }
}

impl SyntheticVideoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(Error::InvalidArg {
                op: "SyntheticVideoConfig",
                msg: format!("frame {}x{} too small", self.height, self.width),
            });
        }
        if !(2..=6).contains(&self.num_classes) {
            return Err(Error::InvalidArg {
                op: "SyntheticVideoConfig",
                msg: format!("num_classes must be in 2..=6, got {}", self.num_classes),
            });
        }
        if self.clip_length == 0 {
            return Err(Error::InvalidArg {
                op: "SyntheticVideoConfig",
                msg: "clip_length must be >= 1".into(),
            });
        }
        if self.motion_px_per_frame < 0.0 {
            return Err(Error::InvalidArg {
                op: "SyntheticVideoConfig",
                msg: "motion must be nonnegative".into(),
            });
        }
        let max_size = shape_size_range(self).1;
        let margin = max_size + 2.0;
        let span = self.height.min(self.width) as f64 - 1.0 - 2.0 * margin;
        if span < 2.0 * self.motion_px_per_frame || span <= 0.0 {
            return Err(Error::InvalidArg {
                op: "SyntheticVideoConfig",
                msg: format!(
                    "shapes (size up to {max_size}) with motion {} do not fit a {}x{} frame",
                    self.motion_px_per_frame, self.height, self.width
                ),
            });
        }
        Ok(())
    }
}

fn shape_size_range(cfg: &SyntheticVideoConfig) -> (f64, f64) {
    // Scale with resolution so crops of larger generations look alike.
    let base = cfg.height.min(cfg.width) as f64;
    (base * 0.09, base * 0.17)
}

/// Shape archetypes; the class id is the kind index plus one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Square,
    Circle,
    Triangle,
    Ring,
    Diamond,
}

const ALL_KINDS: [ShapeKind; 5] = [
    ShapeKind::Square,
    ShapeKind::Circle,
    ShapeKind::Triangle,
    ShapeKind::Ring,
    ShapeKind::Diamond,
];

impl ShapeKind {
    fn contains(&self, dy: f64, dx: f64, s: f64) -> bool {
        match self {
            ShapeKind::Square => dy.abs() <= s && dx.abs() <= s,
            ShapeKind::Circle => dy * dy + dx * dx <= s * s,
            ShapeKind::Triangle => dy.abs() <= s && dx.abs() <= (dy + s) * 0.5,
            ShapeKind::Ring => {
                let r2 = dy * dy + dx * dx;
                r2 <= s * s && r2 >= (0.45 * s) * (0.45 * s)
            }
            ShapeKind::Diamond => dy.abs() + dx.abs() <= s,
        }
    }
}

/// One shape's identity and its ground-truth trajectory.
#[derive(Debug, Clone)]
pub struct ShapeTrack {
    pub class_id: i64,
    pub kind: ShapeKind,
    pub size: f64,
    pub color: [f64; 3],
    /// Per-frame center (y, x).
    pub centers: Vec<(f64, f64)>,
}

/// Frames, labels, and generation metadata of one synthetic clip.
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub frames: Vec<Tensor>,
    pub labels: Vec<Vec<i64>>,
    pub tracks: Vec<ShapeTrack>,
    pub config: SyntheticVideoConfig,
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let i = h.floor() as i32 % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Generate one clip. Deterministic in the seed.
pub fn generate_clip(cfg: &SyntheticVideoConfig) -> Result<VideoClip> {
    cfg.validate()?;
    let mut rng: ChaCha8Rng = seed_stream(cfg.seed, "clip");
    let (h, w) = (cfg.height, cfg.width);
    let shape_classes = cfg.num_classes - 1;
    let (smin, smax) = shape_size_range(cfg);

    // Static background: base hue, low-frequency texture, frozen clutter.
    let bg_v = rng.gen_range(0.25..0.55);
    let bg_color = hsv_to_rgb(rng.gen_range(0.0..360.0), rng.gen_range(0.03..0.12), bg_v);
    let (fy, fx) = (
        rng.gen_range(0.5..2.0) * std::f64::consts::TAU / h as f64,
        rng.gen_range(0.5..2.0) * std::f64::consts::TAU / w as f64,
    );
    let (py, px) = (rng.gen_range(0.0..6.28), rng.gen_range(0.0..6.28));
    let mut clutter = vec![0.0f64; h * w];
    for v in clutter.iter_mut() {
        // Box-Muller on two uniforms keeps the stream draw count fixed.
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        *v = cfg.noise_std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    }

    // Shape population with constant-speed trajectories.
    let mut tracks = Vec::with_capacity(cfg.shapes_per_clip);
    for _ in 0..cfg.shapes_per_clip {
        let kind_idx = rng.gen_range(0..shape_classes.min(ALL_KINDS.len()));
        let kind = ALL_KINDS[kind_idx];
        let size = rng.gen_range(smin..smax);
        let hue = kind_idx as f64 * 72.0
            + if cfg.hue_jitter > 0.0 {
                rng.gen_range(-cfg.hue_jitter..cfg.hue_jitter)
            } else {
                0.0
            };
        let color = hsv_to_rgb(hue, rng.gen_range(0.55..0.95), rng.gen_range(0.6..0.98));
        let margin = size + 2.0;
        let (lo_y, hi_y) = (margin, h as f64 - 1.0 - margin);
        let (lo_x, hi_x) = (margin, w as f64 - 1.0 - margin);
        let mut cy = rng.gen_range(lo_y..hi_y);
        let mut cx = rng.gen_range(lo_x..hi_x);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut vy = cfg.motion_px_per_frame * angle.sin();
        let mut vx = cfg.motion_px_per_frame * angle.cos();
        let mut centers = Vec::with_capacity(cfg.clip_length);
        centers.push((cy, cx));
        for _ in 1..cfg.clip_length {
            if cy + vy > hi_y || cy + vy < lo_y {
                vy = -vy;
            }
            if cx + vx > hi_x || cx + vx < lo_x {
                vx = -vx;
            }
            cy += vy;
            cx += vx;
            centers.push((cy, cx));
        }
        tracks.push(ShapeTrack {
            class_id: (kind_idx + 1) as i64,
            kind,
            size,
            color,
            centers,
        });
    }

    // Rasterize every frame.
    let mut frames = Vec::with_capacity(cfg.clip_length);
    let mut labels = Vec::with_capacity(cfg.clip_length);
    for t in 0..cfg.clip_length {
        let mut rgb = vec![0.0f64; 3 * h * w];
        let mut lab = vec![0i64; h * w];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let tex = cfg.texture_amp
                    * ((fy * y as f64 + py).sin() * (fx * x as f64 + px).cos());
                for (c, base) in bg_color.iter().enumerate() {
                    rgb[c * h * w + p] = (base + tex + clutter[p]).clamp(0.0, 1.0);
                }
            }
        }
        for track in &tracks {
            let (cy, cx) = track.centers[t];
            let s = track.size;
            let y0 = ((cy - s).floor().max(0.0)) as usize;
            let y1 = ((cy + s).ceil().min(h as f64 - 1.0)) as usize;
            let x0 = ((cx - s).floor().max(0.0)) as usize;
            let x1 = ((cx + s).ceil().min(w as f64 - 1.0)) as usize;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                    if track.kind.contains(dy, dx, s) {
                        let p = y * w + x;
                        lab[p] = track.class_id;
                        for (c, col) in track.color.iter().enumerate() {
                            rgb[c * h * w + p] = (col + clutter[p]).clamp(0.0, 1.0);
                        }
                    }
                }
            }
        }
        frames.push(Tensor::new(vec![3, h, w], rgb)?);
        labels.push(lab);
    }
    Ok(VideoClip {
        frames,
        labels,
        tracks,
        config: cfg.clone(),
    })
}

// ---- label maps as binary PGM (P5) ----

pub fn write_pgm(w: &mut impl Write, labels: &[i64], width: usize, height: usize) -> Result<()> {
    if labels.len() != width * height {
        return Err(Error::InvalidArg {
            op: "write_pgm",
            msg: format!("{} labels for {width}x{height}", labels.len()),
        });
    }
    write!(w, "P5\n{width} {height}\n255\n")?;
    let bytes: Result<Vec<u8>> = labels
        .iter()
        .map(|&l| {
            if (0..=255).contains(&l) {
                Ok(l as u8)
            } else {
                Err(Error::LabelOutOfRange {
                    label: l,
                    classes: 256,
                })
            }
        })
        .collect();
    w.write_all(&bytes?)?;
    Ok(())
}

pub fn read_pgm(r: &mut impl Read) -> Result<(Vec<i64>, usize, usize)> {
    let mut header = Vec::new();
    let mut byte = [0u8; 1];
    let mut fields = 0;
    // P5, width, height, maxval, then a single whitespace byte.
    while fields < 4 {
        r.read_exact(&mut byte)?;
        if byte[0].is_ascii_whitespace() {
            if header.last().map(|b: &u8| !b.is_ascii_whitespace()).unwrap_or(false) {
                fields += 1;
            }
        }
        header.push(byte[0]);
    }
    let text = String::from_utf8_lossy(&header);
    let mut tok = text.split_whitespace();
    if tok.next() != Some("P5") {
        return Err(Error::Format {
            msg: "not a P5 PGM".into(),
        });
    }
    let width: usize = tok
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format {
            msg: "bad PGM width".into(),
        })?;
    let height: usize = tok
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format {
            msg: "bad PGM height".into(),
        })?;
    let maxval: usize = tok
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format {
            msg: "bad PGM maxval".into(),
        })?;
    if maxval != 255 {
        return Err(Error::Format {
            msg: format!("unsupported PGM maxval {maxval}"),
        });
    }
    let mut data = vec![0u8; width * height];
    r.read_exact(&mut data)?;
    Ok((data.iter().map(|&b| b as i64).collect(), width, height))
}

// ---- clip directory storage ----

/// Save a clip: `frame_NNNN.tsr` + `label_NNNN.pgm` per frame, an `index.txt`
/// manifest listing frame order, and a `config.txt` echo.
pub fn save_clip(dir: &Path, clip: &VideoClip) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut index = String::from(format!("frames {}\n", clip.frames.len()));
    for (i, (frame, labels)) in clip.frames.iter().zip(&clip.labels).enumerate() {
        let fname = format!("frame_{i:04}.tsr");
        let lname = format!("label_{i:04}.pgm");
        let mut fw = fs::File::create(dir.join(&fname))?;
        write_tensor(&mut fw, frame, DType::F64)?;
        let mut lw = fs::File::create(dir.join(&lname))?;
        write_pgm(&mut lw, labels, clip.config.width, clip.config.height)?;
        index.push_str(&format!("{fname} {lname}\n"));
    }
    fs::write(dir.join("index.txt"), index)?;
    let c = &clip.config;
    let echo = format!(
        "height = {}\nwidth = {}\nnum_classes = {}\nshapes_per_clip = {}\n\
         motion_px_per_frame = {}\nclip_length = {}\ntexture_amp = {}\nnoise_std = {}\nhue_jitter = {}\nseed = {}\n",
        c.height,
        c.width,
        c.num_classes,
        c.shapes_per_clip,
        c.motion_px_per_frame,
        c.clip_length,
        c.texture_amp,
        c.noise_std,
        c.hue_jitter,
        c.seed
    );
    fs::write(dir.join("config.txt"), echo)?;
    Ok(())
}

/// Load a clip saved by [`save_clip`]. Trajectories are generation metadata
/// and do not round-trip; the returned clip has no tracks.
pub fn load_clip(dir: &Path) -> Result<VideoClip> {
    let index = fs::read_to_string(dir.join("index.txt"))?;
    let mut lines = index.lines();
    let head = lines.next().ok_or_else(|| Error::Format {
        msg: "empty clip index".into(),
    })?;
    let count: usize = head
        .strip_prefix("frames ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format {
            msg: format!("bad clip index header {head:?}"),
        })?;
    let mut config = SyntheticVideoConfig::default();
    for line in fs::read_to_string(dir.join("config.txt"))?.lines() {
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "height" => config.height = value.parse().unwrap_or(config.height),
            "width" => config.width = value.parse().unwrap_or(config.width),
            "num_classes" => config.num_classes = value.parse().unwrap_or(config.num_classes),
            "shapes_per_clip" => {
                config.shapes_per_clip = value.parse().unwrap_or(config.shapes_per_clip)
            }
            "motion_px_per_frame" => {
                config.motion_px_per_frame = value.parse().unwrap_or(config.motion_px_per_frame)
            }
            "clip_length" => config.clip_length = value.parse().unwrap_or(config.clip_length),
            "texture_amp" => config.texture_amp = value.parse().unwrap_or(config.texture_amp),
            "noise_std" => config.noise_std = value.parse().unwrap_or(config.noise_std),
            "hue_jitter" => config.hue_jitter = value.parse().unwrap_or(config.hue_jitter),
            "seed" => config.seed = value.parse().unwrap_or(config.seed),
            _ => {}
        }
    }
    let mut frames = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for line in lines.take(count) {
        let mut parts = line.split_whitespace();
        let (Some(fname), Some(lname)) = (parts.next(), parts.next()) else {
            return Err(Error::Format {
                msg: format!("bad clip index line {line:?}"),
            });
        };
        let mut fr = fs::File::open(dir.join(fname))?;
        frames.push(read_tensor(&mut fr)?);
        let mut lr = fs::File::open(dir.join(lname))?;
        let (lab, _, _) = read_pgm(&mut lr)?;
        labels.push(lab);
    }
    if frames.len() != count {
        return Err(Error::Format {
            msg: format!("clip index promises {count} frames, found {}", frames.len()),
        });
    }
    Ok(VideoClip {
        frames,
        labels,
        tracks: Vec::new(),
        config,
    })
}

// ---- augmentation used by the training loop ----

/// Horizontally flip a frame and its labels in place.
pub fn hflip(frame: &Tensor, labels: &[i64]) -> (Tensor, Vec<i64>) {
    let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
    let src = frame.data();
    let mut out = vec![0.0; c * h * w];
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[ci * h * w + y * w + x] = src[ci * h * w + y * w + (w - 1 - x)];
            }
        }
    }
    let mut lab = vec![0i64; h * w];
    for y in 0..h {
        for x in 0..w {
            lab[y * w + x] = labels[y * w + (w - 1 - x)];
        }
    }
    (Tensor::new(vec![c, h, w], out).unwrap(), lab)
}

/// Crop a `[C,H,W]` frame and labels to `ch x cw` at offset `(oy, ox)`.
pub fn crop(
    frame: &Tensor,
    labels: &[i64],
    oy: usize,
    ox: usize,
    ch_out: usize,
    cw_out: usize,
) -> Result<(Tensor, Vec<i64>)> {
    let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
    if oy + ch_out > h || ox + cw_out > w {
        return Err(Error::InvalidArg {
            op: "crop",
            msg: format!("crop {ch_out}x{cw_out}@({oy},{ox}) exceeds {h}x{w}"),
        });
    }
    let src = frame.data();
    let mut out = vec![0.0; c * ch_out * cw_out];
    let mut lab = vec![0i64; ch_out * cw_out];
    for ci in 0..c {
        for y in 0..ch_out {
            for x in 0..cw_out {
                out[ci * ch_out * cw_out + y * cw_out + x] =
                    src[ci * h * w + (y + oy) * w + (x + ox)];
            }
        }
    }
    for y in 0..ch_out {
        for x in 0..cw_out {
            lab[y * cw_out + x] = labels[(y + oy) * w + (x + ox)];
        }
    }
    Ok((Tensor::new(vec![c, ch_out, cw_out], out)?, lab))
}
