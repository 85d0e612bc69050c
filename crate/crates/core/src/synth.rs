//! Synthetic scenes with exact ground truth: flat-colored object archetypes
//! (discs and squares, optionally carrying an off-center bar marking) placed
//! on a plain background, with optional rotation, occluding strips and
//! additive noise.
//!
//! Scene descriptions have a small line-based text form:
//!
//! ```text
//! size 64 48
//! background 60 70 40
//! noise 6
//! archetype VS-50 0 disc 9 170 165 162 bar 8 2 130 150 200
//! archetype TMI-42 1 square 15 200 60 190
//! object VS-50 18.5 23.5 rotate 0
//! object TMI-42 44.5 23.5
//! occluder 10 14 16 33
//! ```
//!
//! Occluders default to the background color.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::raster::{Rgb, RgbImage};
use crate::roi::Rect;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("objects {0} and {1} overlap")]
    Overlap(usize, usize),
    #[error("object {0} does not fit inside the {1}x{2} frame")]
    OutOfFrame(usize, usize, usize),
    #[error("unknown archetype {0:?}")]
    UnknownArchetype(String),
    #[error("scene spec line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Disc { radius: f64 },
    Square { side: f64 },
}

impl Shape {
    fn contains(&self, u: f64, v: f64) -> bool {
        match *self {
            Shape::Disc { radius } => u * u + v * v <= radius * radius,
            Shape::Square { side } => u.abs() < side / 2.0 && v.abs() < side / 2.0,
        }
    }

    /// Radius of the smallest circle around the center containing the shape.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Disc { radius } => radius,
            Shape::Square { side } => side / std::f64::consts::SQRT_2,
        }
    }
}

/// Bar running from the object center along its local +x axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Marking {
    pub length: f64,
    pub half_width: f64,
    pub color: Rgb,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archetype {
    pub name: String,
    pub class_index: usize,
    pub shape: Shape,
    pub body: Rgb,
    pub marking: Option<Marking>,
}

impl Archetype {
    /// Color at local coordinates, or `None` outside the shape.
    fn color_at(&self, u: f64, v: f64) -> Option<Rgb> {
        if !self.shape.contains(u, v) {
            return None;
        }
        match self.marking {
            Some(m) if (0.0..=m.length).contains(&u) && v.abs() <= m.half_width => Some(m.color),
            _ => Some(self.body),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlacedObject {
    pub archetype: Archetype,
    pub center: (f64, f64),
    pub rotation_deg: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Occluder {
    pub rect: Rect,
    pub color: Option<Rgb>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub background: Rgb,
    /// Per-channel additive noise amplitude; each channel moves by a uniform
    /// integer in `[-noise, noise]`.
    pub noise: u8,
    pub objects: Vec<PlacedObject>,
    pub occluders: Vec<Occluder>,
}

impl SceneSpec {
    pub fn new(width: usize, height: usize, background: Rgb) -> Self {
        Self {
            width,
            height,
            background,
            noise: 0,
            objects: Vec::new(),
            occluders: Vec::new(),
        }
    }

    pub fn with_object(mut self, archetype: &Archetype, center: (f64, f64), rotation_deg: f64) -> Self {
        self.objects.push(PlacedObject {
            archetype: archetype.clone(),
            center,
            rotation_deg,
        });
        self
    }

    pub fn with_occluder(mut self, rect: Rect, color: Option<Rgb>) -> Self {
        self.occluders.push(Occluder { rect, color });
        self
    }

    pub fn with_noise(mut self, noise: u8) -> Self {
        self.noise = noise;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for (i, o) in self.objects.iter().enumerate() {
            let r = o.archetype.shape.bounding_radius();
            let (cx, cy) = o.center;
            if cx - r < 0.0 || cy - r < 0.0 || cx + r > self.width as f64 || cy + r > self.height as f64 {
                return Err(SynthError::OutOfFrame(i, self.width, self.height));
            }
            for (j, p) in self.objects[..i].iter().enumerate() {
                let d = ((cx - p.center.0).powi(2) + (cy - p.center.1).powi(2)).sqrt();
                if d <= r + p.archetype.shape.bounding_radius() {
                    return Err(SynthError::Overlap(j, i));
                }
            }
        }
        for (k, occ) in self.occluders.iter().enumerate() {
            if !occ.rect.fits(self.width, self.height) {
                return Err(SynthError::Parse {
                    line: 0,
                    msg: format!("occluder {k} lies outside the frame"),
                });
            }
        }
        Ok(())
    }

    /// Text form understood by [`SceneSpec::parse`].
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "size {} {}", self.width, self.height);
        let [r, g, b] = self.background;
        let _ = writeln!(out, "background {r} {g} {b}");
        let _ = writeln!(out, "noise {}", self.noise);
        let mut seen: Vec<&str> = Vec::new();
        for o in &self.objects {
            let a = &o.archetype;
            if seen.contains(&a.name.as_str()) {
                continue;
            }
            seen.push(&a.name);
            let _ = write!(out, "archetype {} {} ", a.name, a.class_index);
            match a.shape {
                Shape::Disc { radius } => {
                    let _ = write!(out, "disc {radius}");
                }
                Shape::Square { side } => {
                    let _ = write!(out, "square {side}");
                }
            }
            let [r, g, b] = a.body;
            let _ = write!(out, " {r} {g} {b}");
            if let Some(m) = a.marking {
                let [r, g, b] = m.color;
                let _ = write!(out, " bar {} {} {r} {g} {b}", m.length, m.half_width);
            }
            out.push('\n');
        }
        for o in &self.objects {
            let _ = writeln!(
                out,
                "object {} {} {} rotate {}",
                o.archetype.name, o.center.0, o.center.1, o.rotation_deg
            );
        }
        for occ in &self.occluders {
            let r = occ.rect;
            let _ = write!(out, "occluder {} {} {} {}", r.x1, r.y1, r.x2, r.y2);
            if let Some([cr, cg, cb]) = occ.color {
                let _ = write!(out, " {cr} {cg} {cb}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses the text form. `catalog` supplies archetypes that the text
    /// does not define itself.
    pub fn parse(text: &str, catalog: &[Archetype]) -> Result<Self, SynthError> {
        let mut spec = SceneSpec::new(64, 48, [0, 0, 0]);
        let mut archetypes: Vec<Archetype> = catalog.to_vec();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |msg: String| SynthError::Parse { line, msg };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let toks: Vec<&str> = content.split_whitespace().collect();
            let num = |i: usize| -> Result<f64, SynthError> {
                toks.get(i)
                    .ok_or_else(|| err(format!("missing field {i}")))?
                    .parse::<f64>()
                    .map_err(|e| err(format!("field {i}: {e}")))
            };
            let int = |i: usize| -> Result<usize, SynthError> {
                toks.get(i)
                    .ok_or_else(|| err(format!("missing field {i}")))?
                    .parse::<usize>()
                    .map_err(|e| err(format!("field {i}: {e}")))
            };
            let level = |i: usize| -> Result<u8, SynthError> {
                toks.get(i)
                    .ok_or_else(|| err(format!("missing field {i}")))?
                    .parse::<u8>()
                    .map_err(|e| err(format!("field {i}: {e}")))
            };
            let color = |i: usize| -> Result<Rgb, SynthError> { Ok([level(i)?, level(i + 1)?, level(i + 2)?]) };

            match toks[0] {
                "size" => {
                    spec.width = int(1)?;
                    spec.height = int(2)?;
                    if spec.width == 0 || spec.height == 0 {
                        return Err(err("scene must be at least 1x1".into()));
                    }
                }
                "background" => spec.background = color(1)?,
                "noise" => spec.noise = level(1)?,
                "archetype" => {
                    let name = toks.get(1).ok_or_else(|| err("missing name".into()))?.to_string();
                    let class_index = int(2)?;
                    let shape = match toks.get(3).copied() {
                        Some("disc") => Shape::Disc { radius: num(4)? },
                        Some("square") => Shape::Square { side: num(4)? },
                        other => return Err(err(format!("unknown shape {other:?}"))),
                    };
                    let body = color(5)?;
                    let marking = match toks.get(8).copied() {
                        None => None,
                        Some("bar") => Some(Marking {
                            length: num(9)?,
                            half_width: num(10)?,
                            color: color(11)?,
                        }),
                        Some(other) => return Err(err(format!("unknown marking {other:?}"))),
                    };
                    archetypes.retain(|a| a.name != name);
                    archetypes.push(Archetype {
                        name,
                        class_index,
                        shape,
                        body,
                        marking,
                    });
                }
                "object" => {
                    let name = toks.get(1).ok_or_else(|| err("missing archetype".into()))?;
                    let archetype = archetypes
                        .iter()
                        .find(|a| a.name == *name)
                        .ok_or_else(|| SynthError::UnknownArchetype(name.to_string()))?
                        .clone();
                    let center = (num(2)?, num(3)?);
                    let rotation_deg = match toks.get(4).copied() {
                        None => 0.0,
                        Some("rotate") => num(5)?,
                        Some(other) => return Err(err(format!("unexpected {other:?}"))),
                    };
                    spec.objects.push(PlacedObject {
                        archetype,
                        center,
                        rotation_deg,
                    });
                }
                "occluder" => {
                    let rect = Rect {
                        x1: int(1)?,
                        y1: int(2)?,
                        x2: int(3)?,
                        y2: int(4)?,
                    };
                    if rect.x1 > rect.x2 || rect.y1 > rect.y2 {
                        return Err(err("occluder corners out of order".into()));
                    }
                    let color = if toks.len() > 5 { Some(color(5)?) } else { None };
                    spec.occluders.push(Occluder { rect, color });
                }
                other => return Err(err(format!("unknown directive {other:?}"))),
            }
        }
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectTruth {
    pub name: String,
    pub class_index: usize,
    /// Bounding box of the object's visible pixels.
    pub rect: Rect,
    pub rotation_deg: f64,
    /// Fraction of the object's pixels hidden by occluders.
    pub covered_fraction: f64,
    pub visible_pixels: usize,
}

impl ObjectTruth {
    pub fn is_covered(&self) -> bool {
        self.covered_fraction > 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: RgbImage,
    pub objects: Vec<ObjectTruth>,
    /// Region id per pixel: 0 background, `i + 1` object `i`, and
    /// `objects.len() + 1 + k` for occluder `k` when it is not
    /// background-colored.
    pub regions: Vec<usize>,
}

/// Renders `spec`; `rng_seed` drives the noise only.
pub fn gen_synthetic_scene(spec: &SceneSpec, rng_seed: u64) -> Result<Scene, SynthError> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut colors = vec![spec.background; w * h];
    let mut regions = vec![0usize; w * h];
    let mut full_counts = vec![0usize; spec.objects.len()];

    for (i, o) in spec.objects.iter().enumerate() {
        let (sin, cos) = o.rotation_deg.to_radians().sin_cos();
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - o.center.0, y as f64 - o.center.1);
                // Rotate the pixel back into the object's own frame.
                let u = cos * dx + sin * dy;
                let v = -sin * dx + cos * dy;
                if let Some(c) = o.archetype.color_at(u, v) {
                    colors[y * w + x] = c;
                    regions[y * w + x] = i + 1;
                    full_counts[i] += 1;
                }
            }
        }
    }

    for (k, occ) in spec.occluders.iter().enumerate() {
        let color = occ.color.unwrap_or(spec.background);
        let region = if color == spec.background {
            0
        } else {
            spec.objects.len() + 1 + k
        };
        for y in occ.rect.y1..=occ.rect.y2 {
            for x in occ.rect.x1..=occ.rect.x2 {
                colors[y * w + x] = color;
                regions[y * w + x] = region;
            }
        }
    }

    let mut objects = Vec::with_capacity(spec.objects.len());
    for (i, o) in spec.objects.iter().enumerate() {
        let mut rect: Option<Rect> = None;
        let mut visible = 0;
        for y in 0..h {
            for x in 0..w {
                if regions[y * w + x] == i + 1 {
                    visible += 1;
                    rect = Some(match rect {
                        None => Rect::new(x, y, x, y),
                        Some(r) => Rect::new(r.x1.min(x), r.y1.min(y), r.x2.max(x), r.y2.max(y)),
                    });
                }
            }
        }
        let rect = rect.unwrap_or_else(|| {
            let (cx, cy) = (o.center.0 as usize, o.center.1 as usize);
            Rect::new(cx, cy, cx, cy)
        });
        objects.push(ObjectTruth {
            name: o.archetype.name.clone(),
            class_index: o.archetype.class_index,
            rect,
            rotation_deg: o.rotation_deg,
            covered_fraction: if full_counts[i] == 0 {
                0.0
            } else {
                1.0 - visible as f64 / full_counts[i] as f64
            },
            visible_pixels: visible,
        });
    }

    if spec.noise > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let amp = spec.noise as i16;
        for px in &mut colors {
            for c in px.iter_mut() {
                *c = (*c as i16 + rng.gen_range(-amp..=amp)).clamp(0, 255) as u8;
            }
        }
    }

    Ok(Scene {
        image: RgbImage::from_pixels(w, h, colors).expect("sized above"),
        objects,
        regions,
    })
}

/// Ground-truth sidecar: one line per object,
/// `<name>\t<class>\t<x1> <y1> <x2> <y2>\t<rotation>\t<covered fraction>`.
pub fn truth_report(scene: &Scene) -> String {
    let mut out = String::new();
    for o in &scene.objects {
        let r = o.rect;
        let _ = writeln!(
            out,
            "{}\t{}\t{} {} {} {}\t{}\t{:.3}",
            o.name, o.class_index, r.x1, r.y1, r.x2, r.y2, o.rotation_deg, o.covered_fraction
        );
    }
    out
}

/// The two archetypes used by the bundled experiment: a round mine with a
/// bar marking and a square mine of a different hue.
pub fn mine_archetypes() -> Vec<Archetype> {
    vec![
        Archetype {
            name: "VS-50".into(),
            class_index: 0,
            shape: Shape::Disc { radius: 9.0 },
            body: [170, 165, 162],
            marking: Some(Marking {
                length: 8.0,
                half_width: 2.0,
                color: [130, 150, 200],
            }),
        },
        Archetype {
            name: "TMI-42".into(),
            class_index: 1,
            shape: Shape::Square { side: 15.0 },
            body: [200, 60, 190],
            marking: None,
        },
    ]
}

/// Background used by the bundled experiment.
pub const SOIL: Rgb = [60, 70, 40];
/// Frame size used by the bundled experiment. The diagonal stays below the
/// default seeding threshold so a plain background forms a single cluster.
pub const FRAME: (usize, usize) = (64, 48);
pub const SUITE_NOISE: u8 = 6;
/// Sigmoid slope the bundled suite trains with. At slope 1 the output units
/// approach their targets too slowly for the default learning rate to reach
/// an MSE of 1e-5 within 20,000 epochs on this data.
pub const SUITE_SLOPE: f64 = 5.0;

/// Training scenes: each archetype alone, at a few positions.
pub fn training_scenes() -> Vec<(String, SceneSpec, u64)> {
    let archetypes = mine_archetypes();
    let positions = [(20.5, 20.5), (42.5, 26.5), (30.5, 22.5), (14.5, 30.5)];
    let mut out = Vec::new();
    for a in &archetypes {
        for (i, &pos) in positions.iter().enumerate() {
            let spec = SceneSpec::new(FRAME.0, FRAME.1, SOIL)
                .with_noise(SUITE_NOISE)
                .with_object(a, pos, 0.0);
            let seed = 100 + 10 * a.class_index as u64 + i as u64;
            out.push((format!("train_{}_{}", a.name.to_lowercase(), i), spec, seed));
        }
    }
    out
}

/// The four evaluation scenes: both objects, both displaced, the square
/// mine rotated, and the round mine partially covered.
pub fn evaluation_scenes() -> Vec<(String, SceneSpec, u64)> {
    let a = mine_archetypes();
    let (vs50, tmi42) = (&a[0], &a[1]);
    let base = || SceneSpec::new(FRAME.0, FRAME.1, SOIL).with_noise(SUITE_NOISE);
    vec![
        (
            "two_objects".into(),
            base()
                .with_object(vs50, (17.5, 22.5), 0.0)
                .with_object(tmi42, (45.5, 24.5), 0.0),
            1,
        ),
        (
            "displaced".into(),
            base()
                .with_object(tmi42, (16.5, 30.5), 0.0)
                .with_object(vs50, (46.5, 16.5), 0.0),
            2,
        ),
        (
            "rotated".into(),
            base()
                .with_object(vs50, (17.5, 22.5), 0.0)
                .with_object(tmi42, (45.5, 24.5), 30.0),
            3,
        ),
        (
            "covered".into(),
            base()
                .with_object(vs50, (17.5, 22.5), 0.0)
                .with_object(tmi42, (45.5, 24.5), 0.0)
                .with_occluder(Rect::new(8, 12, 13, 33), None),
            4,
        ),
    ]
}
