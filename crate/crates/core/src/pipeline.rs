//! End-to-end orchestration: training-set construction from labeled scenes,
//! scene classification, correlation factors, annotation and reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::color::{image_to_features, ColorError, FeatureParams, FeatureVector};
use crate::filter::FilterKind;
use crate::mlp::{MlpError, Network, Sample};
use crate::raster::{Rgb, RgbImage};
use crate::roi::{crop, find_roi, scale_to_64, Rect, RoiError};
use crate::segment::{extract_cluster, kmeans_segment, SegmentParams, SegmentResult};

/// Color of detection borders drawn by [`annotate`].
pub const MARK: Rgb = [255, 0, 0];

/// A cluster is background when it is the largest one and its bounding box
/// covers more than this fraction of the frame.
pub const BACKGROUND_COVERAGE: f64 = 0.8;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("training image {index}: segmentation produced no object besides the background")]
    NoObject { index: usize },
    #[error("training image {index}: class index {class_index} is not below the class count {class_count}")]
    ClassIndex {
        index: usize,
        class_index: usize,
        class_count: usize,
    },
    #[error("class index {class_index} out of range for {len} outputs")]
    OutputIndex { class_index: usize, len: usize },
    #[error("class {0} has no training image")]
    MissingClass(usize),
    #[error("invalid class list: {0}")]
    Classes(String),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error(transparent)]
    Roi(#[from] RoiError),
    #[error(transparent)]
    Color(#[from] ColorError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassSpec {
    pub class_index: usize,
    pub name: String,
}

/// Checks that indices run densely from 0 and names are unique.
pub fn validate_classes(classes: &[ClassSpec]) -> Result<(), PipelineError> {
    for (i, c) in classes.iter().enumerate() {
        if c.class_index != i {
            return Err(PipelineError::Classes(format!(
                "class {:?} has index {}, expected {i}",
                c.name, c.class_index
            )));
        }
        if c.name.is_empty() || c.name.contains(char::is_whitespace) {
            return Err(PipelineError::Classes(format!("bad class name {:?}", c.name)));
        }
        if classes[..i].iter().any(|o| o.name == c.name) {
            return Err(PipelineError::Classes(format!("duplicate class name {:?}", c.name)));
        }
    }
    Ok(())
}

/// One class name per line, in index order.
pub fn render_classes(classes: &[ClassSpec]) -> String {
    classes.iter().map(|c| format!("{}\n", c.name)).collect()
}

pub fn parse_classes(text: &str) -> Result<Vec<ClassSpec>, PipelineError> {
    let classes: Vec<ClassSpec> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(class_index, name)| ClassSpec {
            class_index,
            name: name.to_string(),
        })
        .collect();
    validate_classes(&classes)?;
    Ok(classes)
}

/// Labeled training images: one `<path>\t<class_name>` per line. Class
/// indices follow the order in which names first appear. Relative paths are
/// resolved against `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(PathBuf, usize)>,
    pub classes: Vec<ClassSpec>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut entries = Vec::new();
        let mut classes: Vec<ClassSpec> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (path, name) = line.split_once('\t').ok_or_else(|| PipelineError::Manifest {
                line: idx + 1,
                msg: "expected <path><TAB><class_name>".into(),
            })?;
            let (path, name) = (path.trim(), name.trim());
            if path.is_empty() || name.is_empty() {
                return Err(PipelineError::Manifest {
                    line: idx + 1,
                    msg: "empty path or class name".into(),
                });
            }
            let class_index = match classes.iter().position(|c| c.name == name) {
                Some(i) => i,
                None => {
                    classes.push(ClassSpec {
                        class_index: classes.len(),
                        name: name.to_string(),
                    });
                    classes.len() - 1
                }
            };
            entries.push((base.join(path), class_index));
        }
        if entries.is_empty() {
            return Err(PipelineError::Manifest {
                line: 0,
                msg: "manifest lists no images".into(),
            });
        }
        validate_classes(&classes)?;
        Ok(Self { entries, classes })
    }
}

/// Settings shared by training-set construction and classification.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineParams {
    pub filter: FilterKind,
    pub segment: SegmentParams,
    pub features: FeatureParams,
    pub blank_level: u64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            filter: FilterKind::Median,
            segment: SegmentParams::default(),
            features: FeatureParams::default(),
            blank_level: 0,
        }
    }
}

/// A segmented object ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub cluster: usize,
    pub pixel_count: usize,
    /// Bounding box in scene coordinates.
    pub rect: Rect,
    pub features: FeatureVector,
}

/// Filtered image, its segmentation and the background cluster, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentedScene {
    pub filtered: RgbImage,
    pub segmentation: SegmentResult,
    pub background: Option<usize>,
}

impl SegmentedScene {
    pub fn new(image: &RgbImage, params: &PipelineParams) -> Self {
        let filtered = params.filter.apply(image);
        let segmentation = kmeans_segment(&filtered, &params.segment);
        let background = background_cluster(&filtered, &segmentation, params.blank_level);
        Self {
            filtered,
            segmentation,
            background,
        }
    }

    /// Every non-background cluster with visible content, in cluster order.
    pub fn objects(&self, params: &PipelineParams) -> Result<Vec<SceneObject>, PipelineError> {
        let sizes = self.segmentation.cluster_sizes();
        let mut out = Vec::new();
        for (cluster, &pixel_count) in sizes.iter().enumerate() {
            if Some(cluster) == self.background || pixel_count == 0 {
                continue;
            }
            let extracted = extract_cluster(&self.filtered, &self.segmentation, cluster);
            let rect = match find_roi(&extracted, params.blank_level) {
                Ok(r) => r,
                Err(RoiError::NoContent(_)) => continue,
                Err(e) => return Err(e.into()),
            };
            let features = object_features(&extracted, rect, &params.features)?;
            out.push(SceneObject {
                cluster,
                pixel_count,
                rect,
                features,
            });
        }
        Ok(out)
    }
}

/// Crop to `rect`, rescale to the network's input size and extract features.
pub fn object_features(extracted: &RgbImage, rect: Rect, params: &FeatureParams) -> Result<FeatureVector, PipelineError> {
    let scaled = scale_to_64(&crop(extracted, rect)?);
    Ok(image_to_features(&scaled, params)?)
}

/// The largest cluster, provided its bounding box covers more than
/// [`BACKGROUND_COVERAGE`] of the frame.
pub fn background_cluster(image: &RgbImage, result: &SegmentResult, blank_level: u64) -> Option<usize> {
    let sizes = result.cluster_sizes();
    // Ties go to the lowest index.
    let largest = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)?;
    let rect = find_roi(&extract_cluster(image, result, largest), blank_level).ok()?;
    let frame = (image.width() * image.height()) as f64;
    (rect.area() as f64 > BACKGROUND_COVERAGE * frame).then_some(largest)
}

/// One training sample per labeled image, taken from its largest
/// non-background cluster.
pub fn build_training_set(
    images: &[(RgbImage, usize)],
    class_count: usize,
    params: &PipelineParams,
) -> Result<Vec<Sample>, PipelineError> {
    for class in 0..class_count {
        if !images.iter().any(|(_, c)| *c == class) {
            return Err(PipelineError::MissingClass(class));
        }
    }
    let mut samples = Vec::with_capacity(images.len());
    for (index, (image, class_index)) in images.iter().enumerate() {
        if *class_index >= class_count {
            return Err(PipelineError::ClassIndex {
                index,
                class_index: *class_index,
                class_count,
            });
        }
        let scene = SegmentedScene::new(image, params);
        let objects = scene.objects(params)?;
        // Largest cluster wins; ties go to the lowest cluster index.
        let object = objects
            .into_iter()
            .reduce(|best, o| if o.pixel_count > best.pixel_count { o } else { best })
            .ok_or(PipelineError::NoObject { index })?;
        samples.push(Sample::one_hot(object.features.into_vec(), *class_index, class_count));
    }
    Ok(samples)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub class_index: usize,
    /// Percent in `[0, 100]`.
    pub correlation_factor: f64,
    /// Scene coordinates.
    pub rect: Rect,
    pub raw_output: Vec<f64>,
}

impl Detection {
    /// Detection for the argmax of `raw_output` (ties go to the lowest index).
    pub fn from_output(raw_output: Vec<f64>, rect: Rect) -> Self {
        let class_index = argmax(&raw_output);
        let correlation_factor = 100.0 * raw_output[class_index];
        Self {
            class_index,
            correlation_factor,
            rect,
            raw_output,
        }
    }
}

fn argmax(values: &[f64]) -> usize {
    assert!(!values.is_empty(), "empty output vector");
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `100 * raw_output[class_index]`.
pub fn correlation_factor(raw_output: &[f64], class_index: usize) -> Result<f64, PipelineError> {
    raw_output
        .get(class_index)
        .map(|v| 100.0 * v)
        .ok_or(PipelineError::OutputIndex {
            class_index,
            len: raw_output.len(),
        })
}

/// Detections for every non-background object in `image`, in cluster order.
pub fn classify_scene(net: &Network, image: &RgbImage, params: &PipelineParams) -> Result<Vec<Detection>, PipelineError> {
    let scene = SegmentedScene::new(image, params);
    scene
        .objects(params)?
        .into_iter()
        .map(|o| Ok(Detection::from_output(net.predict(o.features.as_slice())?, o.rect)))
        .collect()
}

/// Copy of `image` with a one-pixel red border around each detection.
/// Later detections draw over earlier ones.
pub fn annotate(image: &RgbImage, detections: &[Detection]) -> RgbImage {
    let mut out = image.clone();
    for d in detections {
        let r = d.rect;
        if !r.fits(image.width(), image.height()) {
            continue;
        }
        for x in r.x1..=r.x2 {
            out.set(x, r.y1, MARK);
            out.set(x, r.y2, MARK);
        }
        for y in r.y1..=r.y2 {
            out.set(r.x1, y, MARK);
            out.set(r.x2, y, MARK);
        }
    }
    out
}

/// `<class_name>\t<factor>\t<x1> <y1> <x2> <y2>` per detection.
pub fn detection_report(detections: &[Detection], classes: &[ClassSpec]) -> String {
    let mut out = String::new();
    for d in detections {
        let name = classes
            .get(d.class_index)
            .map(|c| c.name.clone())
            .unwrap_or_else(|| format!("class{}", d.class_index));
        let r = d.rect;
        let _ = writeln!(
            out,
            "{name}\t{:.1}\t{} {} {} {}",
            d.correlation_factor, r.x1, r.y1, r.x2, r.y2
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::FEATURE_LEN;
    use crate::mlp::Matrix;

    const SOIL: Rgb = [90, 80, 60];

    fn scene_with(objects: &[(Rect, Rgb)]) -> RgbImage {
        RgbImage::from_fn(40, 30, |x, y| {
            objects
                .iter()
                .find(|(r, _)| r.contains(x, y))
                .map(|(_, c)| *c)
                .unwrap_or(SOIL)
        })
    }

    #[test]
    fn factor_is_percent_of_class_output() {
        assert!((correlation_factor(&[0.004, 0.996], 1).unwrap() - 99.6).abs() < 1e-9);
        assert!((correlation_factor(&[0.5, 0.5], 0).unwrap() - 50.0).abs() < 1e-12);
        assert!((correlation_factor(&[1.0, 0.0], 0).unwrap() - 100.0).abs() < 1e-12);
        assert!(matches!(
            correlation_factor(&[0.5], 1),
            Err(PipelineError::OutputIndex { .. })
        ));
    }

    #[test]
    fn detection_takes_argmax() {
        let d = Detection::from_output(vec![0.2, 0.7, 0.1], Rect::new(0, 0, 1, 1));
        assert_eq!(d.class_index, 1);
        assert!((d.correlation_factor - 70.0).abs() < 1e-9);
        let tie = Detection::from_output(vec![0.4, 0.4], Rect::new(0, 0, 1, 1));
        assert_eq!(tie.class_index, 0);
    }

    #[test]
    fn annotate_changes_only_borders() {
        let img = RgbImage::filled(10, 8, [1, 2, 3]);
        assert_eq!(annotate(&img, &[]), img);

        let rect = Rect::new(2, 1, 6, 5);
        let out = annotate(&img, &[Detection::from_output(vec![1.0], rect)]);
        for y in 0..8 {
            for x in 0..10 {
                let border = rect.contains(x, y) && (x == 2 || x == 6 || y == 1 || y == 5);
                assert_eq!(out.get(x, y) == MARK, border, "({x}, {y})");
                if !border {
                    assert_eq!(out.get(x, y), [1, 2, 3]);
                }
            }
        }
    }

    #[test]
    fn report_format() {
        let classes = vec![
            ClassSpec {
                class_index: 0,
                name: "VS-50".into(),
            },
            ClassSpec {
                class_index: 1,
                name: "TMI-42".into(),
            },
        ];
        let d = Detection::from_output(vec![0.02, 0.978], Rect::new(3, 4, 20, 21));
        assert_eq!(detection_report(&[d], &classes), "TMI-42\t97.8\t3 4 20 21\n");
    }

    #[test]
    fn blank_scene_has_no_objects() {
        let img = RgbImage::filled(40, 30, SOIL);
        let params = PipelineParams::default();
        let scene = SegmentedScene::new(&img, &params);
        assert_eq!(scene.background, Some(0));
        assert!(scene.objects(&params).unwrap().is_empty());
        let net = Network::init(&[FEATURE_LEN, 3, 2], 1.0, 1).unwrap();
        assert!(classify_scene(&net, &img, &params).unwrap().is_empty());
    }

    #[test]
    fn objects_are_found_with_scene_rects() {
        let a = Rect::new(4, 5, 11, 12);
        let b = Rect::new(25, 10, 33, 20);
        let img = scene_with(&[(a, [200, 40, 40]), (b, [40, 60, 220])]);
        let params = PipelineParams::default();
        let scene = SegmentedScene::new(&img, &params);
        let objects = scene.objects(&params).unwrap();
        let mut rects: Vec<Rect> = objects.iter().map(|o| o.rect).collect();
        rects.sort_by_key(|r| r.x1);
        assert_eq!(rects, vec![a, b]);
        assert!(objects.iter().all(|o| o.features.len() == FEATURE_LEN));
    }

    #[test]
    fn training_set_is_one_hot_per_image() {
        let img0 = scene_with(&[(Rect::new(5, 5, 14, 14), [200, 40, 40])]);
        let img1 = scene_with(&[(Rect::new(20, 8, 30, 20), [40, 60, 220])]);
        let samples = build_training_set(&[(img0, 0), (img1, 1)], 2, &PipelineParams::default()).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].desired, vec![1.0, 0.0]);
        assert_eq!(samples[1].desired, vec![0.0, 1.0]);
        assert!(samples.iter().all(|s| s.input.len() == FEATURE_LEN));
    }

    #[test]
    fn object_filling_the_frame_matches_direct_features() {
        // A black margin carries no content, so the object's bounding box
        // is exactly the interior.
        let inner = Rect::new(3, 3, 36, 26);
        let img = RgbImage::from_fn(40, 30, |x, y| {
            if inner.contains(x, y) {
                [30, 160, 90]
            } else {
                [0, 0, 0]
            }
        });
        let params = PipelineParams {
            filter: FilterKind::None,
            ..PipelineParams::default()
        };
        let samples = build_training_set(&[(img.clone(), 0)], 1, &params).unwrap();
        let direct = image_to_features(&scale_to_64(&crop(&img, inner).unwrap()), &params.features).unwrap();
        assert_eq!(samples[0].input, direct.into_vec());
    }

    #[test]
    fn training_errors() {
        let blank = RgbImage::filled(40, 30, SOIL);
        assert!(matches!(
            build_training_set(&[(blank.clone(), 0)], 1, &PipelineParams::default()),
            Err(PipelineError::NoObject { index: 0 })
        ));
        assert!(matches!(
            build_training_set(&[(blank, 0)], 2, &PipelineParams::default()),
            Err(PipelineError::MissingClass(1))
        ));
    }

    #[test]
    fn classify_uses_network_output() {
        let img = scene_with(&[(Rect::new(5, 5, 14, 14), [200, 40, 40])]);
        // Output 1 is driven by the bias input alone, output 0 sits at 0.5.
        let w0 = Matrix::from_vec(1, FEATURE_LEN, {
            let mut v = vec![0.0; FEATURE_LEN];
            v[FEATURE_LEN - 1] = 1.0;
            v
        })
        .unwrap();
        let w1 = Matrix::from_vec(2, 2, vec![0.0, 0.0, 0.0, 4.0]).unwrap();
        let net = Network::from_weights(&[FEATURE_LEN, 1, 2], 1.0, vec![w0, w1]).unwrap();
        let dets = classify_scene(&net, &img, &PipelineParams::default()).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].class_index, 1);
        let expected = 100.0 / (1.0 + (-4.0f64).exp());
        assert!((dets[0].correlation_factor - expected).abs() < 1e-9);
    }

    #[test]
    fn manifest_parsing() {
        let m = Manifest::parse("a.ppm\tVS-50\n# note\n\nb.ppm\tTMI-42\nc.ppm\tVS-50\n", Path::new("/d")).unwrap();
        assert_eq!(
            m.entries,
            vec![
                (PathBuf::from("/d/a.ppm"), 0),
                (PathBuf::from("/d/b.ppm"), 1),
                (PathBuf::from("/d/c.ppm"), 0)
            ]
        );
        assert_eq!(m.classes[1].name, "TMI-42");
        assert!(matches!(
            Manifest::parse("", Path::new(".")),
            Err(PipelineError::Manifest { .. })
        ));
        assert!(matches!(
            Manifest::parse("no-tab VS-50", Path::new(".")),
            Err(PipelineError::Manifest { line: 1, .. })
        ));
    }

    #[test]
    fn class_list_round_trips() {
        let classes = parse_classes("VS-50\nTMI-42\n").unwrap();
        assert_eq!(parse_classes(&render_classes(&classes)).unwrap(), classes);
        assert!(parse_classes("A\nA\n").is_err());
    }
}
