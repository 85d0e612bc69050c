//! K-means segmentation in the joint color + position space
//! `(R, G, B, X, Y)`, seeded by Simple Cluster-Seeking (SCS).
//!
//! SCS walks the pixels in raster order and promotes a pixel to a new seed
//! when it lies farther than the threshold from every seed chosen so far;
//! the seed count fixes `k`. Everything here is deterministic.

use crate::raster::{Rgb, RgbImage};

/// Blank color for pixels outside an extracted object.
pub const BLANK: Rgb = [0, 0, 0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentParams {
    /// SCS seeding distance.
    pub threshold: f64,
    /// Multiplier applied to the X and Y differences inside the distance.
    pub spatial_weight: f64,
    pub max_iter: usize,
    /// Upper bound on the number of SCS seeds.
    pub max_k: usize,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            threshold: 85.0,
            spatial_weight: 1.0,
            max_iter: 100,
            max_k: 32,
        }
    }
}

/// A pixel as a point in `(R, G, B, X, Y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeaturePoint5 {
    pub r: f64,
    pub g: f64,
    pub b: f64,
    pub x: f64,
    pub y: f64,
}

impl FeaturePoint5 {
    pub fn from_pixel(px: Rgb, x: usize, y: usize) -> Self {
        Self {
            r: px[0] as f64,
            g: px[1] as f64,
            b: px[2] as f64,
            x: x as f64,
            y: y as f64,
        }
    }
}

pub type Centroid5 = FeaturePoint5;

#[inline]
pub fn distance5_sq(p: &FeaturePoint5, c: &Centroid5, spatial_weight: f64) -> f64 {
    let (dr, dg, db) = (p.r - c.r, p.g - c.g, p.b - c.b);
    let (dx, dy) = (spatial_weight * (p.x - c.x), spatial_weight * (p.y - c.y));
    dr * dr + dg * dg + db * db + dx * dx + dy * dy
}

/// Euclidean distance over color and (weighted) position.
#[inline]
pub fn distance5(p: &FeaturePoint5, c: &Centroid5, spatial_weight: f64) -> f64 {
    distance5_sq(p, c, spatial_weight).sqrt()
}

fn points(image: &RgbImage) -> Vec<FeaturePoint5> {
    let w = image.width();
    image
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &px)| FeaturePoint5::from_pixel(px, i % w, i / w))
        .collect()
}

/// Simple Cluster-Seeking. Returns at least one seed (the first pixel) and
/// at most `params.max_k`.
pub fn scs_seeds(image: &RgbImage, params: &SegmentParams) -> Vec<Centroid5> {
    let limit = params.max_k.max(1);
    let t2 = params.threshold * params.threshold;
    let mut seeds: Vec<Centroid5> = Vec::new();
    for p in points(image) {
        if seeds.len() >= limit {
            break;
        }
        if seeds
            .iter()
            .all(|s| distance5_sq(&p, s, params.spatial_weight) > t2)
        {
            seeds.push(p);
        }
    }
    seeds
}

fn nearest(p: &FeaturePoint5, centroids: &[Centroid5], spatial_weight: f64) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = distance5_sq(p, c, spatial_weight);
        // Strict comparison keeps the lowest index on ties.
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Index of the nearest centroid for every pixel, lowest index on ties.
pub fn assign_pixels(image: &RgbImage, centroids: &[Centroid5], spatial_weight: f64) -> Vec<usize> {
    assert!(!centroids.is_empty(), "need at least one centroid");
    points(image)
        .iter()
        .map(|p| nearest(p, centroids, spatial_weight).0)
        .collect()
}

/// Component-wise mean of each cluster's members.
///
/// A cluster with no members is moved onto the pixel that lies farthest
/// from its nearest non-empty centroid, so `k` never changes and no centroid
/// becomes NaN.
pub fn update_centroids(image: &RgbImage, labels: &[usize], k: usize, spatial_weight: f64) -> Vec<Centroid5> {
    assert_eq!(labels.len(), image.pixels().len(), "one label per pixel");
    let pts = points(image);
    let mut sums = vec![[0.0f64; 5]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in pts.iter().zip(labels) {
        let s = &mut sums[l];
        s[0] += p.r;
        s[1] += p.g;
        s[2] += p.b;
        s[3] += p.x;
        s[4] += p.y;
        counts[l] += 1;
    }

    let mut centroids: Vec<Option<Centroid5>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| {
            (n > 0).then(|| {
                let n = n as f64;
                Centroid5 {
                    r: s[0] / n,
                    g: s[1] / n,
                    b: s[2] / n,
                    x: s[3] / n,
                    y: s[4] / n,
                }
            })
        })
        .collect();

    if centroids.iter().any(Option::is_none) {
        let live: Vec<Centroid5> = centroids.iter().flatten().copied().collect();
        let mut misfit: Vec<f64> = pts.iter().map(|p| nearest(p, &live, spatial_weight).1).collect();
        for c in centroids.iter_mut().filter(|c| c.is_none()) {
            let (idx, _) = misfit
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
            *c = Some(pts[idx]);
            misfit[idx] = f64::NEG_INFINITY;
        }
    }
    centroids.into_iter().map(|c| c.expect("filled above")).collect()
}

/// Sum over pixels of the squared distance to their assigned centroid.
pub fn objective(image: &RgbImage, labels: &[usize], centroids: &[Centroid5], spatial_weight: f64) -> f64 {
    points(image)
        .iter()
        .zip(labels)
        .map(|(p, &l)| distance5_sq(p, &centroids[l], spatial_weight))
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentResult {
    pub width: usize,
    pub height: usize,
    /// Cluster index per pixel, row-major.
    pub labels: Vec<usize>,
    pub centroids: Vec<Centroid5>,
    /// Number of update/assign rounds performed.
    pub iterations: usize,
    pub converged: bool,
    /// Objective after the initial assignment and after every round.
    pub objective_history: Vec<f64>,
}

impl SegmentResult {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

pub fn kmeans_segment(image: &RgbImage, params: &SegmentParams) -> SegmentResult {
    assert!(params.max_iter >= 1, "max_iter must be at least 1");
    let sw = params.spatial_weight;
    let mut centroids = scs_seeds(image, params);
    let mut labels = assign_pixels(image, &centroids, sw);
    let mut history = vec![objective(image, &labels, &centroids, sw)];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_iter {
        iterations += 1;
        centroids = update_centroids(image, &labels, centroids.len(), sw);
        let next = assign_pixels(image, &centroids, sw);
        history.push(objective(image, &next, &centroids, sw));
        let unchanged = next == labels;
        labels = next;
        if unchanged {
            converged = true;
            break;
        }
    }

    SegmentResult {
        width: image.width(),
        height: image.height(),
        labels,
        centroids,
        iterations,
        converged,
        objective_history: history,
    }
}

/// One full-size image per cluster, in cluster order: member pixels keep
/// their color, everything else is [`BLANK`].
pub fn extract_objects(image: &RgbImage, result: &SegmentResult) -> Vec<RgbImage> {
    (0..result.k())
        .map(|j| extract_cluster(image, result, j))
        .collect()
}

pub fn extract_cluster(image: &RgbImage, result: &SegmentResult, cluster: usize) -> RgbImage {
    let w = image.width();
    RgbImage::from_fn(image.width(), image.height(), |x, y| {
        if result.labels[y * w + x] == cluster {
            image.get(x, y)
        } else {
            BLANK
        }
    })
}

/// Distinct, saturated color for a cluster index.
pub fn palette_color(index: usize) -> Rgb {
    const BASE: [Rgb; 12] = [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
        [250, 190, 212],
        [0, 128, 128],
        [170, 110, 40],
    ];
    let c = BASE[index % BASE.len()];
    // Darken on each wrap so indices past 12 stay distinguishable.
    let shade = 1.0 / (1 + index / BASE.len()) as f64;
    c.map(|v| (v as f64 * shade).round() as u8)
}

/// Label map rendered with [`palette_color`].
pub fn label_map(result: &SegmentResult) -> RgbImage {
    RgbImage::from_fn(result.width, result.height, |x, y| {
        palette_color(result.labels[y * result.width + x])
    })
}
