//! Exact t-SNE and side-by-side projection of the style and text spaces.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub const MIN_POINTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    /// Defaults to `min(30, (N - 1) / 3)`.
    pub perplexity: Option<f64>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: None,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            seed: 0,
        }
    }
}

fn squared_distances(x: &Matrix) -> Matrix {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Row-conditional affinities whose entropy matches `ln(perplexity)`, found by
/// bisection on the Gaussian precision.
fn conditional_affinities(d: &Matrix, perplexity: f64) -> Matrix {
    let n = d.nrows();
    let target = perplexity.ln();
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        let (mut lo, mut hi, mut beta) = (0.0f64, f64::INFINITY, 1.0f64);
        let min_d = (0..n).filter(|&j| j != i).map(|j| d[[i, j]]).fold(f64::INFINITY, f64::min);
        let mut row = vec![0.0; n];
        for _ in 0..100 {
            let mut sum = 0.0;
            for j in 0..n {
                row[j] = if j == i { 0.0 } else { (-(d[[i, j]] - min_d) * beta).exp() };
                sum += row[j];
            }
            let mut h = 0.0;
            for j in 0..n {
                if j != i {
                    row[j] /= sum;
                    if row[j] > 0.0 {
                        h -= row[j] * row[j].ln();
                    }
                }
            }
            if (h - target).abs() < 1e-6 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        for j in 0..n {
            p[[i, j]] = row[j];
        }
    }
    p
}

/// Exact t-SNE to two dimensions.
pub fn tsne(data: &Matrix, config: &TsneConfig) -> Result<Matrix> {
    let n = data.nrows();
    if n < MIN_POINTS {
        return Err(Error::TooFewPoints { n, min: MIN_POINTS });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Shape("t-SNE input contains non-finite values".into()));
    }
    let perplexity = config.perplexity.unwrap_or_else(|| 30f64.min((n - 1) as f64 / 3.0));
    let cond = conditional_affinities(&squared_distances(data), perplexity);
    let p = (&cond + &cond.t()).mapv(|v| (v / (2.0 * n as f64)).max(1e-12));

    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut y = Array2::from_shape_fn((n, 2), |_| normal.sample(&mut rng));
    let mut velocity: Matrix = Array2::zeros((n, 2));
    let mut gains: Matrix = Array2::ones((n, 2));
    let mut q_num: Matrix = Array2::zeros((n, n));

    for iter in 0..config.iterations {
        let exaggeration = if iter < config.exaggeration_iterations { config.early_exaggeration } else { 1.0 };
        let momentum = if iter < config.exaggeration_iterations { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dy0 = y[[i, 0]] - y[[j, 0]];
                let dy1 = y[[i, 1]] - y[[j, 1]];
                let q = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                q_num[[i, j]] = q;
                q_num[[j, i]] = q;
                z += 2.0 * q;
            }
        }
        let mut grad: Matrix = Array2::zeros((n, 2));
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = q_num[[i, j]];
                let coeff = 4.0 * (exaggeration * p[[i, j]] - q / z) * q;
                grad[[i, 0]] += coeff * (y[[i, 0]] - y[[j, 0]]);
                grad[[i, 1]] += coeff * (y[[i, 1]] - y[[j, 1]]);
            }
        }
        for ((g, gain), v) in grad.iter().zip(gains.iter_mut()).zip(velocity.iter()) {
            *gain = if (*g > 0.0) != (*v > 0.0) { *gain + 0.2 } else { (*gain * 0.8).max(0.01) };
        }
        for ((v, g), gain) in velocity.iter_mut().zip(grad.iter()).zip(gains.iter()) {
            *v = momentum * *v - config.learning_rate * gain * g;
        }
        y += &velocity;
        let mean = y.mean_axis(ndarray::Axis(0)).expect("non-empty");
        y -= &mean;
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceProjection {
    pub style: Matrix,
    pub text: Matrix,
    pub labels: Vec<String>,
}

/// Projects the GST-weight space and the text-embedding space independently.
pub fn project_spaces(gst_weights: &Matrix, text_embeddings: &Matrix, labels: &[String], seed: u64) -> Result<SpaceProjection> {
    let n = gst_weights.nrows();
    if text_embeddings.nrows() != n || labels.len() != n {
        return Err(Error::Dimension {
            what: "projection inputs".into(),
            expected: n,
            actual: text_embeddings.nrows().min(labels.len()),
        });
    }
    let cfg = TsneConfig {
        seed,
        ..TsneConfig::default()
    };
    Ok(SpaceProjection {
        style: tsne(gst_weights, &cfg)?,
        text: tsne(text_embeddings, &cfg)?,
        labels: labels.to_vec(),
    })
}

const PALETTE: [[u8; 3]; 8] = [
    [214, 39, 40],
    [140, 86, 75],
    [148, 103, 189],
    [255, 127, 14],
    [127, 127, 127],
    [31, 119, 180],
    [44, 160, 44],
    [23, 190, 207],
];

const PANEL: u32 = 420;
const MARGIN: f64 = 24.0;

fn draw_disc(img: &mut RgbImage, cx: f64, cy: f64, r: f64, color: Rgb<u8>) {
    let (x0, x1) = ((cx - r).floor().max(0.0) as u32, (cx + r).ceil() as u32);
    let (y0, y1) = ((cy - r).floor().max(0.0) as u32, (cy + r).ceil() as u32);
    for x in x0..=x1.min(img.width() - 1) {
        for y in y0..=y1.min(img.height() - 1) {
            if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                img.put_pixel(x, y, color);
            }
        }
    }
}

fn draw_panel(img: &mut RgbImage, offset: u32, coords: &Matrix, colors: &[Rgb<u8>]) {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for row in coords.rows() {
        for k in 0..2 {
            lo[k] = lo[k].min(row[k]);
            hi[k] = hi[k].max(row[k]);
        }
    }
    let span = |k: usize| (hi[k] - lo[k]).max(1e-12);
    let usable = PANEL as f64 - 2.0 * MARGIN;
    for (row, color) in coords.rows().into_iter().zip(colors) {
        let x = offset as f64 + MARGIN + (row[0] - lo[0]) / span(0) * usable;
        let y = MARGIN + (hi[1] - row[1]) / span(1) * usable;
        draw_disc(img, x, y, 4.0, *color);
    }
}

/// Two panels (style space left, text space right), points colored by class.
/// Returns the class order used for colors.
pub fn render_projection(proj: &SpaceProjection, path: &Path) -> Result<Vec<String>> {
    let mut classes: Vec<String> = proj.labels.clone();
    classes.sort();
    classes.dedup();
    let colors: Vec<Rgb<u8>> = proj
        .labels
        .iter()
        .map(|l| Rgb(PALETTE[classes.iter().position(|c| c == l).expect("label listed") % PALETTE.len()]))
        .collect();
    let mut img = RgbImage::from_pixel(2 * PANEL + 4, PANEL + 20, Rgb([255, 255, 255]));
    draw_panel(&mut img, 0, &proj.style, &colors);
    draw_panel(&mut img, PANEL + 4, &proj.text, &colors);
    for y in 0..PANEL {
        for x in PANEL..PANEL + 4 {
            img.put_pixel(x, y, Rgb([200, 200, 200]));
        }
    }
    for (i, _) in classes.iter().enumerate() {
        let color = Rgb(PALETTE[i % PALETTE.len()]);
        for x in 0..12 {
            for y in 0..12 {
                img.put_pixel(8 + i as u32 * 18 + x, PANEL + 4 + y, color);
            }
        }
    }
    img.save(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    Ok(classes)
}

/// Mean distance between the two class centroids and mean distance of points
/// to their own centroid.
pub fn separation(coords: &Matrix, labels: &[String], a: &str, b: &str) -> (f64, f64) {
    let centroid = |c: &str| {
        let rows: Vec<usize> = labels.iter().enumerate().filter(|(_, l)| *l == c).map(|(i, _)| i).collect();
        let n = rows.len() as f64;
        let mx = rows.iter().map(|&i| coords[[i, 0]]).sum::<f64>() / n;
        let my = rows.iter().map(|&i| coords[[i, 1]]).sum::<f64>() / n;
        (rows, mx, my)
    };
    let (ra, ax, ay) = centroid(a);
    let (rb, bx, by) = centroid(b);
    let inter = ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt();
    let intra: Vec<f64> = ra
        .iter()
        .map(|&i| ((coords[[i, 0]] - ax).powi(2) + (coords[[i, 1]] - ay).powi(2)).sqrt())
        .chain(rb.iter().map(|&i| ((coords[[i, 0]] - bx).powi(2) + (coords[[i, 1]] - by).powi(2)).sqrt()))
        .collect();
    (inter, intra.iter().sum::<f64>() / intra.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn two_clusters(n_each: usize, dim: usize, gap: f64, seed: u64) -> (Matrix, Vec<String>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array2::from_shape_fn((2 * n_each, dim), |(i, j)| {
            let base = if i < n_each { 0.0 } else { gap };
            base * (j == 0) as u8 as f64 + rng.random_range(-0.5..0.5)
        });
        let labels = (0..2 * n_each).map(|i| if i < n_each { "a" } else { "b" }.to_string()).collect();
        (data, labels)
    }

    #[test]
    fn input_clusters_are_separated_before_projection() {
        let (data, labels) = two_clusters(15, 16, 20.0, 1);
        let d = squared_distances(&data);
        let within = (0..30).flat_map(|i| (0..30).map(move |j| (i, j))).filter(|&(i, j)| i != j && labels[i] == labels[j]);
        let across = (0..30).flat_map(|i| (0..30).map(move |j| (i, j))).filter(|&(i, j)| labels[i] != labels[j]);
        let max_within = within.map(|(i, j)| d[[i, j]]).fold(0.0, f64::max);
        let min_across = across.map(|(i, j)| d[[i, j]]).fold(f64::INFINITY, f64::min);
        assert!(min_across > max_within);
    }

    #[test]
    fn projection_separates_clusters_and_is_deterministic() {
        let (style, labels) = two_clusters(15, 16, 20.0, 1);
        let (text, _) = two_clusters(15, 40, 20.0, 2);
        let p = project_spaces(&style, &text, &labels, 7).unwrap();
        assert_eq!(p.style.dim(), (30, 2));
        assert_eq!(p.text.dim(), (30, 2));
        let (inter, intra) = separation(&p.style, &labels, "a", "b");
        assert!(inter > intra, "{inter} vs {intra}");
        let again = project_spaces(&style, &text, &labels, 7).unwrap();
        assert_eq!(again, p);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spaces.png");
        let classes = render_projection(&p, &path).unwrap();
        assert_eq!(classes, vec!["a", "b"]);
        let img = image::open(&path).unwrap();
        assert_eq!(img.width(), 2 * PANEL + 4);
    }

    #[test]
    fn affinities_hit_target_perplexity() {
        let (data, _) = two_clusters(10, 4, 3.0, 5);
        let p = conditional_affinities(&squared_distances(&data), 5.0);
        for row in p.rows() {
            let h: f64 = -row.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
            assert!((h.exp() - 5.0).abs() < 1e-3);
        }
    }

    #[test]
    fn too_few_points() {
        let m = Array2::zeros((4, 3));
        assert!(matches!(tsne(&m, &TsneConfig::default()), Err(Error::TooFewPoints { n: 4, min: 5 })));
    }
}
