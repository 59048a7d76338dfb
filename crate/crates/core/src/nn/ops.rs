//! Parameter-free feature-map operations and their gradients.

use crate::tensor::FeatureMap;

pub fn relu(x: &FeatureMap) -> FeatureMap {
    let data = x.data.iter().map(|&v| v.max(0.0)).collect();
    FeatureMap::from_vec(x.channels, x.height, x.width, data)
}

/// Gradient of ReLU given its output.
pub fn relu_backward(output: &FeatureMap, dy: &FeatureMap) -> FeatureMap {
    let data = output
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
        .collect();
    FeatureMap::from_vec(dy.channels, dy.height, dy.width, data)
}

pub fn hardtanh(x: &FeatureMap) -> FeatureMap {
    let data = x.data.iter().map(|&v| v.clamp(-1.0, 1.0)).collect();
    FeatureMap::from_vec(x.channels, x.height, x.width, data)
}

/// Gradient of Hardtanh given its input; zero on and outside the bounds.
pub fn hardtanh_backward(input: &FeatureMap, dy: &FeatureMap) -> FeatureMap {
    let data = input
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&x, &g)| if x > -1.0 && x < 1.0 { g } else { 0.0 })
        .collect();
    FeatureMap::from_vec(dy.channels, dy.height, dy.width, data)
}

pub fn global_avg_pool(x: &FeatureMap) -> Vec<f64> {
    let n = x.plane() as f64;
    x.data
        .chunks_exact(x.plane())
        .map(|p| p.iter().sum::<f64>() / n)
        .collect()
}

pub fn global_avg_pool_backward(shape: (usize, usize, usize), dy: &[f64]) -> FeatureMap {
    let (c, h, w) = shape;
    let n = (h * w) as f64;
    let mut out = FeatureMap::zeros(c, h, w);
    for (plane, &g) in out.data.chunks_exact_mut(h * w).zip(dy) {
        plane.iter_mut().for_each(|v| *v = g / n);
    }
    out
}

/// Rearranges `C*r*r x H x W` into `C x H*r x W*r`:
/// `out[c, h*r + i, w*r + j] = in[c*r*r + i*r + j, h, w]`.
pub fn depth_to_space(x: &FeatureMap, r: usize) -> FeatureMap {
    assert_eq!(x.channels % (r * r), 0, "channels divisible by r^2");
    let c_out = x.channels / (r * r);
    let (h, w) = (x.height, x.width);
    let (oh, ow) = (h * r, w * r);
    let mut out = FeatureMap::zeros(c_out, oh, ow);
    for c in 0..c_out {
        for i in 0..r {
            for j in 0..r {
                let src_c = c * r * r + i * r + j;
                for y in 0..h {
                    for xx in 0..w {
                        out.data[(c * oh + y * r + i) * ow + xx * r + j] =
                            x.data[(src_c * h + y) * w + xx];
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`depth_to_space`]; also its gradient since the map is a permutation.
pub fn space_to_depth(x: &FeatureMap, r: usize) -> FeatureMap {
    assert!(x.height % r == 0 && x.width % r == 0, "spatial dims divisible by r");
    let (h, w) = (x.height / r, x.width / r);
    let c_out = x.channels * r * r;
    let mut out = FeatureMap::zeros(c_out, h, w);
    for c in 0..x.channels {
        for i in 0..r {
            for j in 0..r {
                let dst_c = c * r * r + i * r + j;
                for y in 0..h {
                    for xx in 0..w {
                        out.data[(dst_c * h + y) * w + xx] =
                            x.data[(c * x.height + y * r + i) * x.width + xx * r + j];
                    }
                }
            }
        }
    }
    out
}

fn nearest_index(dst: usize, dst_len: usize, src_len: usize) -> usize {
    ((dst * src_len) / dst_len).min(src_len - 1)
}

/// Nearest-neighbour resampling to `rows x cols`.
pub fn resample_nearest(x: &FeatureMap, rows: usize, cols: usize) -> FeatureMap {
    let mut out = FeatureMap::zeros(x.channels, rows, cols);
    for c in 0..x.channels {
        for y in 0..rows {
            let sy = nearest_index(y, rows, x.height);
            for xx in 0..cols {
                let sx = nearest_index(xx, cols, x.width);
                out.data[(c * rows + y) * cols + xx] = x.at(c, sy, sx);
            }
        }
    }
    out
}

pub fn resample_nearest_backward(shape: (usize, usize, usize), dy: &FeatureMap) -> FeatureMap {
    let (c_in, h, w) = shape;
    let mut dx = FeatureMap::zeros(c_in, h, w);
    for c in 0..c_in {
        for y in 0..dy.height {
            let sy = nearest_index(y, dy.height, h);
            for xx in 0..dy.width {
                let sx = nearest_index(xx, dy.width, w);
                dx.data[(c * h + sy) * w + sx] += dy.at(c, y, xx);
            }
        }
    }
    dx
}
