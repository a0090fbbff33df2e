//! Raw forward/adjoint loops behind the graph ops.
//!
//! Feature maps are `[H, W, C]`, conv weights `[kh, kw, Cin, Cout]`,
//! sample coordinates `[H, W, 2]` as (x, y) in source pixel units.

/// Zero-padded 2-D convolution, padding `k/2` per side.
pub(crate) fn conv2d_forward(
    input: &[f32],
    (h, w, cin): (usize, usize, usize),
    weight: &[f32],
    (kh, kw, cout): (usize, usize, usize),
    stride: usize,
    out: &mut [f32],
    (oh, ow): (usize, usize),
) {
    let (ph, pw) = (kh / 2, kw / 2);
    for oy in 0..oh {
        for ox in 0..ow {
            let acc = &mut out[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - ph as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pw as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let in_px = &input[((iy as usize) * w + ix as usize) * cin..][..cin];
                    let w_base = ((ky * kw + kx) * cin) * cout;
                    for (ci, &iv) in in_px.iter().enumerate() {
                        let w_row = &weight[w_base + ci * cout..][..cout];
                        for (a, &wv) in acc.iter_mut().zip(w_row) {
                            *a += iv * wv;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_backward(
    input: &[f32],
    (h, w, cin): (usize, usize, usize),
    weight: &[f32],
    (kh, kw, cout): (usize, usize, usize),
    stride: usize,
    grad_out: &[f32],
    (oh, ow): (usize, usize),
    grad_input: &mut [f32],
    grad_weight: &mut [f32],
) {
    let (ph, pw) = (kh / 2, kw / 2);
    for oy in 0..oh {
        for ox in 0..ow {
            let go = &grad_out[(oy * ow + ox) * cout..][..cout];
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - ph as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pw as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let px = ((iy as usize) * w + ix as usize) * cin;
                    let w_base = ((ky * kw + kx) * cin) * cout;
                    for ci in 0..cin {
                        let w_row = &weight[w_base + ci * cout..][..cout];
                        let gw_row = &mut grad_weight[w_base + ci * cout..][..cout];
                        let iv = input[px + ci];
                        let mut acc = 0.0f32;
                        for co in 0..cout {
                            acc += go[co] * w_row[co];
                            gw_row[co] += iv * go[co];
                        }
                        grad_input[px + ci] += acc;
                    }
                }
            }
        }
    }
}

/// Average pooling. With `same` the input is zero padded by `k/2` and each
/// window averages only its in-bounds taps; otherwise windows are valid.
pub(crate) fn avg_pool2d_forward(
    input: &[f32],
    (h, w, c): (usize, usize, usize),
    k: usize,
    stride: usize,
    same: bool,
    out: &mut [f32],
    (oh, ow): (usize, usize),
) {
    let p = if same { k / 2 } else { 0 };
    for oy in 0..oh {
        for ox in 0..ow {
            let acc = &mut out[(oy * ow + ox) * c..][..c];
            let mut count = 0usize;
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - p as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - p as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    count += 1;
                    let px = &input[((iy as usize) * w + ix as usize) * c..][..c];
                    for (a, &v) in acc.iter_mut().zip(px) {
                        *a += v;
                    }
                }
            }
            let inv = 1.0 / count as f32;
            for a in acc.iter_mut() {
                *a *= inv;
            }
        }
    }
}

pub(crate) fn avg_pool2d_backward(
    (h, w, c): (usize, usize, usize),
    k: usize,
    stride: usize,
    same: bool,
    grad_out: &[f32],
    (oh, ow): (usize, usize),
    grad_input: &mut [f32],
) {
    let p = if same { k / 2 } else { 0 };
    for oy in 0..oh {
        for ox in 0..ow {
            let go = &grad_out[(oy * ow + ox) * c..][..c];
            let mut count = 0usize;
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - p as isize;
                if iy >= 0 && iy < h as isize {
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            count += 1;
                        }
                    }
                }
            }
            let inv = 1.0 / count as f32;
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - p as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - p as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let gi = &mut grad_input[((iy as usize) * w + ix as usize) * c..][..c];
                    for (g, &v) in gi.iter_mut().zip(go) {
                        *g += v * inv;
                    }
                }
            }
        }
    }
}

#[inline]
fn tap(src: &[f32], h: usize, w: usize, c: usize, y: isize, x: isize, ch: usize) -> f32 {
    if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
        0.0
    } else {
        src[((y as usize) * w + x as usize) * c + ch]
    }
}

/// Bilinear sampling with zero padding: out-of-bounds taps contribute zero.
pub(crate) fn grid_sample_forward(
    src: &[f32],
    (h, w, c): (usize, usize, usize),
    coords: &[f32],
    n_out: usize,
    out: &mut [f32],
) {
    for i in 0..n_out {
        let x = coords[i * 2];
        let y = coords[i * 2 + 1];
        let x0 = x.floor();
        let y0 = y.floor();
        let wx = x - x0;
        let wy = y - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        for ch in 0..c {
            let v00 = tap(src, h, w, c, y0, x0, ch);
            let v01 = tap(src, h, w, c, y0, x0 + 1, ch);
            let v10 = tap(src, h, w, c, y0 + 1, x0, ch);
            let v11 = tap(src, h, w, c, y0 + 1, x0 + 1, ch);
            out[i * c + ch] = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01)
                + wy * ((1.0 - wx) * v10 + wx * v11);
        }
    }
}

pub(crate) fn grid_sample_backward(
    src: &[f32],
    (h, w, c): (usize, usize, usize),
    coords: &[f32],
    n_out: usize,
    grad_out: &[f32],
    grad_src: &mut [f32],
    grad_coords: &mut [f32],
) {
    let mut scatter = |y: isize, x: isize, ch: usize, v: f32| {
        if y >= 0 && x >= 0 && y < h as isize && x < w as isize {
            grad_src[((y as usize) * w + x as usize) * c + ch] += v;
        }
    };
    for i in 0..n_out {
        let x = coords[i * 2];
        let y = coords[i * 2 + 1];
        let x0f = x.floor();
        let y0f = y.floor();
        let wx = x - x0f;
        let wy = y - y0f;
        let (x0, y0) = (x0f as isize, y0f as isize);
        let mut gx = 0.0f32;
        let mut gy = 0.0f32;
        for ch in 0..c {
            let go = grad_out[i * c + ch];
            let v00 = tap(src, h, w, c, y0, x0, ch);
            let v01 = tap(src, h, w, c, y0, x0 + 1, ch);
            let v10 = tap(src, h, w, c, y0 + 1, x0, ch);
            let v11 = tap(src, h, w, c, y0 + 1, x0 + 1, ch);
            scatter(y0, x0, ch, go * (1.0 - wy) * (1.0 - wx));
            scatter(y0, x0 + 1, ch, go * (1.0 - wy) * wx);
            scatter(y0 + 1, x0, ch, go * wy * (1.0 - wx));
            scatter(y0 + 1, x0 + 1, ch, go * wy * wx);
            gx += go * ((1.0 - wy) * (v01 - v00) + wy * (v11 - v10));
            gy += go * ((1.0 - wx) * (v10 - v00) + wx * (v11 - v01));
        }
        grad_coords[i * 2] += gx;
        grad_coords[i * 2 + 1] += gy;
    }
}

pub(crate) fn upsample2x_forward(
    input: &[f32],
    (h, w, c): (usize, usize, usize),
    out: &mut [f32],
) {
    let (oh, ow) = (h * 2, w * 2);
    for oy in 0..oh {
        for ox in 0..ow {
            let src = &input[((oy / 2) * w + ox / 2) * c..][..c];
            out[(oy * ow + ox) * c..][..c].copy_from_slice(src);
        }
    }
}

pub(crate) fn upsample2x_backward(
    (h, w, c): (usize, usize, usize),
    grad_out: &[f32],
    grad_input: &mut [f32],
) {
    let ow = w * 2;
    for oy in 0..h * 2 {
        for ox in 0..ow {
            let go = &grad_out[(oy * ow + ox) * c..][..c];
            let gi = &mut grad_input[((oy / 2) * w + ox / 2) * c..][..c];
            for (g, &v) in gi.iter_mut().zip(go) {
                *g += v;
            }
        }
    }
}

/// `[m, k] x [k, n]`, f64 accumulation per output cell.
pub(crate) fn matmul_forward(
    a: &[f32],
    b: &[f32],
    (m, k, n): (usize, usize, usize),
    out: &mut [f32],
) {
    for i in 0..m {
        let a_row = &a[i * k..][..k];
        for j in 0..n {
            let mut acc = 0.0f64;
            for (l, &av) in a_row.iter().enumerate() {
                acc += av as f64 * b[l * n + j] as f64;
            }
            out[i * n + j] = acc as f32;
        }
    }
}

pub(crate) fn matmul_backward(
    a: &[f32],
    b: &[f32],
    (m, k, n): (usize, usize, usize),
    grad_out: &[f32],
    grad_a: &mut [f32],
    grad_b: &mut [f32],
) {
    // dA = dC * B^T
    for i in 0..m {
        for l in 0..k {
            let mut acc = 0.0f64;
            for j in 0..n {
                acc += grad_out[i * n + j] as f64 * b[l * n + j] as f64;
            }
            grad_a[i * k + l] += acc as f32;
        }
    }
    // dB = A^T * dC
    for l in 0..k {
        for j in 0..n {
            let mut acc = 0.0f64;
            for i in 0..m {
                acc += a[i * k + l] as f64 * grad_out[i * n + j] as f64;
            }
            grad_b[l * n + j] += acc as f32;
        }
    }
}
