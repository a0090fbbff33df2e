//! Independent f64 graph interpreter and finite-difference harness.
//!
//! The interpreter walks a built graph through the public `Op`
//! descriptions and evaluates every node in f64 with its own loop
//! implementations. Leaf values can be overridden, which gives central
//! finite differences a smooth f64 function to probe even though the
//! library computes in f32.
//!
//! Mask nodes (`InBoundsMask`) are held at their recorded values instead
//! of being recomputed: they carry no gradient, and freezing them keeps
//! the probed function differentiable.

use std::collections::HashMap;
use vio_core::{Graph, NodeId, Op};

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Evaluate every node up to `root` in f64, with `overrides` replacing
/// leaf values. Returns the value of `root`.
pub fn eval_f64(g: &Graph, root: NodeId, overrides: &HashMap<NodeId, Vec<f64>>) -> Vec<f64> {
    let mut values: Vec<Option<Vec<f64>>> = vec![None; root.index() + 1];
    for i in 0..=root.index() {
        let id = NodeId::from_index(i);
        let ins = g.inputs(id);
        let shape = g.shape(id).to_vec();
        let input_val = |k: usize, values: &[Option<Vec<f64>>]| -> Vec<f64> {
            values[ins[k].index()].clone().expect("topological order")
        };
        let v: Vec<f64> = match g.op(id) {
            Op::Leaf => overrides
                .get(&id)
                .cloned()
                .unwrap_or_else(|| widen(g.value(id).data())),
            Op::Add => ew2(&input_val(0, &values), &input_val(1, &values), &shape, |a, b| a + b),
            Op::Sub => ew2(&input_val(0, &values), &input_val(1, &values), &shape, |a, b| a - b),
            Op::Mul => ew2(&input_val(0, &values), &input_val(1, &values), &shape, |a, b| a * b),
            Op::Div => ew2(&input_val(0, &values), &input_val(1, &values), &shape, |a, b| a / b),
            Op::Min => ew2(&input_val(0, &values), &input_val(1, &values), &shape, |a, b| {
                if a <= b {
                    a
                } else {
                    b
                }
            }),
            Op::Neg => input_val(0, &values).iter().map(|x| -x).collect(),
            Op::Exp => input_val(0, &values).iter().map(|x| x.exp()).collect(),
            Op::Log => input_val(0, &values).iter().map(|x| x.ln()).collect(),
            Op::Sqrt => input_val(0, &values).iter().map(|x| x.sqrt()).collect(),
            Op::Abs => input_val(0, &values).iter().map(|x| x.abs()).collect(),
            Op::Sin => input_val(0, &values).iter().map(|x| x.sin()).collect(),
            Op::Cos => input_val(0, &values).iter().map(|x| x.cos()).collect(),
            Op::Clamp { lo, hi } => input_val(0, &values)
                .iter()
                .map(|x| x.clamp(*lo as f64, *hi as f64))
                .collect(),
            Op::Sum => vec![input_val(0, &values).iter().sum()],
            Op::Mean => {
                let v = input_val(0, &values);
                vec![v.iter().sum::<f64>() / v.len() as f64]
            }
            Op::MatMul => {
                let a = input_val(0, &values);
                let b = input_val(1, &values);
                let sa = g.shape(ins[0]);
                let sb = g.shape(ins[1]);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for l in 0..k {
                            acc += a[i * k + l] * b[l * n + j];
                        }
                        out[i * n + j] = acc;
                    }
                }
                out
            }
            Op::Transpose2 => {
                let a = input_val(0, &values);
                let s = g.shape(ins[0]);
                let (m, n) = (s[0], s[1]);
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[j * m + i] = a[i * n + j];
                    }
                }
                out
            }
            Op::Conv2d { stride } => {
                let inp = input_val(0, &values);
                let wt = input_val(1, &values);
                let si = g.shape(ins[0]);
                let sw = g.shape(ins[1]);
                let (h, w, cin) = (si[0], si[1], si[2]);
                let (kh, kw, cout) = (sw[0], sw[1], sw[3]);
                let (oh, ow) = (shape[0], shape[1]);
                let (ph, pw) = (kh / 2, kw / 2);
                let mut out = vec![0.0; oh * ow * cout];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for co in 0..cout {
                            let mut acc = 0.0;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - ph as isize;
                                    let ix = (ox * stride + kx) as isize - pw as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    for ci in 0..cin {
                                        acc += inp
                                            [((iy as usize) * w + ix as usize) * cin + ci]
                                            * wt[(((ky * kw) + kx) * cin + ci) * cout + co];
                                    }
                                }
                            }
                            out[(oy * ow + ox) * cout + co] = acc;
                        }
                    }
                }
                out
            }
            Op::AvgPool2d { k, stride, same } => {
                let inp = input_val(0, &values);
                let si = g.shape(ins[0]);
                let (h, w, c) = (si[0], si[1], si[2]);
                let (oh, ow) = (shape[0], shape[1]);
                let p = if *same { k / 2 } else { 0 };
                let mut out = vec![0.0; oh * ow * c];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            let mut acc = 0.0;
                            let mut count = 0usize;
                            for ky in 0..*k {
                                for kx in 0..*k {
                                    let iy = (oy * stride + ky) as isize - p as isize;
                                    let ix = (ox * stride + kx) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += inp[((iy as usize) * w + ix as usize) * c + ch];
                                    count += 1;
                                }
                            }
                            out[(oy * ow + ox) * c + ch] = acc / count as f64;
                        }
                    }
                }
                out
            }
            Op::Upsample2x => {
                let inp = input_val(0, &values);
                let si = g.shape(ins[0]);
                let (h, w, c) = (si[0], si[1], si[2]);
                let (oh, ow) = (h * 2, w * 2);
                let mut out = vec![0.0; oh * ow * c];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            out[(oy * ow + ox) * c + ch] =
                                inp[((oy / 2) * w + ox / 2) * c + ch];
                        }
                    }
                }
                out
            }
            Op::GridSample => {
                let src = input_val(0, &values);
                let coords = input_val(1, &values);
                let ss = g.shape(ins[0]);
                let (h, w, c) = (ss[0], ss[1], ss[2]);
                let n = numel(&shape) / c;
                let mut out = vec![0.0; n * c];
                let tap = |y: isize, x: isize, ch: usize| -> f64 {
                    if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                        0.0
                    } else {
                        src[((y as usize) * w + x as usize) * c + ch]
                    }
                };
                for i in 0..n {
                    let x = coords[i * 2];
                    let y = coords[i * 2 + 1];
                    let x0 = x.floor();
                    let y0 = y.floor();
                    let wx = x - x0;
                    let wy = y - y0;
                    let (x0, y0) = (x0 as isize, y0 as isize);
                    for ch in 0..c {
                        out[i * c + ch] = (1.0 - wy)
                            * ((1.0 - wx) * tap(y0, x0, ch) + wx * tap(y0, x0 + 1, ch))
                            + wy * ((1.0 - wx) * tap(y0 + 1, x0, ch)
                                + wx * tap(y0 + 1, x0 + 1, ch));
                    }
                }
                out
            }
            // Frozen at recorded values; see module docs.
            Op::InBoundsMask { .. } => widen(g.value(id).data()),
            Op::Concat { axis } => {
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let axis_total = shape[*axis];
                let mut out = vec![0.0; numel(&shape)];
                let mut axis_off = 0usize;
                for (k, &p) in ins.iter().enumerate() {
                    let v = input_val(k, &values);
                    let pa = g.shape(p)[*axis];
                    for o in 0..outer {
                        for a in 0..pa {
                            for inn in 0..inner {
                                out[(o * axis_total + axis_off + a) * inner + inn] =
                                    v[(o * pa + a) * inner + inn];
                            }
                        }
                    }
                    axis_off += pa;
                }
                out
            }
            Op::Slice { offset, size } => {
                let v = input_val(0, &values);
                let s_in = g.shape(ins[0]).to_vec();
                let rank = s_in.len();
                let total = numel(size);
                let mut out = Vec::with_capacity(total);
                let mut idx = vec![0usize; rank];
                for _ in 0..total {
                    let mut off = 0usize;
                    for d in 0..rank {
                        off = off * s_in[d] + offset[d] + idx[d];
                    }
                    out.push(v[off]);
                    for d in (0..rank).rev() {
                        idx[d] += 1;
                        if idx[d] < size[d] {
                            break;
                        }
                        idx[d] = 0;
                    }
                }
                out
            }
            Op::Reshape => input_val(0, &values),
        };
        values[i] = Some(v);
    }
    values[root.index()].clone().unwrap()
}

fn ew2(a: &[f64], b: &[f64], out_shape: &[usize], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let n = numel(out_shape);
    (0..n).map(|i| f(a[i % a.len()], b[i % b.len()])).collect()
}

/// Central finite differences of the scalar at `root` w.r.t. every
/// element of `leaf`, evaluated with the f64 interpreter.
pub fn fd_grad(g: &Graph, root: NodeId, leaf: NodeId, h: f64) -> Vec<f64> {
    let base = widen(g.value(leaf).data());
    let mut grad = vec![0.0; base.len()];
    let mut overrides = HashMap::new();
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        overrides.insert(leaf, plus);
        let fp = eval_f64(g, root, &overrides)[0];
        let mut minus = base.clone();
        minus[i] -= h;
        overrides.insert(leaf, minus);
        let fm = eval_f64(g, root, &overrides)[0];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Relative error with a floor to keep near-zero gradients meaningful.
pub fn rel_err(analytic: f64, fd: f64, floor: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(floor)
}

/// Assert the analytic gradients of `root` w.r.t. each leaf match central
/// finite differences within `tol` relative error.
pub fn check_grads(g: &Graph, root: NodeId, leaves: &[NodeId], h: f64, tol: f64, ctx: &str) {
    let grads = g.backward(root).expect("backward");
    for &leaf in leaves {
        let analytic = grads
            .get(&leaf)
            .unwrap_or_else(|| panic!("{ctx}: leaf {leaf:?} missing from gradient map"));
        let fd = fd_grad(g, root, leaf, h);
        for (i, (&a, &f)) in analytic
            .data()
            .iter()
            .zip(&fd)
            .enumerate()
            .map(|(i, p)| (i, p))
        {
            let e = rel_err(a as f64, f, 1e-3);
            assert!(
                e <= tol,
                "{ctx}: leaf {leaf:?} element {i}: analytic {a} vs fd {f} (rel err {e:.2e})"
            );
        }
    }
}
