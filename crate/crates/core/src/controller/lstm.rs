//! Single LSTM cell with explicit backward pass.
//!
//! Gate order in the weight rows is input, forget, candidate, output. The
//! weight matrix acts on the concatenation `[x; h_prev]`.

use crate::scalar::Scalar;

#[inline]
fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

/// `out = W x + b`, `W` row-major `rows x cols`.
pub(crate) fn affine<T: Scalar>(w: &[T], b: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = row.iter().zip(x).fold(b[r], |acc, (&wi, &xi)| acc + wi * xi);
    }
}

/// `dx += W^T dy`, `dW += dy x^T`, `db += dy`.
pub(crate) fn affine_backward<T: Scalar>(
    w: &[T],
    x: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: &mut [T],
) {
    let cols = x.len();
    for (r, &g) in dy.iter().enumerate() {
        if g == T::zero() {
            continue;
        }
        db[r] += g;
        let row = &w[r * cols..(r + 1) * cols];
        let drow = &mut dw[r * cols..(r + 1) * cols];
        for c in 0..cols {
            drow[c] += g * x[c];
            dx[c] += g * row[c];
        }
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct CellTrace<T> {
    /// `[x; h_prev]`
    pub input: Vec<T>,
    pub c_prev: Vec<T>,
    pub i: Vec<T>,
    pub f: Vec<T>,
    pub g: Vec<T>,
    pub o: Vec<T>,
    pub tanh_c: Vec<T>,
    pub h: Vec<T>,
    pub c: Vec<T>,
}

pub(crate) fn cell_forward<T: Scalar>(
    w: &[T],
    b: &[T],
    x: &[T],
    h_prev: &[T],
    c_prev: &[T],
) -> CellTrace<T> {
    let hidden = h_prev.len();
    let mut input = Vec::with_capacity(x.len() + hidden);
    input.extend_from_slice(x);
    input.extend_from_slice(h_prev);
    let mut z = vec![T::zero(); 4 * hidden];
    affine(w, b, &input, &mut z);
    let i: Vec<T> = z[..hidden].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<T> = z[hidden..2 * hidden].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<T> = z[2 * hidden..3 * hidden].iter().map(|&v| v.tanh()).collect();
    let o: Vec<T> = z[3 * hidden..].iter().map(|&v| sigmoid(v)).collect();
    let c: Vec<T> = (0..hidden).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<T> = c.iter().map(|&v| v.tanh()).collect();
    let h: Vec<T> = (0..hidden).map(|k| o[k] * tanh_c[k]).collect();
    CellTrace { input, c_prev: c_prev.to_vec(), i, f, g, o, tanh_c, h, c }
}

/// Gradients w.r.t. the cell's inputs.
pub(crate) struct CellGrads<T> {
    pub dx: Vec<T>,
    pub dh_prev: Vec<T>,
    pub dc_prev: Vec<T>,
}

/// Backpropagates `dh` (loss gradient on `h`) and `dc_next` (gradient on `c`
/// from the following step), accumulating weight gradients.
pub(crate) fn cell_backward<T: Scalar>(
    w: &[T],
    trace: &CellTrace<T>,
    dh: &[T],
    dc_next: &[T],
    dw: &mut [T],
    db: &mut [T],
) -> CellGrads<T> {
    let hidden = dh.len();
    let one = T::one();
    let mut dz = vec![T::zero(); 4 * hidden];
    let mut dc_prev = vec![T::zero(); hidden];
    for k in 0..hidden {
        let (i, f, g, o, tc) = (trace.i[k], trace.f[k], trace.g[k], trace.o[k], trace.tanh_c[k]);
        let d_o = dh[k] * tc;
        let dc = dc_next[k] + dh[k] * o * (one - tc * tc);
        dz[k] = dc * g * i * (one - i);
        dz[hidden + k] = dc * trace.c_prev[k] * f * (one - f);
        dz[2 * hidden + k] = dc * i * (one - g * g);
        dz[3 * hidden + k] = d_o * o * (one - o);
        dc_prev[k] = dc * f;
    }
    let mut dinput = vec![T::zero(); trace.input.len()];
    affine_backward(w, &trace.input, &dz, dw, db, &mut dinput);
    let dh_prev = dinput.split_off(trace.input.len() - hidden);
    CellGrads { dx: dinput, dh_prev, dc_prev }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Scalar loss `sum(a .* h) + sum(b .* c)` of one cell step.
    fn loss(w: &[f64], bias: &[f64], x: &[f64], h0: &[f64], c0: &[f64], a: &[f64], b: &[f64]) -> f64 {
        let t = cell_forward(w, bias, x, h0, c0);
        t.h.iter().zip(a).map(|(h, a)| h * a).sum::<f64>() + t.c.iter().zip(b).map(|(c, b)| c * b).sum::<f64>()
    }

    #[test]
    fn cell_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (n_in, hid) = (3, 2);
        let mut r = |n: usize| (0..n).map(|_| rng.random_range(-0.8..0.8)).collect::<Vec<f64>>();
        let w = r(4 * hid * (n_in + hid));
        let bias = r(4 * hid);
        let x = r(n_in);
        let h0 = r(hid);
        let c0 = r(hid);
        let a = r(hid);
        let b = r(hid);

        let trace = cell_forward(&w, &bias, &x, &h0, &c0);
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; bias.len()];
        let grads = cell_backward(&w, &trace, &a, &b, &mut dw, &mut db);

        let h = 1e-6;
        let check = |analytic: f64, plus: f64, minus: f64| {
            let numeric = (plus - minus) / (2.0 * h);
            assert!((analytic - numeric).abs() <= 1e-7 * (1.0 + numeric.abs()), "{analytic} vs {numeric}");
        };
        for k in 0..w.len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[k] += h;
            wm[k] -= h;
            check(dw[k], loss(&wp, &bias, &x, &h0, &c0, &a, &b), loss(&wm, &bias, &x, &h0, &c0, &a, &b));
        }
        for k in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[k] += h;
            xm[k] -= h;
            check(grads.dx[k], loss(&w, &bias, &xp, &h0, &c0, &a, &b), loss(&w, &bias, &xm, &h0, &c0, &a, &b));
        }
        for k in 0..hid {
            let (mut hp, mut hm) = (h0.clone(), h0.clone());
            hp[k] += h;
            hm[k] -= h;
            check(grads.dh_prev[k], loss(&w, &bias, &x, &hp, &c0, &a, &b), loss(&w, &bias, &x, &hm, &c0, &a, &b));
            let (mut cp, mut cm) = (c0.clone(), c0.clone());
            cp[k] += h;
            cm[k] -= h;
            check(grads.dc_prev[k], loss(&w, &bias, &x, &h0, &cp, &a, &b), loss(&w, &bias, &x, &h0, &cm, &a, &b));
        }
    }
}
