use super::ops::sigmoid;
use super::tape::{CustomOp, Var};
use super::{gemm, Tensor};
use crate::error::{shape_err, Result};

/// Unidirectional LSTM over the rows of `x` with zero initial state.
///
/// Shapes: `x [T, I]`, `w_ih [I, 4H]`, `w_hh [H, 4H]`, `bias [4H]`, giving
/// `[T, H]`. Gate columns are ordered input, forget, cell, output.
pub fn lstm<'t>(x: Var<'t>, w_ih: Var<'t>, w_hh: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
    let (xv, wi, wh, b) = (x.value(), w_ih.value(), w_hh.value(), bias.value());
    let (steps, input) = match xv.shape() {
        &[t, i] => (t, i),
        s => return Err(shape_err("lstm", format!("input must be [T, I], got {s:?}"))),
    };
    let hidden = match wh.shape() {
        &[h, g] if g == 4 * h => h,
        s => return Err(shape_err("lstm", format!("w_hh must be [H, 4H], got {s:?}"))),
    };
    if wi.shape() != [input, 4 * hidden] || b.shape() != [4 * hidden] {
        return Err(shape_err(
            "lstm",
            format!(
                "w_ih {:?} / bias {:?} for input {input}, hidden {hidden}",
                wi.shape(),
                b.shape()
            ),
        ));
    }

    let g4 = 4 * hidden;
    let mut gates = vec![0.0; steps * g4];
    gemm(xv.data(), wi.data(), &mut gates, steps, input, g4, false, false);
    for row in gates.chunks_exact_mut(g4) {
        for (v, bv) in row.iter_mut().zip(b.data()) {
            *v += bv;
        }
    }

    let mut h = vec![0.0; steps * hidden];
    let mut cells = vec![0.0; steps * hidden];
    let mut tanh_c = vec![0.0; steps * hidden];
    let mut c_prev = vec![0.0; hidden];
    let mut h_prev = vec![0.0; hidden];
    for t in 0..steps {
        let a = &mut gates[t * g4..(t + 1) * g4];
        gemm(&h_prev, wh.data(), a, 1, hidden, g4, false, false);
        for k in 0..hidden {
            let i = sigmoid(a[k]);
            let f = sigmoid(a[hidden + k]);
            let g = a[2 * hidden + k].tanh();
            let o = sigmoid(a[3 * hidden + k]);
            a[k] = i;
            a[hidden + k] = f;
            a[2 * hidden + k] = g;
            a[3 * hidden + k] = o;
            let c = f * c_prev[k] + i * g;
            let tc = c.tanh();
            cells[t * hidden + k] = c;
            tanh_c[t * hidden + k] = tc;
            h[t * hidden + k] = o * tc;
        }
        c_prev.copy_from_slice(&cells[t * hidden..(t + 1) * hidden]);
        h_prev.copy_from_slice(&h[t * hidden..(t + 1) * hidden]);
    }

    let out = Tensor::matrix(steps, hidden, h)?;
    x.tape().custom(
        &[x, w_ih, w_hh, bias],
        out,
        Box::new(LstmOp {
            steps,
            hidden,
            gates,
            cells,
            tanh_c,
        }),
    )
}

/// Activations saved for back-propagation through time.
struct LstmOp {
    steps: usize,
    hidden: usize,
    /// Post-activation gate values `[T, 4H]`.
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl CustomOp for LstmOp {
    fn name(&self) -> &'static str {
        "lstm"
    }

    fn backward(
        &self,
        grad_out: &Tensor,
        inputs: &[&Tensor],
        output: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let (x, w_ih, w_hh) = (inputs[0], inputs[1], inputs[2]);
        let (steps, hidden) = (self.steps, self.hidden);
        let g4 = 4 * hidden;
        let input = x.shape()[1];
        let h = output.data();
        let dh_out = grad_out.data();

        let mut d_pre = vec![0.0; steps * g4];
        let mut dh_next = vec![0.0; hidden];
        let mut dc_next = vec![0.0; hidden];
        for t in (0..steps).rev() {
            let gate = &self.gates[t * g4..(t + 1) * g4];
            let da = &mut d_pre[t * g4..(t + 1) * g4];
            for k in 0..hidden {
                let (i, f, g, o) = (gate[k], gate[hidden + k], gate[2 * hidden + k], gate[3 * hidden + k]);
                let tc = self.tanh_c[t * hidden + k];
                let c_prev = if t > 0 { self.cells[(t - 1) * hidden + k] } else { 0.0 };
                let dh = dh_out[t * hidden + k] + dh_next[k];
                let d_o = dh * tc;
                let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                da[k] = dc * g * i * (1.0 - i);
                da[hidden + k] = dc * c_prev * f * (1.0 - f);
                da[2 * hidden + k] = dc * i * (1.0 - g * g);
                da[3 * hidden + k] = d_o * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            gemm(da, w_hh.data(), &mut dh_next, 1, g4, hidden, false, true);
        }

        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; steps * input];
            gemm(&d_pre, w_ih.data(), &mut dx, steps, g4, input, false, true);
            Tensor::matrix(steps, input, dx)
        });
        let dw_ih = needs[1].then(|| {
            let mut dw = vec![0.0; input * g4];
            gemm(x.data(), &d_pre, &mut dw, input, steps, g4, true, false);
            Tensor::matrix(input, g4, dw)
        });
        let dw_hh = needs[2].then(|| {
            // h_{t-1} rows, with a zero initial state
            let mut dw = vec![0.0; hidden * g4];
            if steps > 1 {
                gemm(
                    &h[..(steps - 1) * hidden],
                    &d_pre[g4..],
                    &mut dw,
                    hidden,
                    steps - 1,
                    g4,
                    true,
                    false,
                );
            }
            Tensor::matrix(hidden, g4, dw)
        });
        let db = needs[3].then(|| {
            let mut db = vec![0.0; g4];
            for row in d_pre.chunks_exact(g4) {
                for (acc, v) in db.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            Tensor::new(vec![g4], db)
        });
        Ok(vec![
            dx.transpose()?,
            dw_ih.transpose()?,
            dw_hh.transpose()?,
            db.transpose()?,
        ])
    }
}
