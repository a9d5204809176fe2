use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::numkernel::{DiffTensor, Tape, Var};

/// One LSTM direction. Gate blocks are laid out `[i | f | g | o]` along the
/// columns of `w` (`din × 4H`), `u` (`H × 4H`) and `b` (`4H`).
///
/// ```text
/// i = σ(x W_i + h U_i + b_i)      f = σ(x W_f + h U_f + b_f)
/// g = tanh(x W_g + h U_g + b_g)   o = σ(x W_o + h U_o + b_o)
/// c' = f ⊙ c + i ⊙ g              h' = o ⊙ tanh(c')
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w: DiffTensor,
    pub u: DiffTensor,
    pub b: DiffTensor,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

impl LstmParams {
    pub fn init<R: Rng + ?Sized>(din: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w: DiffTensor::glorot(din, 4 * hidden, rng),
            u: DiffTensor::glorot(hidden, 4 * hidden, rng),
            b: DiffTensor::zeros_param(vec![4 * hidden]),
            hidden,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn tensors(&self) -> Vec<&DiffTensor> {
        vec![&self.w, &self.u, &self.b]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DiffTensor> {
        vec![&mut self.w, &mut self.u, &mut self.b]
    }

    pub fn bind(&self, tape: &mut Tape) -> LstmVars {
        LstmVars {
            w: tape.leaf(&self.w),
            u: tape.leaf(&self.u),
            b: tape.leaf(&self.b),
        }
    }
}

/// One LSTM step for a batch: `x` is `B × din`, `h` and `c` are `B × H`.
pub fn lstm_cell_tape(tape: &mut Tape, v: &LstmVars, hidden: usize, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let xw = tape.matmul(x, v.w)?;
    let hu = tape.matmul(h, v.u)?;
    let pre = tape.add(xw, hu)?;
    let pre = tape.add_row(pre, v.b)?;
    let hh = hidden;
    let i = tape.slice_cols(pre, 0, hh)?;
    let f = tape.slice_cols(pre, hh, 2 * hh)?;
    let g = tape.slice_cols(pre, 2 * hh, 3 * hh)?;
    let o = tape.slice_cols(pre, 3 * hh, 4 * hh)?;
    let i = tape.sigmoid(i)?;
    let f = tape.sigmoid(f)?;
    let g = tape.tanh(g)?;
    let o = tape.sigmoid(o)?;
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next)?;
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Runs one direction over `xs` from zero state; returns the hidden state
/// after every step, in the order the inputs were given.
fn run_direction(tape: &mut Tape, p: &LstmParams, v: &LstmVars, xs: &[Var], reverse: bool) -> Result<Vec<Var>> {
    let b = tape.shape(xs[0])[0];
    let hh = p.hidden;
    let mut h = tape.constant(vec![b, hh], vec![0.0; b * hh])?;
    let mut c = h;
    let mut out = vec![h; xs.len()];
    let order: Vec<usize> = if reverse {
        (0..xs.len()).rev().collect()
    } else {
        (0..xs.len()).collect()
    };
    for t in order {
        (h, c) = lstm_cell_tape(tape, v, hh, xs[t], h, c)?;
        out[t] = h;
    }
    Ok(out)
}

/// Bidirectional pass: `h_t = [h_t^fwd ‖ h_t^bwd]`, each `B × 2H`.
pub fn bilstm_tape(
    tape: &mut Tape,
    fwd: (&LstmParams, &LstmVars),
    bwd: (&LstmParams, &LstmVars),
    xs: &[Var],
) -> Result<Vec<Var>> {
    if xs.is_empty() {
        return Err(shape_err!("empty sequence"));
    }
    let f = run_direction(tape, fwd.0, fwd.1, xs, false)?;
    let b = run_direction(tape, bwd.0, bwd.1, xs, true)?;
    f.iter().zip(&b).map(|(&x, &y)| tape.concat_cols(&[x, y])).collect()
}
