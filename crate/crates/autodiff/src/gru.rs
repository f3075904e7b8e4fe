//! GRU cell built from tape primitives.
//!
//! Gate convention: the reset gate scales the previous hidden state before
//! the candidate projection, and the update gate mixes
//! `h' = (1−z)∘h_prev + z∘h̃`.

use crate::tape::{Tape, Var};

/// Parameter handles for one GRU cell. Input projections are
/// `[d_in × d_h]`, hidden projections `[d_h × d_h]`, biases `[1 × d_h]`.
#[derive(Clone, Copy)]
pub struct GruWeights {
    pub w_xr: Var,
    pub w_hr: Var,
    pub b_r: Var,
    pub w_xz: Var,
    pub w_hz: Var,
    pub b_z: Var,
    pub w_xh: Var,
    pub w_hh: Var,
    pub b_h: Var,
}

/// One GRU step over a batch of rows: `x` is `[b × d_in]`, `h_prev` is
/// `[b × d_h]`; returns the new hidden state `[b × d_h]`.
pub fn gru_cell(tape: &mut Tape, x: Var, h_prev: Var, w: &GruWeights) -> Var {
    let xr = tape.matmul(x, w.w_xr);
    let hr = tape.matmul(h_prev, w.w_hr);
    let pre_r = tape.add(xr, hr);
    let pre_r = tape.add_row_broadcast(pre_r, w.b_r);
    let r = tape.sigmoid(pre_r);

    let xz = tape.matmul(x, w.w_xz);
    let hz = tape.matmul(h_prev, w.w_hz);
    let pre_z = tape.add(xz, hz);
    let pre_z = tape.add_row_broadcast(pre_z, w.b_z);
    let z = tape.sigmoid(pre_z);

    let rh = tape.mul(r, h_prev);
    let xh = tape.matmul(x, w.w_xh);
    let rhh = tape.matmul(rh, w.w_hh);
    let pre_h = tape.add(xh, rhh);
    let pre_h = tape.add_row_broadcast(pre_h, w.b_h);
    let cand = tape.tanh(pre_h);

    // h' = h − z∘h + z∘h̃
    let zh = tape.mul(z, h_prev);
    let zc = tape.mul(z, cand);
    let keep = tape.sub(h_prev, zh);
    tape.add(keep, zc)
}
