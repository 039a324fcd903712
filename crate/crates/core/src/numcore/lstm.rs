use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Weights of one LSTM layer bound on a tape.
///
/// `w_x` is `in × 4H`, `w_h` is `H × 4H`, `b` is `1 × 4H`; gate blocks are
/// ordered input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
}

/// One LSTM step: returns `(h, cell)`.
pub fn lstm_cell(
    tape: &mut Tape<'_>,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    w: &LstmVars,
) -> Result<(Var, Var)> {
    let xw = tape.matmul(x, w.w_x)?;
    let projected = tape.add_row(xw, w.b)?;
    lstm_cell_projected(tape, projected, h_prev, c_prev, w.w_h)
}

/// LSTM step where `x·W_x + b` has already been computed (1 × 4H).
pub fn lstm_cell_projected(
    tape: &mut Tape<'_>,
    projected: Var,
    h_prev: Var,
    c_prev: Var,
    w_h: Var,
) -> Result<(Var, Var)> {
    let four_h = tape.value(projected).cols();
    let hidden = tape.value(h_prev).cols();
    if four_h != 4 * hidden || tape.value(c_prev).cols() != hidden {
        return Err(Error::dim(
            "lstm_cell",
            tape.value(projected).shape(),
            tape.value(h_prev).shape(),
        ));
    }
    let hw = tape.matmul(h_prev, w_h)?;
    let z = tape.add(projected, hw)?;
    let zi = tape.slice_cols(z, 0, hidden)?;
    let zf = tape.slice_cols(z, hidden, hidden)?;
    let zg = tape.slice_cols(z, 2 * hidden, hidden)?;
    let zo = tape.slice_cols(z, 3 * hidden, hidden)?;
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let cell = tape.add(keep, write)?;
    let squashed = tape.tanh(cell);
    let h = tape.mul(o, squashed)?;
    Ok((h, cell))
}
