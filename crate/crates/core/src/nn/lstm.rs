use super::Linear;
use crate::error::Result;
use crate::tensor::{ParamStore, SemaRng, Tape, Tensor, Var};

/// Hidden and cell state, each `batch × hidden_dim`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape<'_>, batch: usize, hidden_dim: usize) -> Self {
        let h = tape.constant(Tensor::zeros(&[batch, hidden_dim]));
        let c = tape.constant(Tensor::zeros(&[batch, hidden_dim]));
        Self { h, c }
    }
}

/// Standard LSTM cell. Gate columns are laid out `[input, forget, candidate, output]`.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input: Linear,
    pub recurrent: Linear,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut SemaRng,
    ) -> Self {
        let input = Linear::new(store, &format!("{name}/wx"), input_dim, 4 * hidden_dim, true, rng);
        let recurrent =
            Linear::new(store, &format!("{name}/wh"), hidden_dim, 4 * hidden_dim, false, rng);
        let bias = input.bias.expect("input projection has a bias");
        store.get_mut(bias).value.data_mut()[hidden_dim..2 * hidden_dim].fill(1.0);
        Self {
            input,
            recurrent,
            input_dim,
            hidden_dim,
        }
    }

    /// Input projections for every row of `xs` at once; feed rows to [`LstmCell::step_projected`].
    pub fn project_inputs(&self, tape: &mut Tape<'_>, xs: Var) -> Result<Var> {
        self.input.forward(tape, xs)
    }

    pub fn step(&self, tape: &mut Tape<'_>, x: Var, prev: LstmState) -> Result<LstmState> {
        let xw = self.input.forward(tape, x)?;
        self.step_projected(tape, xw, prev)
    }

    /// One step given the already projected input `x·W_x + b`.
    pub fn step_projected(
        &self,
        tape: &mut Tape<'_>,
        xw: Var,
        prev: LstmState,
    ) -> Result<LstmState> {
        let hw = self.recurrent.forward(tape, prev.h)?;
        let gates = tape.add(xw, hw)?;
        let n = self.hidden_dim;
        let i = tape.slice_cols(gates, 0, n)?;
        let f = tape.slice_cols(gates, n, n)?;
        let g = tape.slice_cols(gates, 2 * n, n)?;
        let o = tape.slice_cols(gates, 3 * n, n)?;
        let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
        let keep = tape.mul(f, prev.c)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    /// Runs over the rows of `xs` (one time step per row, batch of one).
    /// Returns every hidden state in order and the final state.
    pub fn unroll(
        &self,
        tape: &mut Tape<'_>,
        xs: Var,
        init: Option<LstmState>,
    ) -> Result<(Vec<Var>, LstmState)> {
        let len = tape.shape(xs)[0];
        let projected = self.project_inputs(tape, xs)?;
        let mut state = match init {
            Some(s) => s,
            None => LstmState::zeros(tape, 1, self.hidden_dim),
        };
        let mut hs = Vec::with_capacity(len);
        for t in 0..len {
            let xw = tape.slice_rows(projected, t, 1)?;
            state = self.step_projected(tape, xw, state)?;
            hs.push(state.h);
        }
        Ok((hs, state))
    }
}
