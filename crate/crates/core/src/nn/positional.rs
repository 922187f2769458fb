use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Fixed sinusoidal position table:
/// `table[pos][2i] = sin(pos / 10000^(2i/d))`, `table[pos][2i+1] = cos(...)`.
#[derive(Clone, Debug)]
pub struct PositionalEncoder {
    max_len: usize,
    dim: usize,
    table: Tensor,
}

impl PositionalEncoder {
    pub fn new(max_len: usize, dim: usize) -> Self {
        let mut data = vec![0.0; max_len * dim];
        for pos in 0..max_len {
            for j in 0..dim {
                let pair = (j / 2) * 2;
                let angle = pos as f64 / 10000f64.powf(pair as f64 / dim as f64);
                data[pos * dim + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
            }
        }
        let table = Tensor::new(vec![max_len.max(1), dim], data).expect("table shape");
        Self {
            max_len,
            dim,
            table,
        }
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    /// Adds table row `positions[i]` to row `i` of `embeddings`.
    pub fn encode_positions(
        &self,
        tape: &mut Tape<'_>,
        embeddings: Var,
        positions: &[usize],
    ) -> Result<Var> {
        let shape = tape.shape(embeddings).to_vec();
        if shape.len() != 2 || shape[0] != positions.len() || shape[1] != self.dim {
            return Err(Error::shape(
                "positional_encode",
                &shape,
                &[positions.len(), self.dim],
            ));
        }
        let mut data = Vec::with_capacity(positions.len() * self.dim);
        for &p in positions {
            if p >= self.max_len {
                return Err(Error::Length {
                    start: p,
                    len: 1,
                    max_len: self.max_len,
                });
            }
            data.extend_from_slice(self.table.row(p));
        }
        let pe = tape.constant(Tensor::new(shape, data)?);
        tape.add(embeddings, pe)
    }

    /// Adds rows `start_pos..start_pos + seq_len` of the table to `embeddings`.
    pub fn encode(&self, tape: &mut Tape<'_>, embeddings: Var, start_pos: usize) -> Result<Var> {
        let shape = tape.shape(embeddings).to_vec();
        let (len, dim) = match shape[..] {
            [l, d] => (l, d),
            _ => return Err(Error::shape("positional_encode", &shape, &[0, self.dim])),
        };
        if dim != self.dim {
            return Err(Error::shape("positional_encode", &shape, &[len, self.dim]));
        }
        if start_pos + len > self.max_len {
            return Err(Error::Length {
                start: start_pos,
                len,
                max_len: self.max_len,
            });
        }
        let slice = self.table.data()[start_pos * dim..(start_pos + len) * dim].to_vec();
        let pe = tape.constant(Tensor::new(vec![len, dim], slice)?);
        tape.add(embeddings, pe)
    }
}
