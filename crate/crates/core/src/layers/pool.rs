//! 2x2 max pooling with stride 2.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Shape4, Tensor};

/// Flat input index of the winning element for every output element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    input: Shape4,
    winners: Vec<usize>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> Shape4 {
        self.input
    }

    pub fn winners(&self) -> &[usize] {
        &self.winners
    }
}

pub fn maxpool2_forward(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let s = input.shape4()?;
    if s.height % 2 != 0 || s.width % 2 != 0 {
        return shape_err(format!(
            "max-pool needs even spatial extents, got {}x{}",
            s.height, s.width
        ));
    }
    let os = Shape4::new(s.batch, s.channels, s.height / 2, s.width / 2)?;
    let x = input.data();
    let mut out = Tensor::zeros4(os);
    let mut winners = Vec::with_capacity(os.len());
    let od = out.data_mut();
    let mut i = 0;
    for b in 0..s.batch {
        for c in 0..s.channels {
            for oy in 0..os.height {
                for ox in 0..os.width {
                    let mut best = s.index(b, c, 2 * oy, 2 * ox);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let j = s.index(b, c, 2 * oy + dy, 2 * ox + dx);
                        if x[j] > x[best] {
                            best = j;
                        }
                    }
                    od[i] = x[best];
                    winners.push(best);
                    i += 1;
                }
            }
        }
    }
    Ok((out, PoolIndices { input: s, winners }))
}

pub fn maxpool2_backward(indices: &PoolIndices, d_output: &Tensor) -> Result<Tensor> {
    if d_output.len() != indices.winners.len() {
        return shape_err(format!(
            "pool d_output has {} elements, forward produced {}",
            d_output.len(),
            indices.winners.len()
        ));
    }
    let mut d_input = Tensor::zeros4(indices.input);
    let di = d_input.data_mut();
    for (&j, &g) in indices.winners.iter().zip(d_output.data()) {
        let slot = di
            .get_mut(j)
            .ok_or_else(|| Error::Internal(format!("pool index {j} out of bounds")))?;
        *slot += g;
    }
    Ok(d_input)
}
