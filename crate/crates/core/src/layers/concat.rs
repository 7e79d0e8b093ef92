use crate::error::{shape_err, Result};
use crate::tensor::{Shape4, Tensor};

/// Stacks `a` then `b` along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape4()?, b.shape4()?);
    if (sa.batch, sa.height, sa.width) != (sb.batch, sb.height, sb.width) {
        return shape_err(format!(
            "concat needs matching batch and spatial extents: {:?} vs {:?}",
            sa.dims(),
            sb.dims()
        ));
    }
    let out = Shape4::new(sa.batch, sa.channels + sb.channels, sa.height, sa.width)?;
    let (la, lb) = (sa.channels * sa.plane(), sb.channels * sb.plane());
    let mut data = Vec::with_capacity(out.len());
    for n in 0..sa.batch {
        data.extend_from_slice(&a.data()[n * la..(n + 1) * la]);
        data.extend_from_slice(&b.data()[n * lb..(n + 1) * lb]);
    }
    Tensor::from_vec(&out.dims(), data)
}

/// Inverse of [`concat_channels`]: the first `first_channels` channels go
/// to the left tensor, the rest to the right.
pub fn split_channels(t: &Tensor, first_channels: usize) -> Result<(Tensor, Tensor)> {
    let s = t.shape4()?;
    if first_channels == 0 || first_channels >= s.channels {
        return shape_err(format!("cannot split {} channels at {first_channels}", s.channels));
    }
    let sa = Shape4::new(s.batch, first_channels, s.height, s.width)?;
    let sb = Shape4::new(s.batch, s.channels - first_channels, s.height, s.width)?;
    let (la, lb) = (sa.channels * s.plane(), sb.channels * s.plane());
    let mut a = Vec::with_capacity(sa.len());
    let mut b = Vec::with_capacity(sb.len());
    for n in 0..s.batch {
        let item = &t.data()[n * (la + lb)..(n + 1) * (la + lb)];
        a.extend_from_slice(&item[..la]);
        b.extend_from_slice(&item[la..]);
    }
    Ok((Tensor::from_vec(&sa.dims(), a)?, Tensor::from_vec(&sb.dims(), b)?))
}
