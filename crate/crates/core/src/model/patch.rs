use crate::autodiff::Tensor;
use crate::dsp::{InputShape, ModelInput, Normalization};
use crate::error::{invalid, Result};

fn check(shape: InputShape, p: usize) -> Result<(usize, usize)> {
    if p == 0 || shape.height % p != 0 || shape.width % p != 0 {
        return Err(invalid(format!(
            "input {}x{} is not divisible by patch size {p}",
            shape.height, shape.width
        )));
    }
    Ok((shape.height / p, shape.width / p))
}

/// Non-overlapping `p x p` patches in row-major grid order, each flattened
/// as `[channel][row][col]`. Shape `[P, c * p * p]`.
pub fn patchify(input: &ModelInput, p: usize) -> Result<Tensor<f32>> {
    let (gh, gw) = check(input.shape(), p)?;
    let (c, w) = (input.channels, input.width);
    let plane = input.height * w;
    let dim = c * p * p;
    let mut out = Vec::with_capacity(gh * gw * dim);
    for gy in 0..gh {
        for gx in 0..gw {
            for ch in 0..c {
                for py in 0..p {
                    let row = ch * plane + (gy * p + py) * w + gx * p;
                    out.extend_from_slice(&input.values[row..row + p]);
                }
            }
        }
    }
    Tensor::new(vec![gh * gw, dim], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor<f32>, shape: InputShape, p: usize) -> Result<ModelInput> {
    let (gh, gw) = check(shape, p)?;
    let dim = shape.channels * p * p;
    if patches.shape() != [gh * gw, dim] {
        return Err(crate::Error::ShapeMismatch {
            op: "unpatchify",
            left: patches.shape().to_vec(),
            right: vec![gh * gw, dim],
        });
    }
    let (c, w) = (shape.channels, shape.width);
    let plane = shape.height * w;
    let mut values = vec![0.0f32; c * plane];
    let mut src = patches.data().iter();
    for gy in 0..gh {
        for gx in 0..gw {
            for ch in 0..c {
                for py in 0..p {
                    let row = ch * plane + (gy * p + py) * w + gx * p;
                    for v in &mut values[row..row + p] {
                        *v = *src.next().expect("sized above");
                    }
                }
            }
        }
    }
    Ok(ModelInput {
        channels: c,
        height: shape.height,
        width: shape.width,
        values,
        normalization: Normalization::PerClipStandardize,
    })
}
