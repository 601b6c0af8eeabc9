use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::patch::patchify;
use super::VitConfig;
use crate::autodiff::{concat_cols, concat_rows, Bound, ParamStore, Real, Tape, Tensor, Var};
use crate::dsp::ModelInput;
use crate::error::{invalid, Error, Result};
use crate::rng::stream;

const INIT_STD: f64 = 0.02;

/// Normal(0, 0.02) truncated at two standard deviations.
fn trunc_normal<T: Real>(rng: &mut impl Rng, shape: &[usize]) -> Tensor<T> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    Tensor::from_fn(shape, |_| loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * INIT_STD {
            break T::lit(v);
        }
    })
}

fn linear<T: Real>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    store.insert(format!("{name}.weight"), trunc_normal(rng, &[fan_in, fan_out]));
    store.insert(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
}

fn norm<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) {
    store.insert(format!("{name}.weight"), Tensor::full(&[dim], T::one()));
    store.insert(format!("{name}.bias"), Tensor::zeros(&[dim]));
}

/// Adds the parameters of one pre-norm transformer block under `prefix`.
pub fn init_block<T: Real>(store: &mut ParamStore<T>, prefix: &str, dim: usize, hidden: usize, rng: &mut impl Rng) {
    norm(store, &format!("{prefix}.norm1"), dim);
    linear(store, &format!("{prefix}.attn.qkv"), dim, 3 * dim, rng);
    linear(store, &format!("{prefix}.attn.proj"), dim, dim, rng);
    norm(store, &format!("{prefix}.norm2"), dim);
    linear(store, &format!("{prefix}.mlp.fc1"), dim, hidden, rng);
    linear(store, &format!("{prefix}.mlp.fc2"), hidden, dim, rng);
}

fn apply_linear<'t, T: Real>(p: &Bound<'t, T>, name: &str, x: Var<'t, T>) -> Result<Var<'t, T>> {
    x.matmul(&p.get(&format!("{name}.weight"))?)?.add_bias(&p.get(&format!("{name}.bias"))?)
}

fn apply_norm<'t, T: Real>(p: &Bound<'t, T>, name: &str, x: Var<'t, T>) -> Result<Var<'t, T>> {
    let g = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    x.layer_norm(Some((&g, &b)))
}

pub struct BlockOutput<'t, T: Real> {
    pub out: Var<'t, T>,
    /// One `[n, n]` attention matrix per head, when recorded.
    pub attention: Vec<Tensor<T>>,
}

/// `x + MSA(LN(x))` followed by `x + MLP(LN(x))` over token rows `[n, E]`.
pub fn block_forward<'t, T: Real>(
    p: &Bound<'t, T>,
    prefix: &str,
    x: Var<'t, T>,
    n_heads: usize,
    record_attention: bool,
) -> Result<BlockOutput<'t, T>> {
    let dim = *x.shape().last().unwrap_or(&0);
    let dh = dim / n_heads;
    let h = apply_norm(p, &format!("{prefix}.norm1"), x)?;
    let qkv = apply_linear(p, &format!("{prefix}.attn.qkv"), h)?;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let mut heads = Vec::with_capacity(n_heads);
    let mut attention = Vec::new();
    for hd in 0..n_heads {
        let q = qkv.slice_cols(hd * dh, dh)?;
        let k = qkv.slice_cols(dim + hd * dh, dh)?;
        let v = qkv.slice_cols(2 * dim + hd * dh, dh)?;
        let att = q.matmul(&k.transpose()?)?.scale(scale)?.softmax()?;
        if record_attention {
            attention.push((*att.value()).clone());
        }
        heads.push(att.matmul(&v)?);
    }
    let merged = concat_cols(&heads)?;
    let x = x.add(&apply_linear(p, &format!("{prefix}.attn.proj"), merged)?)?;
    let h = apply_norm(p, &format!("{prefix}.norm2"), x)?;
    let m = apply_linear(p, &format!("{prefix}.mlp.fc1"), h)?.gelu()?;
    let m = apply_linear(p, &format!("{prefix}.mlp.fc2"), m)?;
    Ok(BlockOutput { out: x.add(&m)?, attention })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    pub record_attention: bool,
}

/// Per-block representations from one forward pass.
pub struct ForwardTrace<'t, T: Real> {
    /// Class token after the final norm, `[1, E]`.
    pub cls_out: Var<'t, T>,
    /// Block outputs at the visible patch positions, one `[k, E]` per block.
    pub patch_reps_per_block: Vec<Var<'t, T>>,
    /// Visible patch tokens after the final norm, `[k, E]`.
    pub final_patch_reps: Var<'t, T>,
    /// Patch indices that entered the blocks, ascending.
    pub visible: Vec<usize>,
    /// `attention[block][head]`, empty unless requested.
    pub attention: Vec<Vec<Tensor<T>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VitModel<T: Real = f32> {
    pub config: VitConfig,
    pub params: ParamStore<T>,
}

impl<T: Real> VitModel<T> {
    pub fn new(config: VitConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, "model.init", &[]);
        let e = config.embed_dim;
        let mut params = ParamStore::new();
        linear(&mut params, "patch_embed", config.patch_dim(), e, &mut rng);
        params.insert("cls_token", trunc_normal(&mut rng, &[1, e]));
        params.insert("pos_embed", trunc_normal(&mut rng, &[config.n_patches() + 1, e]));
        for i in 0..config.depth {
            init_block(&mut params, &format!("blocks.{i}"), e, config.mlp_hidden(), &mut rng);
        }
        norm(&mut params, "norm", e);
        let mut head_rng = stream(seed, "model.head", &[]);
        linear(&mut params, "head", e, config.n_classes, &mut head_rng);
        Ok(Self { config, params })
    }

    pub fn from_params(config: VitConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let reference = VitModel::<T>::new(config.clone(), 0)?;
        reference.params.check_aligned(&params)?;
        Ok(Self { config, params })
    }

    pub fn cast<U: Real>(&self) -> VitModel<U> {
        VitModel { config: self.config.clone(), params: self.params.cast() }
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        self.params.bind(tape)
    }

    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        self.params.bind_frozen(tape)
    }

    /// Fresh `E -> n_classes` linear head; every other tensor is untouched.
    pub fn replace_head(&mut self, n_classes: usize, seed: u64) -> Result<()> {
        if n_classes < 2 {
            return Err(invalid("a classification head needs at least two outputs"));
        }
        let mut rng = stream(seed, "model.head", &[]);
        let e = self.config.embed_dim;
        *self.params.get_mut("head.weight")? = trunc_normal(&mut rng, &[e, n_classes]);
        *self.params.get_mut("head.bias")? = Tensor::zeros(&[n_classes]);
        self.config.n_classes = n_classes;
        Ok(())
    }

    /// Patch tensor for `input`, recorded as a constant.
    pub fn patches<'t>(&self, tape: &'t Tape<T>, input: &ModelInput) -> Result<Var<'t, T>> {
        if input.shape() != self.config.input {
            return Err(Error::ShapeMismatch {
                op: "model input",
                left: vec![input.channels, input.height, input.width],
                right: vec![self.config.input.channels, self.config.input.height, self.config.input.width],
            });
        }
        Ok(tape.constant(patchify(input, self.config.patch_size)?.cast()))
    }

    /// Runs the encoder. With `visible`, only patches flagged `true` (plus
    /// the class token) enter the blocks.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t, T>,
        patches: Var<'t, T>,
        visible: Option<&[bool]>,
        opts: ForwardOptions,
    ) -> Result<ForwardTrace<'t, T>> {
        let n_patches = self.config.n_patches();
        let expected = [n_patches, self.config.patch_dim()];
        if patches.shape() != expected {
            return Err(Error::ShapeMismatch { op: "forward", left: patches.shape(), right: expected.to_vec() });
        }
        let visible: Vec<usize> = match visible {
            Some(mask) if mask.len() != n_patches => {
                return Err(Error::ShapeMismatch { op: "visible mask", left: vec![mask.len()], right: vec![n_patches] })
            }
            Some(mask) => (0..n_patches).filter(|&i| mask[i]).collect(),
            None => (0..n_patches).collect(),
        };
        if visible.is_empty() {
            return Err(invalid("every patch is masked"));
        }
        let emb = apply_linear(p, "patch_embed", patches)?.gather_rows(&visible)?;
        let pos_rows: Vec<usize> = std::iter::once(0).chain(visible.iter().map(|i| i + 1)).collect();
        let pos = p.get("pos_embed")?.gather_rows(&pos_rows)?;
        let mut x = concat_rows(&[p.get("cls_token")?, emb])?.add(&pos)?;
        let token_rows: Vec<usize> = (1..=visible.len()).collect();
        let mut reps = Vec::with_capacity(self.config.depth);
        let mut attention = Vec::new();
        for i in 0..self.config.depth {
            let out = block_forward(p, &format!("blocks.{i}"), x, self.config.n_heads, opts.record_attention)?;
            x = out.out;
            reps.push(x.gather_rows(&token_rows)?);
            if opts.record_attention {
                attention.push(out.attention);
            }
        }
        let fin = apply_norm(p, "norm", x)?;
        Ok(ForwardTrace {
            cls_out: fin.gather_rows(&[0])?,
            patch_reps_per_block: reps,
            final_patch_reps: fin.gather_rows(&token_rows)?,
            visible,
            attention,
        })
    }

    /// Classification logits `[1, n_classes]` from the class token.
    pub fn logits<'t>(&self, p: &Bound<'t, T>, trace: &ForwardTrace<'t, T>) -> Result<Var<'t, T>> {
        apply_linear(p, "head", trace.cls_out)
    }

    /// Class probabilities for one input (no gradient bookkeeping kept).
    pub fn predict_proba(&self, input: &ModelInput) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let p = self.bind_frozen(&tape);
        let patches = self.patches(&tape, input)?;
        let trace = self.forward(&p, patches, None, ForwardOptions::default())?;
        let probs = self.logits(&p, &trace)?.softmax()?;
        let out = probs.value().data().iter().map(|v| v.as_f64()).collect();
        Ok(out)
    }
}
