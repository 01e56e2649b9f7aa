//! Central-difference gradient checking.

use serde::Serialize;

use crate::corpus::{InputVariant, ModelInput};
use crate::error::{Error, Result};
use crate::nn::{Architecture, Model, ModelConfig, Scalar, Tape, Var};
use crate::text::{build_vocab, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    /// Entries skipped because the step moved some ReLU input across zero,
    /// where the finite difference is meaningless.
    pub kinks: usize,
    pub max_abs_error: f64,
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, floor)` over entries.
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn kinks(&self) -> usize {
        self.tensors.iter().map(|t| t.kinks).sum()
    }

    pub fn entries(&self) -> usize {
        self.tensors.iter().map(|t| t.entries).sum()
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Options for [`check_gradients`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Denominator floor: gradients smaller than this are compared absolutely.
    pub floor: f64,
}

impl GradCheckOptions {
    /// Settings for 64-bit models.
    pub const F64: GradCheckOptions = GradCheckOptions {
        eps: 1e-5,
        floor: 1e-5,
    };
    /// Settings for 32-bit models.
    pub const F32: GradCheckOptions = GradCheckOptions {
        eps: 1e-3,
        floor: 0.1,
    };
}

fn scalar_loss<T: Scalar>(model: &Model<T>, loss: &impl Fn(&Model<T>, &mut Tape<'_, T>) -> Result<Var>) -> Result<(f64, Vec<Option<crate::nn::Matrix<T>>>)> {
    let mut tape = Tape::new(model.params.values());
    let l = loss(model, &mut tape)?;
    let value = tape.value(l).get(0, 0).as_f64();
    Ok((value, tape.backward(l).grads))
}

fn loss_value<T: Scalar>(model: &Model<T>, loss: &impl Fn(&Model<T>, &mut Tape<'_, T>) -> Result<Var>) -> Result<(f64, Vec<bool>)> {
    let mut tape = Tape::new(model.params.values());
    let l = loss(model, &mut tape)?;
    Ok((tape.value(l).get(0, 0).as_f64(), tape.relu_pattern()))
}

/// Compares the tape's gradient of `loss` with `(L(w+eps) - L(w-eps)) / 2eps`
/// for every entry of every parameter tensor.
pub fn check_gradients<T: Scalar>(model: &mut Model<T>, loss: impl Fn(&Model<T>, &mut Tape<'_, T>) -> Result<Var>, options: GradCheckOptions) -> Result<GradCheckReport> {
    let eps = options.eps;
    let (_, analytic) = scalar_loss(model, &loss)?;
    let (_, base_pattern) = loss_value(model, &loss)?;
    let mut tensors = Vec::with_capacity(model.params.len());
    for id in 0..model.params.len() {
        let n = model.params.get(id).data().len();
        let mut check = TensorCheck {
            name: model.params.name(id).to_string(),
            entries: n,
            kinks: 0,
            max_abs_error: 0.0,
            max_rel_error: 0.0,
        };
        for j in 0..n {
            let original = model.params.get(id).data()[j];
            model.params.get_mut(id).data_mut()[j] = T::of(original.as_f64() + eps);
            let (plus, plus_pattern) = loss_value(model, &loss)?;
            model.params.get_mut(id).data_mut()[j] = T::of(original.as_f64() - eps);
            let (minus, minus_pattern) = loss_value(model, &loss)?;
            model.params.get_mut(id).data_mut()[j] = original;
            if plus_pattern != base_pattern || minus_pattern != base_pattern {
                check.kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[id].as_ref().map_or(0.0, |g| g.data()[j].as_f64());
            let diff = (a - numeric).abs();
            check.max_abs_error = check.max_abs_error.max(diff);
            check.max_rel_error = check
                .max_rel_error
                .max(diff / a.abs().max(numeric.abs()).max(options.floor));
        }
        tensors.push(check);
    }
    if tensors.iter().any(|t| !t.max_rel_error.is_finite()) {
        return Err(Error::Training("non-finite gradient check".into()));
    }
    Ok(GradCheckReport { tensors })
}

fn probe_vocab() -> Vocabulary {
    build_vocab(
        &["fix buffer overflow in parser check len before copy return error if size exceeds limit int char"],
        1,
        64,
    )
    .expect("static vocabulary")
}

/// Gradient check on a width-8, single-layer, two-head model of `arch`
/// with dropout off, using a fixed commit and label (or reference).
pub fn check_architecture<T: Scalar>(arch: Architecture, options: GradCheckOptions, seed: u64) -> Result<GradCheckReport> {
    let vocab = probe_vocab();
    let mut config = ModelConfig::tiny(arch, vocab.len(), 12);
    config.num_heads = 2;
    let mut model: Model<T> = Model::new(config, seed)?.with_vocab(&vocab);
    let input = ModelInput {
        message_text: "fix overflow in parser".into(),
        code_text: "+check len before copy\n-return size\n int char".into(),
        variant: InputVariant::MessageAndAllCode,
    };
    let encoded = model.encode(&input, &vocab);
    let reference = vocab.ids("buffer overflow error");
    check_gradients(
        &mut model,
        |m, tape| {
            if arch.is_generator() {
                m.generator_loss(tape, &encoded, &reference, &mut None)
            } else {
                m.classifier_loss(tape, &encoded, 1, &mut None)
            }
        },
        options,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_checks_pass_for_transformer() {
        let r = check_architecture::<f64>(Architecture::TransformerClassifier, GradCheckOptions::F64, 1).unwrap();
        assert!(r.max_rel_error() <= 1e-4, "{:?}", r.worst());
    }

    #[test]
    fn f32_checks_pass_for_lstm() {
        let r = check_architecture::<f32>(Architecture::LstmClassifier, GradCheckOptions::F32, 1).unwrap();
        assert!(r.max_rel_error() <= 1e-2, "{:?}", r.worst());
    }
}
