use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{softmax, Mat, Tape, Var};
use super::ModelError;
use crate::corpus::Span;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Longest input accepted, including the leading `[cls]` position.
    pub max_len: usize,
    pub dropout: f64,
    /// Feed-forward width; 0 means `4 * d_model`.
    pub d_ff: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            max_len: 64,
            dropout: 0.0,
            d_ff: 0,
        }
    }
}

impl EncoderConfig {
    pub fn ff_width(&self) -> usize {
        if self.d_ff == 0 {
            4 * self.d_model
        } else {
            self.d_ff
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.max_len == 0 {
            return Err("encoder sizes must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return Err(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// How the classifier sees an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Mean-pooled subject span concatenated with mean-pooled object span.
    #[default]
    Pair,
    /// Hidden state of the leading `[cls]` position.
    Cls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub vocab_size: usize,
    pub n_relations: usize,
    pub representation: Representation,
    pub tie_mslm_head: bool,
}

impl ModelConfig {
    pub fn repr_width(&self) -> usize {
        match self.representation {
            Representation::Pair => 2 * self.encoder.d_model,
            Representation::Cls => self.encoder.d_model,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Every trainable tensor in one flat buffer, addressable by name or index.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub specs: Vec<TensorSpec>,
    pub data: Vec<f64>,
}

impl ModelParams {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, flat: usize) -> f64 {
        self.data[flat]
    }

    pub fn set(&mut self, flat: usize, v: f64) {
        self.data[flat] = v;
    }

    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.spec(name).map(|s| &self.data[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.spec(name)?.range();
        Some(&mut self.data[r])
    }

    /// Owning tensor name for a flat index.
    pub fn owner(&self, flat: usize) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.range().contains(&flat))
    }

    fn mat(&self, idx: usize) -> Mat {
        let s = &self.specs[idx];
        Mat::from_vec(s.rows, s.cols, self.data[s.range()].to_vec())
    }
}

struct LayoutBuilder {
    specs: Vec<TensorSpec>,
    offset: usize,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, rows: usize, cols: usize) -> usize {
        self.specs.push(TensorSpec {
            name,
            rows,
            cols,
            offset: self.offset,
        });
        self.offset += rows * cols;
        self.specs.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerIds {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct ParamIds {
    tok_emb: usize,
    pos_emb: usize,
    layers: Vec<LayerIds>,
    lnf_g: usize,
    lnf_b: usize,
    mslm_out: Option<usize>,
    mslm_bias: usize,
    cls_w: usize,
    cls_b: usize,
}

fn layout(cfg: &ModelConfig) -> (Vec<TensorSpec>, ParamIds) {
    let d = cfg.encoder.d_model;
    let ff = cfg.encoder.ff_width();
    let mut b = LayoutBuilder {
        specs: Vec::new(),
        offset: 0,
    };
    let tok_emb = b.add("embed.tokens".into(), cfg.vocab_size, d);
    let pos_emb = b.add("embed.positions".into(), cfg.encoder.max_len, d);
    let mut layers = Vec::new();
    for l in 0..cfg.encoder.n_layers {
        let p = |n: &str| format!("layer{l}.{n}");
        // weights are stored input-major: y = x · W
        layers.push(LayerIds {
            ln1_g: b.add(p("ln1.gain"), 1, d),
            ln1_b: b.add(p("ln1.bias"), 1, d),
            wq: b.add(p("attn.wq"), d, d),
            bq: b.add(p("attn.bq"), 1, d),
            wk: b.add(p("attn.wk"), d, d),
            bk: b.add(p("attn.bk"), 1, d),
            wv: b.add(p("attn.wv"), d, d),
            bv: b.add(p("attn.bv"), 1, d),
            wo: b.add(p("attn.wo"), d, d),
            bo: b.add(p("attn.bo"), 1, d),
            ln2_g: b.add(p("ln2.gain"), 1, d),
            ln2_b: b.add(p("ln2.bias"), 1, d),
            w1: b.add(p("ffn.w1"), d, ff),
            b1: b.add(p("ffn.b1"), 1, ff),
            w2: b.add(p("ffn.w2"), ff, d),
            b2: b.add(p("ffn.b2"), 1, d),
        });
    }
    let lnf_g = b.add("final_ln.gain".into(), 1, d);
    let lnf_b = b.add("final_ln.bias".into(), 1, d);
    let mslm_out = (!cfg.tie_mslm_head).then(|| b.add("mslm.out".into(), cfg.vocab_size, d));
    let mslm_bias = b.add("mslm.bias".into(), 1, cfg.vocab_size);
    let cls_w = b.add("classifier.weight".into(), cfg.n_relations, cfg.repr_width());
    let cls_b = b.add("classifier.bias".into(), 1, cfg.n_relations);
    (
        b.specs,
        ParamIds {
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
            mslm_out,
            mslm_bias,
            cls_w,
            cls_b,
        },
    )
}

/// Tape handles for every parameter tensor of one forward pass.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    fn v(&self, idx: usize) -> Var {
        self.vars[idx]
    }
}

/// Pre-LN transformer encoder with an MSLM head and a relation classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    ids: ParamIds,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.encoder.validate().map_err(ModelError::Config)?;
        if config.vocab_size < 4 || config.n_relations == 0 {
            return Err(ModelError::Config(
                "vocabulary and relation set must be non-empty".into(),
            ));
        }
        let (specs, ids) = layout(&config);
        let total = specs.last().map(|s| s.offset + s.len()).unwrap_or(0);
        let mut data = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in &specs {
            let name = s.name.as_str();
            let fill = if name.ends_with(".gain") {
                Some(1.0)
            } else if name.contains(".b") || name.ends_with("bias") {
                Some(0.0)
            } else {
                None
            };
            let range = s.range();
            match fill {
                Some(v) => data[range].iter_mut().for_each(|x| *x = v),
                None => {
                    let std = if name == "embed.positions" {
                        0.02
                    } else if name.starts_with("embed.") || name == "mslm.out" {
                        0.1
                    } else if name == "classifier.weight" {
                        0.02
                    } else {
                        1.0 / (s.rows as f64).sqrt()
                    };
                    let normal = Normal::new(0.0, std).expect("positive std");
                    data[range]
                        .iter_mut()
                        .for_each(|x| *x = normal.sample(&mut rng));
                }
            }
        }
        Ok(Model {
            config,
            params: ModelParams { specs, data },
            ids,
        })
    }

    /// Reassemble from a stored configuration and parameter buffer.
    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self, ModelError> {
        config.encoder.validate().map_err(ModelError::Config)?;
        let (specs, ids) = layout(&config);
        for (want, got) in specs.iter().zip(&params.specs) {
            if want != got {
                return Err(ModelError::Shape(format!(
                    "tensor `{}` expected {}x{} at offset {}, found `{}` {}x{} at offset {}",
                    want.name, want.rows, want.cols, want.offset, got.name, got.rows, got.cols,
                    got.offset
                )));
            }
        }
        if specs.len() != params.specs.len() {
            return Err(ModelError::Shape(format!(
                "expected {} tensors, found {}",
                specs.len(),
                params.specs.len()
            )));
        }
        let total = specs.last().map(|s| s.offset + s.len()).unwrap_or(0);
        if params.data.len() != total {
            return Err(ModelError::Shape(format!(
                "expected {total} parameter values, found {}",
                params.data.len()
            )));
        }
        Ok(Model {
            config,
            params,
            ids,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Flat index ranges of the token embeddings and both classifier tensors.
    pub fn head_and_embedding_ranges(&self) -> Vec<std::ops::Range<usize>> {
        [self.ids.tok_emb, self.ids.cls_w, self.ids.cls_b]
            .iter()
            .map(|&i| self.params.specs[i].range())
            .collect()
    }

    /// Copy every parameter onto the tape.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = (0..self.params.specs.len())
            .map(|i| tape.param(self.params.mat(i), self.params.specs[i].offset))
            .collect();
        Bound { vars }
    }

    fn check_ids(&self, ids: &[usize]) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if ids.len() > self.config.encoder.max_len {
            return Err(ModelError::Overlength {
                len: ids.len(),
                max_len: self.config.encoder.max_len,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(ModelError::IdOutOfRange {
                id: bad,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn layer_norm(tape: &mut Tape, b: &Bound, x: Var, g: usize, bias: usize) -> Var {
        let n = tape.normalize(x);
        let y = tape.mul_row(n, b.v(g));
        tape.add_row(y, b.v(bias))
    }

    fn maybe_dropout(&self, tape: &mut Tape, x: Var, rng: &mut Option<&mut ChaCha8Rng>) -> Var {
        let p = self.config.encoder.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let n = tape.value(x).data.len();
                let scale = 1.0 / (1.0 - p);
                let keep = (0..n)
                    .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
                    .collect();
                tape.dropout(x, keep)
            }
            _ => x,
        }
    }

    /// Hidden states `(len, d_model)` for `ids`. Passing an RNG enables dropout.
    pub fn encode(
        &self,
        tape: &mut Tape,
        b: &Bound,
        ids: &[usize],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, ModelError> {
        self.check_ids(ids)?;
        let n = ids.len();
        let d = self.config.encoder.d_model;
        let heads = self.config.encoder.n_heads;
        let dh = d / heads;
        let tok = tape.gather_rows(b.v(self.ids.tok_emb), ids);
        let positions: Vec<usize> = (0..n).collect();
        let pos = tape.gather_rows(b.v(self.ids.pos_emb), &positions);
        let mut x = tape.add(tok, pos);
        x = self.maybe_dropout(tape, x, &mut dropout_rng);
        let att_scale = 1.0 / (dh as f64).sqrt();
        for l in &self.ids.layers {
            let a = Self::layer_norm(tape, b, x, l.ln1_g, l.ln1_b);
            let q = tape.matmul(a, b.v(l.wq));
            let q = tape.add_row(q, b.v(l.bq));
            let k = tape.matmul(a, b.v(l.wk));
            let k = tape.add_row(k, b.v(l.bk));
            let v = tape.matmul(a, b.v(l.wv));
            let v = tape.add_row(v, b.v(l.bv));
            let mut outs = Vec::with_capacity(heads);
            for h in 0..heads {
                let (s, e) = (h * dh, (h + 1) * dh);
                let qh = tape.slice_cols(q, s, e);
                let kh = tape.slice_cols(k, s, e);
                let vh = tape.slice_cols(v, s, e);
                let scores = tape.matmul_nt(qh, kh);
                let scores = tape.scale(scores, att_scale);
                let att = tape.softmax_rows(scores);
                outs.push(tape.matmul(att, vh));
            }
            let merged = if heads == 1 {
                outs[0]
            } else {
                tape.concat_cols(&outs)
            };
            let o = tape.matmul(merged, b.v(l.wo));
            let o = tape.add_row(o, b.v(l.bo));
            let o = self.maybe_dropout(tape, o, &mut dropout_rng);
            x = tape.add(x, o);

            let f = Self::layer_norm(tape, b, x, l.ln2_g, l.ln2_b);
            let f = tape.matmul(f, b.v(l.w1));
            let f = tape.add_row(f, b.v(l.b1));
            let f = tape.gelu(f);
            let f = tape.matmul(f, b.v(l.w2));
            let f = tape.add_row(f, b.v(l.b2));
            let f = self.maybe_dropout(tape, f, &mut dropout_rng);
            x = tape.add(x, f);
        }
        debug_assert_eq!(tape.value(x).rows, n);
        Ok(Self::layer_norm(
            tape,
            b,
            x,
            self.ids.lnf_g,
            self.ids.lnf_b,
        ))
    }

    /// Mean of the hidden rows inside `span`.
    pub fn pool(&self, tape: &mut Tape, hidden: Var, span: Span) -> Result<Var, ModelError> {
        let rows = tape.value(hidden).rows;
        if span.is_empty() {
            return Err(ModelError::EmptySpan);
        }
        if span.end > rows {
            return Err(ModelError::SpanOutOfRange { span, len: rows });
        }
        Ok(tape.mean_rows(hidden, span.start, span.end))
    }

    /// Classifier input for an encoded sequence. Spans index the encoded
    /// sequence (i.e. already shifted past `[cls]`).
    pub fn representation(
        &self,
        tape: &mut Tape,
        hidden: Var,
        subj: Span,
        obj: Span,
    ) -> Result<Var, ModelError> {
        match self.config.representation {
            Representation::Pair => {
                let s = self.pool(tape, hidden, subj)?;
                let o = self.pool(tape, hidden, obj)?;
                Ok(tape.concat_cols(&[s, o]))
            }
            Representation::Cls => Ok(tape.gather_rows(hidden, &[0])),
        }
    }

    /// Relation logits `W · h + b` as a `1 × |R|` row.
    pub fn class_logits(&self, tape: &mut Tape, b: &Bound, repr: Var) -> Var {
        let z = tape.matmul_nt(repr, b.v(self.ids.cls_w));
        tape.add_row(z, b.v(self.ids.cls_b))
    }

    /// Vocabulary logits for the given hidden rows.
    pub fn mslm_logits(&self, tape: &mut Tape, b: &Bound, hidden: Var, positions: &[usize]) -> Var {
        let h = tape.gather_rows(hidden, positions);
        let out = self.ids.mslm_out.unwrap_or(self.ids.tok_emb);
        let z = tape.matmul_nt(h, b.v(out));
        tape.add_row(z, b.v(self.ids.mslm_bias))
    }

    /// Inference-mode hidden states.
    pub fn encode_sequence(&self, ids: &[usize]) -> Result<Mat, ModelError> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let h = self.encode(&mut tape, &b, ids, None)?;
        Ok(tape.value(h).clone())
    }

    /// `softmax(W · h + b)` for a plain representation vector.
    pub fn classify(&self, h: &[f64]) -> Result<Vec<f64>, ModelError> {
        let width = self.config.repr_width();
        if h.len() != width {
            return Err(ModelError::DimMismatch {
                expected: width,
                got: h.len(),
            });
        }
        let w = &self.params.data[self.params.specs[self.ids.cls_w].range()];
        let bias = &self.params.data[self.params.specs[self.ids.cls_b].range()];
        let logits: Vec<f64> = (0..self.config.n_relations)
            .map(|r| super::tape::dot(&w[r * width..(r + 1) * width], h) + bias[r])
            .collect();
        Ok(softmax(&logits))
    }

    /// Probability vector over relations for one sequence and its entity
    /// spans (spans index `ids`).
    pub fn predict_proba(&self, ids: &[usize], subj: Span, obj: Span) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let h = self.encode(&mut tape, &b, ids, None)?;
        let r = self.representation(&mut tape, h, subj, obj)?;
        let repr = tape.value(r).data.clone();
        self.classify(&repr)
    }
}

/// Arithmetic mean of the rows of `hidden` inside `span`.
pub fn pool_span(hidden: &Mat, span: Span) -> Result<Vec<f64>, ModelError> {
    if span.is_empty() {
        return Err(ModelError::EmptySpan);
    }
    if span.end > hidden.rows {
        return Err(ModelError::SpanOutOfRange {
            span,
            len: hidden.rows,
        });
    }
    let mut out = vec![0.0; hidden.cols];
    for r in span.start..span.end {
        for (o, x) in out.iter_mut().zip(hidden.row(r)) {
            *o += x;
        }
    }
    let inv = 1.0 / span.len() as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                d_model: 8,
                n_layers: 2,
                n_heads: 2,
                max_len: 12,
                dropout: 0.0,
                d_ff: 16,
            },
            vocab_size: 20,
            n_relations: 3,
            representation: Representation::Pair,
            tie_mslm_head: true,
        }
    }

    #[test]
    fn output_shape_matches_input() {
        let m = Model::new(tiny_config(), 1).unwrap();
        for n in 1..=12 {
            let ids: Vec<usize> = (0..n).map(|i| (i * 7) % 20).collect();
            let h = m.encode_sequence(&ids).unwrap();
            assert_eq!((h.rows, h.cols), (n, 8));
            assert!(h.data.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = Model::new(tiny_config(), 1).unwrap();
        assert!(matches!(
            m.encode_sequence(&[1, 25]),
            Err(ModelError::IdOutOfRange { id: 25, .. })
        ));
        assert!(matches!(
            m.encode_sequence(&[1; 13]),
            Err(ModelError::Overlength { len: 13, .. })
        ));
    }

    #[test]
    fn swapping_tokens_changes_output() {
        let m = Model::new(tiny_config(), 2).unwrap();
        let a = m.encode_sequence(&[3, 5, 9, 4]).unwrap();
        let b = m.encode_sequence(&[3, 9, 5, 4]).unwrap();
        assert_ne!(a, b);
        // position 0 and 3 carry the same tokens but see a different context
        assert_ne!(a.row(0), b.row(0));
    }

    #[test]
    fn inference_is_bit_identical() {
        let m = Model::new(tiny_config(), 3).unwrap();
        let a = m.encode_sequence(&[3, 5, 9, 4]).unwrap();
        let b = m.encode_sequence(&[3, 5, 9, 4]).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn pool_span_means() {
        let h = Mat::from_vec(3, 2, vec![1.0, 2.0, 3.0, 6.0, 5.0, 10.0]);
        assert_eq!(pool_span(&h, Span::new(1, 2)).unwrap(), vec![3.0, 6.0]);
        assert_eq!(pool_span(&h, Span::new(0, 2)).unwrap(), vec![2.0, 4.0]);
        assert_eq!(pool_span(&h, Span::new(0, 3)).unwrap(), vec![3.0, 6.0]);
        assert!(matches!(pool_span(&h, Span::new(1, 1)), Err(ModelError::EmptySpan)));
        assert!(matches!(
            pool_span(&h, Span::new(2, 4)),
            Err(ModelError::SpanOutOfRange { .. })
        ));
    }

    #[test]
    fn zero_classifier_is_uniform() {
        let mut m = Model::new(tiny_config(), 4).unwrap();
        m.params.tensor_mut("classifier.weight").unwrap().fill(0.0);
        m.params.tensor_mut("classifier.bias").unwrap().fill(0.0);
        let p = m.classify(&[0.3; 16]).unwrap();
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(matches!(
            m.classify(&[0.0; 8]),
            Err(ModelError::DimMismatch { expected: 16, got: 8 })
        ));
    }

    #[test]
    fn closed_form_softmax() {
        let mut m = Model::new(tiny_config(), 4).unwrap();
        m.params.tensor_mut("classifier.weight").unwrap().fill(0.0);
        m.params
            .tensor_mut("classifier.bias")
            .unwrap()
            .copy_from_slice(&[1.0, 0.0, 0.0]);
        let p = m.classify(&[0.0; 16]).unwrap();
        let expected = [0.5761, 0.2119, 0.2119];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-4);
        }
        // shift invariance
        m.params
            .tensor_mut("classifier.bias")
            .unwrap()
            .copy_from_slice(&[31.0, 30.0, 30.0]);
        let q = m.classify(&[0.0; 16]).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn untied_head_adds_output_matrix() {
        let tied = Model::new(tiny_config(), 1).unwrap();
        let mut cfg = tiny_config();
        cfg.tie_mslm_head = false;
        let untied = Model::new(cfg, 1).unwrap();
        assert_eq!(untied.param_count() - tied.param_count(), 20 * 8);
    }

    #[test]
    fn from_parts_names_mismatched_tensor() {
        let m = Model::new(tiny_config(), 1).unwrap();
        let mut cfg = tiny_config();
        cfg.encoder.d_ff = 24;
        let err = Model::from_parts(cfg, m.params.clone()).unwrap_err();
        assert!(err.to_string().contains("layer0.ffn.w1"), "{err}");
    }
}
