//! The periodic-pattern forecaster: embedding, stacked periodic blocks and a
//! causally masked decoder.

mod checkpoint;
pub mod layers;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use crate::spectral::{detect_periods, PeriodEntry, PeriodSet, SpectralError};

pub use checkpoint::{CheckpointMeta, CHECKPOINT_MAGIC};
use layers::{
    adaptive_aggregate, dropout, inception_2d, inverse_reshape, masked_self_attention,
    pad_and_reshape, positional_encoding, AggregatorVars, AttentionVars,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("expected input [B, {t}, {c}], got {got:?}")]
    InputShape { t: usize, c: usize, got: Vec<usize> },
    #[error("non-finite values after {stage}")]
    NonFinite { stage: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which parts of the network are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Periodic blocks followed directly by the output head on the forecast region.
    PeriodicOnly,
    /// Decoder conditioned on the embedding of the last `H` observed steps.
    DecoderOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_features: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub top_k: usize,
    pub periodic_blocks: usize,
    pub decoder_layers: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub kernel_sizes: Vec<usize>,
    pub dropout: f64,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_features: 12,
            d_model: 64,
            d_ff: 128,
            heads: 4,
            top_k: 6,
            periodic_blocks: 3,
            decoder_layers: 2,
            lookback: 30,
            horizon: 15,
            kernel_sizes: vec![1, 3, 5],
            dropout: 0.2,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    pub fn total_len(&self) -> usize {
        self.lookback + self.horizon
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        let counts = [
            ("n_features", self.n_features),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("heads", self.heads),
            ("top_k", self.top_k),
            ("periodic_blocks", self.periodic_blocks),
            ("decoder_layers", self.decoder_layers),
            ("horizon", self.horizon),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be >= 1"));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            ));
        }
        if self.lookback < self.horizon {
            return bad(format!(
                "lookback {} shorter than horizon {}",
                self.lookback, self.horizon
            ));
        }
        if self.top_k > self.total_len() / 2 {
            return bad(format!(
                "top_k {} exceeds (T+H)/2 = {}",
                self.top_k,
                self.total_len() / 2
            ));
        }
        if self.kernel_sizes.is_empty() || self.kernel_sizes.iter().any(|r| r % 2 == 0) {
            return bad(format!(
                "kernel sizes must be a non-empty set of odd sizes, got {:?}",
                self.kernel_sizes
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct BlockIds {
    kernels: Vec<ParamId>,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct LayerIds {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    ff_w1: ParamId,
    ff_b1: ParamId,
    ff_w2: ParamId,
    ff_b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

#[derive(Debug, Clone)]
struct Ids {
    embed: ParamId,
    blocks: Vec<BlockIds>,
    query: Option<ParamId>,
    layers: Vec<LayerIds>,
    head_w: ParamId,
    head_b: ParamId,
}

/// Per-block diagnostics of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    pub periods: Vec<PeriodSet>,
    /// `[B, k]` fusion weights of each block.
    pub fusion_weights: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct PPTNet {
    pub config: ModelConfig,
    pub store: ParamStore,
    ids: Ids,
}

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, -a, a, rng)
}

impl PPTNet {
    /// Builds a network with seeded random initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let (c, d, k, ff) = (config.n_features, config.d_model, config.top_k, config.d_ff);
        let dense = |s: &mut ParamStore, name: String, i: usize, o: usize, rng: &mut ChaCha8Rng| {
            s.add(name, glorot(&[i, o], i, o, rng))
        };

        let embed = dense(&mut s, "embed.w".into(), c, d, &mut rng);
        let mut blocks = Vec::new();
        if config.variant != Variant::DecoderOnly {
            for bi in 0..config.periodic_blocks {
                let kernels = config
                    .kernel_sizes
                    .iter()
                    .map(|&r| {
                        let a = (3.0 / (d * r * r) as f64).sqrt();
                        s.add(
                            format!("block{bi}.conv{r}"),
                            Tensor::uniform(&[d, d, r, r], -a, a, &mut rng),
                        )
                    })
                    .collect();
                blocks.push(BlockIds {
                    kernels,
                    w1: dense(&mut s, format!("block{bi}.agg.w1"), k, k, &mut rng),
                    b1: s.add(format!("block{bi}.agg.b1"), Tensor::full(&[k], 0.1)),
                    w2: dense(&mut s, format!("block{bi}.agg.w2"), k, k, &mut rng),
                    b2: s.add(format!("block{bi}.agg.b2"), Tensor::zeros(&[k])),
                });
            }
        }
        let mut query = None;
        let mut layers = Vec::new();
        if config.variant != Variant::PeriodicOnly {
            query = Some(s.add(
                "decoder.query",
                Tensor::randn(&[config.horizon, d], 0.1, &mut rng),
            ));
            for li in 0..config.decoder_layers {
                let p = |n: &str| format!("dec{li}.{n}");
                layers.push(LayerIds {
                    wq: dense(&mut s, p("wq"), d, d, &mut rng),
                    wk: dense(&mut s, p("wk"), d, d, &mut rng),
                    wv: dense(&mut s, p("wv"), d, d, &mut rng),
                    wo: dense(&mut s, p("wo"), d, d, &mut rng),
                    bo: s.add(p("bo"), Tensor::zeros(&[d])),
                    ln1_g: s.add(p("ln1.g"), Tensor::ones(&[d])),
                    ln1_b: s.add(p("ln1.b"), Tensor::zeros(&[d])),
                    ff_w1: dense(&mut s, p("ff.w1"), d, ff, &mut rng),
                    ff_b1: s.add(p("ff.b1"), Tensor::zeros(&[ff])),
                    ff_w2: dense(&mut s, p("ff.w2"), ff, d, &mut rng),
                    ff_b2: s.add(p("ff.b2"), Tensor::zeros(&[d])),
                    ln2_g: s.add(p("ln2.g"), Tensor::ones(&[d])),
                    ln2_b: s.add(p("ln2.b"), Tensor::zeros(&[d])),
                });
            }
        }
        let head_w = dense(&mut s, "head.w".into(), d, c, &mut rng);
        let head_b = s.add("head.b", Tensor::zeros(&[c]));
        let ids = Ids {
            embed,
            blocks,
            query,
            layers,
            head_w,
            head_b,
        };
        Ok(PPTNet {
            config,
            store: s,
            ids,
        })
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.store.find(name).map(|id| &self.store.get(id).value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.store
            .find(name)
            .map(|id| &mut self.store.get_mut(id).value)
    }

    /// `x·W_e + PE`: `[B, T, C]` → `[B, T, d]`.
    pub fn embed(&self, tape: &mut Tape, x: Var) -> Result<Var, ModelError> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.config.n_features {
            return Err(ModelError::InputShape {
                t: self.config.lookback,
                c: self.config.n_features,
                got: shape,
            });
        }
        let w = tape.param(&self.store, self.ids.embed);
        let proj = tape.matmul(x, w)?;
        let pe = tape.constant(positional_encoding(shape[1], self.config.d_model));
        Ok(tape.add(proj, pe)?)
    }

    /// One periodic block on `x: [B, L, d]` with periods detected from `x` itself.
    pub fn periodic_block(
        &self,
        tape: &mut Tape,
        index: usize,
        x: Var,
    ) -> Result<(Var, PeriodSet, Var), ModelError> {
        let block = &self.ids.blocks[index];
        let len = tape.shape(x)[1];
        let periods = fill_periods(
            detect_periods(tape.value(x), self.config.top_k)?,
            self.config.top_k,
        );
        let kernels: Vec<Var> = block
            .kernels
            .iter()
            .map(|&id| tape.param(&self.store, id))
            .collect();
        let mut branches = Vec::with_capacity(periods.entries.len());
        for e in &periods.entries {
            let grid = pad_and_reshape(tape, x, e.period)?;
            let feat = inception_2d(tape, grid, &kernels)?;
            branches.push(inverse_reshape(tape, feat, len)?);
        }
        let amplitudes = tape.spectral_amplitude(x, &periods.frequencies())?;
        let net = AggregatorVars {
            w1: tape.param(&self.store, block.w1),
            b1: tape.param(&self.store, block.b1),
            w2: tape.param(&self.store, block.w2),
            b2: tape.param(&self.store, block.b2),
        };
        let (fused, weights) = adaptive_aggregate(tape, &branches, amplitudes, net)?;
        Ok((tape.add(fused, x)?, periods, weights))
    }

    /// Runs the decoder layers on queries `q: [B, H, d]`.
    pub fn decode<R: Rng>(
        &self,
        tape: &mut Tape,
        q: Var,
        mut rng: Option<&mut R>,
    ) -> Result<Var, ModelError> {
        let mut h = q;
        for (li, l) in self.ids.layers.iter().enumerate() {
            let mut p = |id| tape.param(&self.store, id);
            let vars = AttentionVars {
                wq: p(l.wq),
                wk: p(l.wk),
                wv: p(l.wv),
                wo: p(l.wo),
                bo: p(l.bo),
            };
            let (g1, b1, fw1, fb1, fw2, fb2, g2, b2) = (
                p(l.ln1_g),
                p(l.ln1_b),
                p(l.ff_w1),
                p(l.ff_b1),
                p(l.ff_w2),
                p(l.ff_b2),
                p(l.ln2_g),
                p(l.ln2_b),
            );
            let attn = masked_self_attention(tape, h, self.config.heads, vars)?;
            let attn = dropout(tape, attn, self.config.dropout, rng.as_deref_mut())?;
            let res = tape.add(h, attn)?;
            let h1 = tape.layer_norm(res, g1, b1)?;
            let f = tape.linear(h1, fw1, Some(fb1))?;
            let f = tape.relu(f);
            let f = tape.linear(f, fw2, Some(fb2))?;
            let f = dropout(tape, f, self.config.dropout, rng.as_deref_mut())?;
            let res = tape.add(h1, f)?;
            h = tape.layer_norm(res, g2, b2)?;
            check_finite(tape, h, &format!("decoder layer {li}"))?;
        }
        Ok(h)
    }

    /// Forecast `[B, H, C]` in standardized units. Dropout is active only when `rng` is given.
    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        x: Var,
        rng: Option<&mut R>,
    ) -> Result<Var, ModelError> {
        self.forward_traced(tape, x, rng).map(|(y, _)| y)
    }

    pub fn forward_traced<R: Rng>(
        &self,
        tape: &mut Tape,
        x: Var,
        rng: Option<&mut R>,
    ) -> Result<(Var, ForwardTrace), ModelError> {
        let cfg = &self.config;
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != cfg.lookback || shape[2] != cfg.n_features {
            return Err(ModelError::InputShape {
                t: cfg.lookback,
                c: cfg.n_features,
                got: shape,
            });
        }
        check_finite(tape, x, "input")?;
        let emb = self.embed(tape, x)?;
        check_finite(tape, emb, "embedding")?;
        let mut trace = ForwardTrace::default();

        let queries_base = match cfg.variant {
            Variant::DecoderOnly => tape.narrow(emb, 1, cfg.lookback - cfg.horizon, cfg.horizon)?,
            Variant::Full | Variant::PeriodicOnly => {
                let mut h = tape.pad_zeros(emb, 1, cfg.horizon)?;
                for bi in 0..self.ids.blocks.len() {
                    let (out, periods, weights) = self.periodic_block(tape, bi, h)?;
                    check_finite(tape, out, &format!("periodic block {bi}"))?;
                    trace.periods.push(periods);
                    trace.fusion_weights.push(tape.value(weights).clone());
                    h = out;
                }
                tape.narrow(h, 1, cfg.lookback, cfg.horizon)?
            }
        };

        let features = match self.ids.query {
            Some(qid) => {
                let q0 = tape.param(&self.store, qid);
                let q = tape.add(queries_base, q0)?;
                self.decode(tape, q, rng)?
            }
            None => queries_base,
        };
        let w = tape.param(&self.store, self.ids.head_w);
        let b = tape.param(&self.store, self.ids.head_b);
        let y = tape.linear(features, w, Some(b))?;
        check_finite(tape, y, "output head")?;
        Ok((y, trace))
    }

    /// Inference without dropout.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = self.forward::<ChaCha8Rng>(&mut tape, xv, None)?;
        Ok(tape.value(y).clone())
    }
}

/// Pads a short selection with the lowest unused admissible frequencies at weight 0.
fn fill_periods(mut set: PeriodSet, k: usize) -> PeriodSet {
    if set.entries.len() < k {
        warn!(
            "block input has {} usable frequencies, padding to {k}",
            set.entries.len()
        );
        let used = set.frequencies();
        let extra: Vec<usize> = (1..=set.length / 2)
            .filter(|f| !used.contains(f))
            .take(k - set.entries.len())
            .collect();
        for f in extra {
            set.entries.push(PeriodEntry {
                frequency: f,
                period: set.length / f,
                weight: 0.0,
            });
        }
    }
    set
}

fn check_finite(tape: &Tape, v: Var, stage: &str) -> Result<(), ModelError> {
    if tape.value(v).all_finite() {
        Ok(())
    } else {
        Err(ModelError::NonFinite {
            stage: stage.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig {
            n_features: 3,
            d_model: 8,
            d_ff: 16,
            heads: 2,
            top_k: 2,
            periodic_blocks: 2,
            decoder_layers: 2,
            lookback: 16,
            horizon: 4,
            kernel_sizes: vec![1, 3],
            dropout: 0.2,
            variant,
        }
    }

    fn input(b: usize, t: usize, c: usize, seed: u64) -> Tensor {
        Tensor::randn(&[b, t, c], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let mut c = tiny(Variant::Full);
        c.heads = 3;
        assert!(PPTNet::new(c, 0).is_err());
        let mut c = tiny(Variant::Full);
        c.kernel_sizes = vec![2];
        assert!(c.validate().is_err());
        let mut c = tiny(Variant::Full);
        c.top_k = 11;
        assert!(c.validate().is_err());
        let mut c = tiny(Variant::Full);
        c.lookback = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn output_shapes_for_all_variants() {
        for v in [Variant::Full, Variant::PeriodicOnly, Variant::DecoderOnly] {
            let net = PPTNet::new(tiny(v), 1).unwrap();
            let y = net.predict(&input(3, 16, 3, 2)).unwrap();
            assert_eq!(y.shape(), &[3, 4, 3]);
        }
        let net = PPTNet::new(tiny(Variant::Full), 1).unwrap();
        assert!(matches!(
            net.predict(&input(1, 15, 3, 2)),
            Err(ModelError::InputShape { .. })
        ));
    }

    #[test]
    fn embedding_of_zero_weights_is_positional_encoding() {
        let mut net = PPTNet::new(tiny(Variant::Full), 1).unwrap();
        net.param_mut("embed.w")
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
        let mut tape = Tape::new();
        let x = tape.constant(input(2, 16, 3, 4));
        let e = net.embed(&mut tape, x).unwrap();
        let pe = positional_encoding(16, 8);
        for b in 0..2 {
            assert_eq!(tape.value(e).index_axis0(b), pe);
        }
    }

    #[test]
    fn zero_kernels_make_blocks_identity() {
        let mut net = PPTNet::new(tiny(Variant::Full), 1).unwrap();
        for p in net.store.iter_mut().filter(|p| p.name.contains(".conv")) {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut tape = Tape::new();
        let x = tape.constant(input(2, 20, 8, 5));
        for bi in 0..2 {
            let (y, _, w) = net.periodic_block(&mut tape, bi, x).unwrap();
            assert_eq!(tape.value(y), tape.value(x));
            for row in tape.value(w).data().chunks(2) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eval_is_deterministic_and_dropout_is_seeded() {
        let net = PPTNet::new(tiny(Variant::Full), 7).unwrap();
        let x = input(2, 16, 3, 8);
        assert_eq!(net.predict(&x).unwrap(), net.predict(&x).unwrap());
        let run = |seed| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = net.forward(&mut tape, xv, Some(&mut rng)).unwrap();
            tape.value(y).clone()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
        let other = PPTNet::new(tiny(Variant::Full), 7).unwrap();
        assert_eq!(other.store, net.store);
    }

    #[test]
    fn every_parameter_gets_a_finite_gradient() {
        let mut net = PPTNet::new(tiny(Variant::Full), 3).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(input(2, 16, 3, 9));
        let y = net.forward::<ChaCha8Rng>(&mut tape, x, None).unwrap();
        let sq = tape.mul(y, y).unwrap();
        let loss = tape.mean(sq);
        net.store.zero_grad();
        tape.backward(loss, &mut net.store).unwrap();
        for p in net.store.iter() {
            assert!(p.grad.all_finite(), "{}", p.name);
        }
        let live = net
            .store
            .iter()
            .filter(|p| p.grad.data().iter().any(|g| *g != 0.0))
            .count();
        // a fusion-net ReLU may be inactive on a given batch; everything else must be reached
        let dead: Vec<_> = net
            .store
            .iter()
            .filter(|p| p.grad.data().iter().all(|g| *g == 0.0))
            .map(|p| p.name.clone())
            .collect();
        assert!(live + 2 >= net.store.len(), "{dead:?}");
    }

    #[test]
    fn non_finite_input_names_the_stage() {
        let net = PPTNet::new(tiny(Variant::Full), 3).unwrap();
        let mut x = input(1, 16, 3, 1);
        x.data_mut()[5] = f64::NAN;
        match net.predict(&x) {
            Err(ModelError::NonFinite { stage }) => assert_eq!(stage, "input"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn short_spectra_are_padded() {
        let set = PeriodSet {
            length: 20,
            k: 3,
            entries: vec![PeriodEntry {
                frequency: 2,
                period: 10,
                weight: 1.0,
            }],
        };
        let filled = fill_periods(set, 3);
        assert_eq!(filled.frequencies(), vec![2, 1, 3]);
        assert_eq!(filled.periods(), vec![10, 20, 6]);
    }
}
