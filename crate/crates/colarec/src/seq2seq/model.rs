//! The encoder-decoder scorer. A small pre-norm transformer (RMSNorm,
//! SiLU feed-forward, learned positions, no biases) built on the autodiff
//! graph: the encoder reads an input token sequence, the decoder emits one
//! latent per identifier position, and a per-position codebook inner
//! product turns latents into token distributions.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Seq2SeqError;
use crate::numerics::checkpoint;
use crate::numerics::{BoundParams, Graph, ParamId, ParamStore, Real, Tensor, Var};

const NORM_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

/// Architecture hyperparameters; `l` and `k` mirror the identifier scheme.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub l: usize,
    pub k: usize,
    pub m: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
}

impl ModelConfig {
    fn validate(&self) {
        assert!(self.m % self.n_heads == 0, "m must divide into heads");
        assert!(self.l >= 1 && self.k >= 1 && self.vocab_size >= 1);
        assert!(self.enc_layers >= 1 && self.dec_layers >= 1 && self.max_len >= 1);
    }
}

#[derive(Clone, Copy, Debug)]
struct AttnIds {
    gamma: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct FfnIds {
    gamma: ParamId,
    w1: ParamId,
    w2: ParamId,
}

#[derive(Clone, Debug)]
struct EncLayerIds {
    attn: AttnIds,
    ffn: FfnIds,
}

#[derive(Clone, Debug)]
struct DecLayerIds {
    self_attn: AttnIds,
    cross_attn: AttnIds,
    ffn: FfnIds,
}

#[derive(Clone, Debug)]
struct ModelIds {
    tok: ParamId,
    pos_enc: ParamId,
    pos_dec: ParamId,
    bos: ParamId,
    enc_final: ParamId,
    dec_final: ParamId,
    codebooks: Vec<ParamId>,
    enc: Vec<EncLayerIds>,
    dec: Vec<DecLayerIds>,
}

/// Model parameters plus the plumbing to run forward passes on a graph.
#[derive(Clone, Debug)]
pub struct Seq2SeqModel<F: Real> {
    pub cfg: ModelConfig,
    pub store: ParamStore<F>,
    ids: ModelIds,
}

impl<F: Real> Seq2SeqModel<F> {
    /// Fresh model with N(0, 0.02) weights and unit norm gains.
    pub fn init(cfg: ModelConfig, seed: u64) -> Seq2SeqModel<F> {
        cfg.validate();
        fn gauss<F: Real>(
            store: &mut ParamStore<F>,
            rng: &mut ChaCha8Rng,
            name: &str,
            shape: &[usize],
        ) -> ParamId {
            let normal = Normal::new(0.0f64, INIT_STD).expect("valid std");
            let mut t = Tensor::<F>::zeros(shape);
            for x in t.data_mut() {
                *x = F::from_f64(normal.sample(rng));
            }
            store.insert(name, t).expect("unique param name")
        }
        fn ones<F: Real>(store: &mut ParamStore<F>, name: &str, dim: usize) -> ParamId {
            store
                .insert(name, Tensor::filled(&[dim], F::ONE))
                .expect("unique param name")
        }
        fn attn_ids<F: Real>(
            store: &mut ParamStore<F>,
            rng: &mut ChaCha8Rng,
            prefix: &str,
            m: usize,
        ) -> AttnIds {
            AttnIds {
                gamma: ones(store, &format!("{prefix}_gamma"), m),
                wq: gauss(store, rng, &format!("{prefix}_wq"), &[m, m]),
                wk: gauss(store, rng, &format!("{prefix}_wk"), &[m, m]),
                wv: gauss(store, rng, &format!("{prefix}_wv"), &[m, m]),
                wo: gauss(store, rng, &format!("{prefix}_wo"), &[m, m]),
            }
        }
        fn ffn_ids<F: Real>(
            store: &mut ParamStore<F>,
            rng: &mut ChaCha8Rng,
            prefix: &str,
            m: usize,
            ffn_dim: usize,
        ) -> FfnIds {
            FfnIds {
                gamma: ones(store, &format!("{prefix}_gamma"), m),
                w1: gauss(store, rng, &format!("{prefix}_w1"), &[m, ffn_dim]),
                w2: gauss(store, rng, &format!("{prefix}_w2"), &[ffn_dim, m]),
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let m = cfg.m;
        let tok = gauss(&mut store, &mut rng, "tok_embedding", &[cfg.vocab_size, m]);
        let pos_enc = gauss(&mut store, &mut rng, "pos_encoder", &[cfg.max_len, m]);
        let pos_dec = gauss(&mut store, &mut rng, "pos_decoder", &[cfg.l, m]);
        let bos = gauss(&mut store, &mut rng, "bos_embedding", &[1, m]);
        let enc = (0..cfg.enc_layers)
            .map(|i| EncLayerIds {
                attn: attn_ids(&mut store, &mut rng, &format!("encoder{i}_attn"), m),
                ffn: ffn_ids(&mut store, &mut rng, &format!("encoder{i}_ffn"), m, cfg.ffn_dim),
            })
            .collect();
        let dec = (0..cfg.dec_layers)
            .map(|i| DecLayerIds {
                self_attn: attn_ids(&mut store, &mut rng, &format!("decoder{i}_self"), m),
                cross_attn: attn_ids(&mut store, &mut rng, &format!("decoder{i}_cross"), m),
                ffn: ffn_ids(&mut store, &mut rng, &format!("decoder{i}_ffn"), m, cfg.ffn_dim),
            })
            .collect();
        let enc_final = ones(&mut store, "encoder_final_gamma", m);
        let dec_final = ones(&mut store, "decoder_final_gamma", m);
        let codebooks = (0..cfg.l)
            .map(|t| gauss(&mut store, &mut rng, &format!("codebook_{t}"), &[cfg.k, m]))
            .collect();

        let meta = Tensor::from_vec(
            &[9],
            [
                cfg.l,
                cfg.k,
                cfg.m,
                cfg.n_heads,
                cfg.enc_layers,
                cfg.dec_layers,
                cfg.ffn_dim,
                cfg.max_len,
                cfg.vocab_size,
            ]
            .iter()
            .map(|&x| F::from_f64(x as f64))
            .collect(),
        )
        .expect("meta shape");
        store.insert("model_meta", meta).expect("unique param name");

        let ids = ModelIds {
            tok,
            pos_enc,
            pos_dec,
            bos,
            enc_final,
            dec_final,
            codebooks,
            enc,
            dec,
        };
        Seq2SeqModel { cfg, store, ids }
    }

    /// The architecture meta record is stored but never trained; exclude it
    /// from optimizer updates by zeroing its gradient slot upstream (it is
    /// never touched by any forward pass, so its gradient is always zero).
    pub fn codebook(&self, t: usize) -> ParamId {
        self.ids.codebooks[t]
    }

    pub fn save(&self, path: &Path) -> Result<(), Seq2SeqError> {
        checkpoint::save(path, &self.store)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Seq2SeqModel<F>, Seq2SeqError> {
        let store: ParamStore<F> = checkpoint::load(path)?;
        Self::from_store(store)
    }

    /// Rebuild the id table from a loaded parameter store.
    pub fn from_store(store: ParamStore<F>) -> Result<Seq2SeqModel<F>, Seq2SeqError> {
        let meta_id = store
            .id_by_name("model_meta")
            .map_err(|_| Seq2SeqError::BadMeta("missing model_meta record".into()))?;
        let meta = store.get(meta_id);
        if meta.numel() != 9 {
            return Err(Seq2SeqError::BadMeta(format!(
                "expected 9 meta values, found {}",
                meta.numel()
            )));
        }
        let at = |i: usize| -> usize { meta.data()[i].to_f64() as usize };
        let cfg = ModelConfig {
            l: at(0),
            k: at(1),
            m: at(2),
            n_heads: at(3),
            enc_layers: at(4),
            dec_layers: at(5),
            ffn_dim: at(6),
            max_len: at(7),
            vocab_size: at(8),
        };
        cfg.validate();
        let id = |name: String| -> Result<ParamId, Seq2SeqError> {
            store
                .id_by_name(&name)
                .map_err(|_| Seq2SeqError::BadMeta(format!("missing parameter {name:?}")))
        };
        let attn = |prefix: String| -> Result<AttnIds, Seq2SeqError> {
            Ok(AttnIds {
                gamma: id(format!("{prefix}_gamma"))?,
                wq: id(format!("{prefix}_wq"))?,
                wk: id(format!("{prefix}_wk"))?,
                wv: id(format!("{prefix}_wv"))?,
                wo: id(format!("{prefix}_wo"))?,
            })
        };
        let ffn = |prefix: String| -> Result<FfnIds, Seq2SeqError> {
            Ok(FfnIds {
                gamma: id(format!("{prefix}_gamma"))?,
                w1: id(format!("{prefix}_w1"))?,
                w2: id(format!("{prefix}_w2"))?,
            })
        };
        let ids = ModelIds {
            tok: id("tok_embedding".into())?,
            pos_enc: id("pos_encoder".into())?,
            pos_dec: id("pos_decoder".into())?,
            bos: id("bos_embedding".into())?,
            enc_final: id("encoder_final_gamma".into())?,
            dec_final: id("decoder_final_gamma".into())?,
            codebooks: (0..cfg.l)
                .map(|t| id(format!("codebook_{t}")))
                .collect::<Result<_, _>>()?,
            enc: (0..cfg.enc_layers)
                .map(|i| {
                    Ok(EncLayerIds {
                        attn: attn(format!("encoder{i}_attn"))?,
                        ffn: ffn(format!("encoder{i}_ffn"))?,
                    })
                })
                .collect::<Result<_, Seq2SeqError>>()?,
            dec: (0..cfg.dec_layers)
                .map(|i| {
                    Ok(DecLayerIds {
                        self_attn: attn(format!("decoder{i}_self"))?,
                        cross_attn: attn(format!("decoder{i}_cross"))?,
                        ffn: ffn(format!("decoder{i}_ffn"))?,
                    })
                })
                .collect::<Result<_, Seq2SeqError>>()?,
        };
        Ok(Seq2SeqModel { cfg, store, ids })
    }

    fn attention(
        &self,
        g: &mut Graph<F>,
        bound: &BoundParams,
        ids: &AttnIds,
        residual: Var,
        kv: Option<Var>,
        mask: Option<Vec<bool>>,
    ) -> Result<Var, Seq2SeqError> {
        let normed = g.rms_norm_rows(residual, bound.var(ids.gamma), NORM_EPS)?;
        let kv_in = kv.unwrap_or(normed);
        let q = g.matmul(normed, bound.var(ids.wq))?;
        let k = g.matmul(kv_in, bound.var(ids.wk))?;
        let v = g.matmul(kv_in, bound.var(ids.wv))?;
        let dh = self.cfg.m / self.cfg.n_heads;
        let mut heads = Vec::with_capacity(self.cfg.n_heads);
        for h in 0..self.cfg.n_heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scaled = g.scale(scores, 1.0 / (dh as f64).sqrt());
            let weights = g.softmax_rows_masked(scaled, mask.clone())?;
            heads.push(g.matmul(weights, vh)?);
        }
        let cat = g.concat_cols(&heads)?;
        let out = g.matmul(cat, bound.var(ids.wo))?;
        Ok(g.add(residual, out)?)
    }

    fn ffn(
        &self,
        g: &mut Graph<F>,
        bound: &BoundParams,
        ids: &FfnIds,
        residual: Var,
    ) -> Result<Var, Seq2SeqError> {
        let normed = g.rms_norm_rows(residual, bound.var(ids.gamma), NORM_EPS)?;
        let hidden = g.matmul(normed, bound.var(ids.w1))?;
        let hidden = g.silu(hidden);
        let out = g.matmul(hidden, bound.var(ids.w2))?;
        Ok(g.add(residual, out)?)
    }

    /// Encode a token sequence. Returns the final hidden sequence `[n, m]`
    /// and the pooled representation h(X) `[m]` (mean over final states).
    pub fn encode(
        &self,
        g: &mut Graph<F>,
        bound: &BoundParams,
        tokens: &[usize],
    ) -> Result<(Var, Var), Seq2SeqError> {
        if tokens.is_empty() {
            return Err(Seq2SeqError::EmptyInput);
        }
        if tokens.len() > self.cfg.max_len {
            return Err(Seq2SeqError::InputTooLong {
                len: tokens.len(),
                max: self.cfg.max_len,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.cfg.vocab_size) {
            return Err(Seq2SeqError::TokenOutOfRange {
                token: bad,
                size: self.cfg.vocab_size,
            });
        }
        let emb = g.row_select(bound.var(self.ids.tok), tokens)?;
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let pos = g.row_select(bound.var(self.ids.pos_enc), &positions)?;
        let mut x = g.add(emb, pos)?;
        for layer in &self.ids.enc {
            x = self.attention(g, bound, &layer.attn, x, None, None)?;
            x = self.ffn(g, bound, &layer.ffn, x)?;
        }
        let out = g.rms_norm_rows(x, bound.var(self.ids.enc_final), NORM_EPS)?;
        let pooled = g.mean_rows(out)?;
        Ok((out, pooled))
    }

    /// Teacher-forced decoder states for a token prefix: returns `[t+1, m]`
    /// latents where row s is d_{s+1}, conditioned on BOS plus the first s
    /// prefix tokens. The prefix may hold at most l-1 tokens.
    pub fn decode_states(
        &self,
        g: &mut Graph<F>,
        bound: &BoundParams,
        enc_seq: Var,
        prefix: &[usize],
    ) -> Result<Var, Seq2SeqError> {
        if prefix.len() > self.cfg.l - 1 {
            return Err(Seq2SeqError::PrefixTooLong {
                len: prefix.len(),
                max: self.cfg.l - 1,
            });
        }
        if let Some(&bad) = prefix.iter().find(|&&z| z >= self.cfg.k) {
            return Err(Seq2SeqError::GidTokenOutOfRange {
                token: bad,
                k: self.cfg.k,
            });
        }
        let t = prefix.len() + 1;
        // decoder inputs: BOS, then each prefix token embedded from the
        // codebook of the position it was generated at
        let mut rows = Vec::with_capacity(t);
        rows.push(bound.var(self.ids.bos));
        for (j, &z) in prefix.iter().enumerate() {
            rows.push(g.row_select(bound.var(self.ids.codebooks[j]), &[z])?);
        }
        let stacked = g.concat_rows(&rows)?;
        let positions: Vec<usize> = (0..t).collect();
        let pos = g.row_select(bound.var(self.ids.pos_dec), &positions)?;
        let mut x = g.add(stacked, pos)?;

        let n_enc = g.value(enc_seq).rows();
        let causal: Vec<bool> = (0..t * t).map(|idx| idx % t <= idx / t).collect();
        for layer in &self.ids.dec {
            x = self.attention(g, bound, &layer.self_attn, x, None, Some(causal.clone()))?;
            // cross attention reads the full encoder sequence
            let _ = n_enc;
            x = self.attention(g, bound, &layer.cross_attn, x, Some(enc_seq), None)?;
            x = self.ffn(g, bound, &layer.ffn, x)?;
        }
        Ok(g.rms_norm_rows(x, bound.var(self.ids.dec_final), NORM_EPS)?)
    }

    /// Latent for a single next position: d_{t} with t = prefix length + 1.
    pub fn decode_step(
        &self,
        g: &mut Graph<F>,
        bound: &BoundParams,
        enc_seq: Var,
        prefix: &[usize],
    ) -> Result<Var, Seq2SeqError> {
        let states = self.decode_states(g, bound, enc_seq, prefix)?;
        Ok(g.row_select(states, &[prefix.len()])?)
    }

    /// Logits over the K tokens of position `t` (0-based) for a single
    /// latent row `d` of shape `[1, m]`: `d · E_t^T`, returned as `[K]`.
    pub fn position_logits(
        &self,
        g: &mut Graph<F>,
        bound: &BoundParams,
        d: Var,
        t: usize,
    ) -> Result<Var, Seq2SeqError> {
        let et = g.transpose(bound.var(self.ids.codebooks[t]))?;
        let logits = g.matmul(d, et)?;
        Ok(g.reshape(logits, &[self.cfg.k])?)
    }

    /// Probabilities over the K tokens of position `t` for latent `d`.
    pub fn token_distribution(
        &self,
        g: &mut Graph<F>,
        bound: &BoundParams,
        d: Var,
        t: usize,
    ) -> Result<Var, Seq2SeqError> {
        let logits = self.position_logits(g, bound, d, t)?;
        Ok(g.softmax(logits)?)
    }

    /// Log-probabilities over the K tokens of position `t` for latent `d`.
    pub fn token_log_distribution(
        &self,
        g: &mut Graph<F>,
        bound: &BoundParams,
        d: Var,
        t: usize,
    ) -> Result<Var, Seq2SeqError> {
        let logits = self.position_logits(g, bound, d, t)?;
        Ok(g.log_softmax(logits)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            l: 3,
            k: 4,
            m: 8,
            n_heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            ffn_dim: 16,
            max_len: 12,
        }
    }

    fn forward_h(model: &Seq2SeqModel<f64>, tokens: &[usize]) -> Vec<f64> {
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &model.store);
        let (_, h) = model.encode(&mut g, &bound, tokens).unwrap();
        g.value(h).data().to_vec()
    }

    #[test]
    fn pooled_state_of_single_token_equals_its_final_hidden_state() {
        let model = Seq2SeqModel::<f64>::init(tiny_cfg(), 0);
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &model.store);
        let (seq, h) = model.encode(&mut g, &bound, &[7]).unwrap();
        assert_eq!(g.value(seq).rows(), 1);
        assert_eq!(g.value(seq).row(0), g.value(h).data());
        assert_eq!(g.value(h).numel(), 8);
    }

    #[test]
    fn encoder_hidden_length_matches_input_length() {
        let model = Seq2SeqModel::<f64>::init(tiny_cfg(), 0);
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &model.store);
        let (seq, _) = model.encode(&mut g, &bound, &[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(g.value(seq).shape(), &[5, 8]);
    }

    #[test]
    fn empty_and_overlong_inputs_are_rejected() {
        let model = Seq2SeqModel::<f64>::init(tiny_cfg(), 0);
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &model.store);
        assert!(matches!(
            model.encode(&mut g, &bound, &[]),
            Err(Seq2SeqError::EmptyInput)
        ));
        let long = vec![1usize; 13];
        assert!(matches!(
            model.encode(&mut g, &bound, &long),
            Err(Seq2SeqError::InputTooLong { len: 13, max: 12 })
        ));
    }

    #[test]
    fn decoder_is_causal() {
        let model = Seq2SeqModel::<f64>::init(tiny_cfg(), 1);
        let states = |prefix: &[usize]| -> Vec<Vec<f64>> {
            let mut g = Graph::new();
            let bound = BoundParams::bind(&mut g, &model.store);
            let (seq, _) = model.encode(&mut g, &bound, &[3, 9, 4]).unwrap();
            let s = model.decode_states(&mut g, &bound, seq, prefix).unwrap();
            (0..g.value(s).rows())
                .map(|r| g.value(s).row(r).to_vec())
                .collect()
        };
        let a = states(&[0, 1]);
        let b = states(&[2, 1]); // change z1
        let c = states(&[0, 3]); // change z2
        // d_1 never changes; d_2 changes only with z1; d_3 with either
        assert_eq!(a[0], b[0]);
        assert_eq!(a[0], c[0]);
        assert_ne!(a[1], b[1]);
        assert_eq!(a[1], c[1]);
        assert_ne!(a[2], c[2]);
    }

    #[test]
    fn prefix_longer_than_l_minus_one_is_rejected() {
        let model = Seq2SeqModel::<f64>::init(tiny_cfg(), 0);
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &model.store);
        let (seq, _) = model.encode(&mut g, &bound, &[1]).unwrap();
        match model.decode_states(&mut g, &bound, seq, &[0, 1, 2]) {
            Err(Seq2SeqError::PrefixTooLong { len: 3, max: 2 }) => {}
            other => panic!("expected prefix error, got {other:?}"),
        }
    }

    #[test]
    fn token_distribution_is_normalized_and_positive() {
        let model = Seq2SeqModel::<f64>::init(tiny_cfg(), 3);
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &model.store);
        let (seq, _) = model.encode(&mut g, &bound, &[2, 8]).unwrap();
        for t in 0..3 {
            let prefix: Vec<usize> = (0..t).map(|j| j % 4).collect();
            let d = model.decode_step(&mut g, &bound, seq, &prefix).unwrap();
            let p = model.token_distribution(&mut g, &bound, d, t).unwrap();
            let vals = g.value(p).data();
            let sum: f64 = vals.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "position {t}: sum {sum}");
            assert!(vals.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn orthogonal_latent_gives_uniform_distribution() {
        // zero the latent's interaction: if d is orthogonal to every
        // codebook row the logits are all equal, so probabilities are 1/K;
        // easiest orthogonal vector is d = 0
        let model = Seq2SeqModel::<f64>::init(tiny_cfg(), 0);
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &model.store);
        let d = g.constant(Tensor::zeros(&[1, 8]));
        let p = model.token_distribution(&mut g, &bound, d, 0).unwrap();
        for &x in g.value(p).data() {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn two_token_softmax_matches_hand_value() {
        // d=(1,0...), codebook rows e0=(1,0,..), e1=(0,1,0..):
        // logits (1, 0) → p = (e/(e+1), 1/(e+1))
        let mut cfg = tiny_cfg();
        cfg.k = 2;
        let mut model = Seq2SeqModel::<f64>::init(cfg, 0);
        let cb = model.codebook(0);
        let t = model.store.get_mut(cb);
        for x in t.data_mut() {
            *x = 0.0;
        }
        *t.row_mut(0).first_mut().unwrap() = 1.0;
        t.row_mut(1)[1] = 1.0;
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &model.store);
        let mut d = Tensor::<f64>::zeros(&[1, 8]);
        d.row_mut(0)[0] = 1.0;
        let dv = g.constant(d);
        let p = model.token_distribution(&mut g, &bound, dv, 0).unwrap();
        let e = std::f64::consts::E;
        let want0 = e / (e + 1.0);
        let got = g.value(p).data();
        assert!((got[0] - want0).abs() < 1e-12);
        assert!((got[1] - (1.0 - want0)).abs() < 1e-12);
        assert!((got[0] - 0.7311).abs() < 5e-5);
    }

    #[test]
    fn checkpoint_round_trip_preserves_everything() {
        let model = Seq2SeqModel::<f64>::init(tiny_cfg(), 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.save(&path).unwrap();
        let loaded = Seq2SeqModel::<f64>::load(&path).unwrap();
        assert_eq!(loaded.cfg, model.cfg);
        let h1 = forward_h(&model, &[1, 5, 9]);
        let h2 = forward_h(&loaded, &[1, 5, 9]);
        assert_eq!(h1, h2);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = Seq2SeqModel::<f32>::init(tiny_cfg(), 5);
        let b = Seq2SeqModel::<f32>::init(tiny_cfg(), 5);
        let c = Seq2SeqModel::<f32>::init(tiny_cfg(), 6);
        for (name, t) in a.store.iter() {
            let tb = b.store.get(b.store.id_by_name(name).unwrap());
            assert_eq!(t.data(), tb.data(), "{name}");
        }
        let tok_a = a.store.get(a.store.id_by_name("tok_embedding").unwrap());
        let tok_c = c.store.get(c.store.id_by_name("tok_embedding").unwrap());
        assert_ne!(tok_a.data(), tok_c.data());
    }
}
