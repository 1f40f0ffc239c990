//! Synthetic corpora with planted layer signals.
//!
//! Every user gets a latent mean vector per layer; token vectors are that
//! mean plus a fixed layer offset plus i.i.d. Gaussian token noise. The
//! outcome is linear in the *stored* pooled vectors (sums read back from
//! f32, divided by the token count) plus Gaussian noise, so the Bayes MSE
//! of the ridge model family is exactly `noise_sigma²`.
//!
//! Unless raw tokens are requested, message sums are drawn directly from
//! their exact distribution (`T·mean + √T·σ_tok·z`), and at user
//! granularity only the user total is drawn. The three modes consume the
//! random stream differently, so the same seed gives different corpora
//! across modes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::corpus::{
    sidecar_path, Corpus, EmbeddingStore, Granularity, Manifest, MessageEmbeddings, OutcomeTable, Records, Split,
    UserEmbeddings, UserMessages,
};
use crate::error::{Error, Result};
use crate::report::kv_block;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TokenDistribution {
    /// Layers independent: non-signal layers carry no information.
    GaussianIid,
    /// AR(1) across layers: latent(l) = rho·latent(l-1) + √(1-rho²)·scale·z.
    LayerwiseShift { rho: f64 },
}

impl fmt::Display for TokenDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenDistribution::GaussianIid => f.write_str("gaussian_iid"),
            TokenDistribution::LayerwiseShift { rho } => write!(f, "layerwise_shift:{rho}"),
        }
    }
}

impl FromStr for TokenDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "gaussian_iid" => Ok(TokenDistribution::GaussianIid),
            None if s == "layerwise_shift" => Ok(TokenDistribution::LayerwiseShift { rho: 0.8 }),
            Some(("layerwise_shift", rho)) => rho
                .parse()
                .map(|rho| TokenDistribution::LayerwiseShift { rho })
                .map_err(|_| Error::Usage(format!("invalid rho {rho:?}"))),
            _ => Err(Error::Usage(format!(
                "unknown distribution {s:?} (gaussian_iid | layerwise_shift[:rho])"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SignalWeights {
    /// `c` times the mean of the pooled vector's entries (each weight c/H).
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalTerm {
    pub layer: usize,
    pub weights: SignalWeights,
}

/// `layer:c` (scalar weight), e.g. `7:1.0`.
impl FromStr for SignalTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (l, c) = s
            .split_once(':')
            .ok_or_else(|| Error::Usage(format!("signal term {s:?} must look like LAYER:WEIGHT")))?;
        let layer = l
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("invalid signal layer {l:?}")))?;
        let c = c
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("invalid signal weight {c:?}")))?;
        Ok(SignalTerm {
            layer,
            weights: SignalWeights::Scalar(c),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_users: usize,
    /// Inclusive range.
    pub messages_per_user: (u32, u32),
    /// Inclusive range.
    pub tokens_per_message: (u32, u32),
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub signal: Vec<SignalTerm>,
    pub noise_sigma: f64,
    pub distribution: TokenDistribution,
    /// Standard deviation of user latent entries.
    pub feature_scale: f64,
    /// Standard deviation of per-token noise entries.
    pub token_sigma: f64,
    /// Standard deviation of the per-layer offset entries (shared by all
    /// users of a world).
    pub layer_offset_scale: f64,
    pub granularity: Granularity,
    /// Draw and retain every token vector (small corpora only).
    pub keep_tokens: bool,
    /// Adds `strength · lin²` to the linear signal.
    pub nonlinear: Option<f64>,
    pub id_prefix: String,
    pub model_name: String,
    pub seed: u64,
    /// Seeds the layer offsets, so train and test corpora drawn with
    /// different `seed`s share one generative world.
    pub world_seed: u64,
}

impl SynthSpec {
    /// Defaults: 25–50 messages of 40–80 tokens (every user clears the
    /// 1000-token filter), latent scale 10, token noise 10, i.i.d. layers.
    pub fn new(n_users: usize, num_layers: usize, hidden_dim: usize) -> Self {
        SynthSpec {
            n_users,
            messages_per_user: (25, 50),
            tokens_per_message: (40, 80),
            num_layers,
            hidden_dim,
            signal: Vec::new(),
            noise_sigma: 0.0,
            distribution: TokenDistribution::GaussianIid,
            feature_scale: 10.0,
            token_sigma: 10.0,
            layer_offset_scale: 1.0,
            granularity: Granularity::User,
            keep_tokens: false,
            nonlinear: None,
            id_prefix: "u".into(),
            model_name: "synthetic".into(),
            seed: 0,
            world_seed: 0,
        }
    }

    /// Add a scalar-weight signal term on `layer`.
    pub fn with_signal(mut self, layer: usize, weight: f64) -> Self {
        self.signal.push(SignalTerm {
            layer,
            weights: SignalWeights::Scalar(weight),
        });
        self
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(m));
        if self.n_users == 0 {
            return bad("n_users must be >= 1".into());
        }
        if self.num_layers == 0 || self.num_layers > u16::MAX as usize {
            return bad(format!("num_layers {} out of range", self.num_layers));
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be >= 1".into());
        }
        let (m0, m1) = self.messages_per_user;
        let (t0, t1) = self.tokens_per_message;
        if m0 == 0 || m0 > m1 || t0 == 0 || t0 > t1 {
            return bad("message and token ranges must be non-empty and positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        for (name, v) in [
            ("feature_scale", self.feature_scale),
            ("token_sigma", self.token_sigma),
            ("layer_offset_scale", self.layer_offset_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if let TokenDistribution::LayerwiseShift { rho } = self.distribution {
            if !(-1.0..=1.0).contains(&rho) {
                return bad(format!("rho must be in [-1, 1], got {rho}"));
            }
        }
        for t in &self.signal {
            if t.layer == 0 || t.layer > self.num_layers {
                return bad(format!("signal layer {} outside [1, {}]", t.layer, self.num_layers));
            }
            if let SignalWeights::Vector(v) = &t.weights {
                if v.len() != self.hidden_dim {
                    return bad(format!(
                        "signal weight vector for layer {} has length {}, expected {}",
                        t.layer,
                        v.len(),
                        self.hidden_dim
                    ));
                }
            }
        }
        Ok(())
    }

    /// Resolved `(layer, weight vector)` terms.
    pub fn weight_vectors(&self) -> Vec<(usize, Vec<f64>)> {
        self.signal
            .iter()
            .map(|t| {
                let w = match &t.weights {
                    SignalWeights::Scalar(c) => vec![c / self.hidden_dim as f64; self.hidden_dim],
                    SignalWeights::Vector(v) => v.clone(),
                };
                (t.layer, w)
            })
            .collect()
    }

    fn latent_correlation(&self, a: usize, b: usize) -> f64 {
        match self.distribution {
            TokenDistribution::GaussianIid => (a == b) as u8 as f64,
            TokenDistribution::LayerwiseShift { rho } => rho.powi(a.abs_diff(b) as i32),
        }
    }
}

/// What the generator knows about the corpus it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    /// `[user][layer - 1]` pooled vectors exactly as the aggregator
    /// computes them from the stored sums.
    pub pooled: Vec<Vec<Vec<f64>>>,
    pub weights: Vec<(usize, Vec<f64>)>,
    /// Noise-free outcome per user.
    pub signal: Vec<f64>,
    pub noise: Vec<f64>,
    pub noise_sigma: f64,
    /// `noise_sigma²`.
    pub bayes_mse: f64,
    /// Analytic variance of the linear signal across users (token noise
    /// uses the empirical mean of 1/T over generated users).
    pub signal_variance: f64,
}

/// Raw per-token vectors of one user, grouped by message; each token is
/// `L·H` values, layer-major.
#[derive(Debug, Clone, PartialEq)]
pub struct UserTokens {
    pub user_id: String,
    pub messages: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub store: EmbeddingStore,
    pub corpus: Corpus,
    pub truth: SynthTruth,
    pub tokens: Option<Vec<UserTokens>>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let (l, h) = (spec.num_layers, spec.hidden_dim);
    let lh = l * h;

    let mut world = ChaCha8Rng::seed_from_u64(spec.world_seed);
    let offsets: Vec<f64> = (0..lh).map(|_| spec.layer_offset_scale * normal(&mut world)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = (spec.n_users.max(1) - 1).to_string().len().max(5);
    let mut user_records = Vec::with_capacity(spec.n_users);
    let mut message_records = Vec::new();
    let mut tokens_out = spec.keep_tokens.then(Vec::new);
    let mut means = vec![0f64; lh];

    for i in 0..spec.n_users {
        let user_id = format!("{}{i:0width$}", spec.id_prefix);
        let n_msgs = rng.random_range(spec.messages_per_user.0..=spec.messages_per_user.1);
        let counts: Vec<u64> = (0..n_msgs)
            .map(|_| u64::from(rng.random_range(spec.tokens_per_message.0..=spec.tokens_per_message.1)))
            .collect();

        // latent + offset = token mean, per layer
        let mut prev: Option<Vec<f64>> = None;
        for layer in 0..l {
            let fresh: Vec<f64> = (0..h).map(|_| spec.feature_scale * normal(&mut rng)).collect();
            let latent = match (spec.distribution, &prev) {
                (TokenDistribution::LayerwiseShift { rho }, Some(p)) => {
                    let k = (1.0 - rho * rho).sqrt();
                    p.iter().zip(&fresh).map(|(a, z)| rho * a + k * z).collect()
                }
                _ => fresh,
            };
            for j in 0..h {
                means[layer * h + j] = offsets[layer * h + j] + latent[j];
            }
            prev = Some(latent);
        }

        let draw_sum = |rng: &mut ChaCha8Rng, t: u64| -> Vec<f32> {
            let tf = t as f64;
            let spread = spec.token_sigma * tf.sqrt();
            means.iter().map(|m| (tf * m + spread * normal(rng)) as f32).collect()
        };

        if spec.keep_tokens {
            let mut msgs = Vec::with_capacity(counts.len());
            let mut user_tokens = Vec::with_capacity(counts.len());
            for (k, &t) in counts.iter().enumerate() {
                let mut sum = vec![0f64; lh];
                let mut toks = Vec::with_capacity(t as usize);
                for _ in 0..t {
                    let tok: Vec<f64> = means.iter().map(|m| m + spec.token_sigma * normal(&mut rng)).collect();
                    for (s, v) in sum.iter_mut().zip(&tok) {
                        *s += v;
                    }
                    toks.push(tok);
                }
                msgs.push(MessageEmbeddings {
                    message_id: format!("m{k:03}"),
                    token_count: t,
                    layer_sums: sum.iter().map(|&v| v as f32).collect(),
                });
                user_tokens.push(toks);
            }
            if let Some(out) = tokens_out.as_mut() {
                out.push(UserTokens {
                    user_id: user_id.clone(),
                    messages: user_tokens,
                });
            }
            message_records.push(UserMessages {
                user_id,
                messages: msgs,
            });
        } else if spec.granularity == Granularity::Message {
            let msgs = counts
                .iter()
                .enumerate()
                .map(|(k, &t)| MessageEmbeddings {
                    message_id: format!("m{k:03}"),
                    token_count: t,
                    layer_sums: draw_sum(&mut rng, t),
                })
                .collect();
            message_records.push(UserMessages {
                user_id,
                messages: msgs,
            });
        } else {
            let total: u64 = counts.iter().sum();
            user_records.push(UserEmbeddings {
                user_id,
                total_token_count: total,
                layer_sums: draw_sum(&mut rng, total),
            });
        }
    }

    let header_granularity = spec.granularity;
    let records = if spec.keep_tokens || spec.granularity == Granularity::Message {
        match header_granularity {
            Granularity::Message => Records::Messages(message_records),
            Granularity::User => Records::Users(message_records.iter().map(|m| m.fold(lh)).collect()),
        }
    } else {
        Records::Users(user_records)
    };
    let mut manifest = Manifest::new(spec.model_name.clone(), l, h);
    manifest.granularity = header_granularity;
    manifest
        .notes
        .push(format!("synthetic seed={} world_seed={}", spec.seed, spec.world_seed));
    let store = EmbeddingStore {
        header: manifest.header(),
        records,
    };
    let users = store.user_embeddings();

    let weights = spec.weight_vectors();
    let mut pooled_all = Vec::with_capacity(users.len());
    let mut signal = Vec::with_capacity(users.len());
    let mut noise = Vec::with_capacity(users.len());
    let mut scores = std::collections::BTreeMap::new();
    let mut inv_t_sum = 0.0;
    for u in &users {
        let count = u.total_token_count as f64;
        inv_t_sum += 1.0 / count;
        let pooled: Vec<Vec<f64>> = u
            .layer_sums
            .chunks(h)
            .map(|c| c.iter().map(|&s| f64::from(s) / count).collect())
            .collect();
        let lin: f64 = weights
            .iter()
            .map(|(layer, w)| w.iter().zip(&pooled[layer - 1]).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        let s = match spec.nonlinear {
            Some(k) => lin + k * lin * lin,
            None => lin,
        };
        let e = spec.noise_sigma * normal(&mut rng);
        scores.insert(u.user_id.clone(), s + e);
        signal.push(s);
        noise.push(e);
        pooled_all.push(pooled);
    }

    let mean_inv_t = inv_t_sum / users.len() as f64;
    let mut signal_variance = 0.0;
    for (la, wa) in &weights {
        for (lb, wb) in &weights {
            let dot: f64 = wa.iter().zip(wb).map(|(a, b)| a * b).sum();
            let latent = spec.feature_scale.powi(2) * spec.latent_correlation(*la, *lb);
            let token = if la == lb {
                spec.token_sigma.powi(2) * mean_inv_t
            } else {
                0.0
            };
            signal_variance += dot * (latent + token);
        }
    }

    let corpus = Corpus::assemble(manifest, users, OutcomeTable { scores }, Split::Train, 0);
    Ok(SynthOutput {
        store,
        corpus,
        truth: SynthTruth {
            pooled: pooled_all,
            weights,
            signal,
            noise,
            noise_sigma: spec.noise_sigma,
            bayes_mse: spec.noise_sigma * spec.noise_sigma,
            signal_variance,
        },
        tokens: tokens_out,
    })
}

/// Paths written by [`write_output`].
#[derive(Debug, Clone)]
pub struct SynthPaths {
    pub embeddings: PathBuf,
    pub manifest: PathBuf,
    pub outcomes: PathBuf,
    pub truth_text: PathBuf,
    pub truth_weights: PathBuf,
}

pub const TRUTH_MAGIC: &[u8; 4] = b"SYT1";

/// Write `<stem>.ule`, its manifest sidecar, `<stem>.outcomes.csv`,
/// `<stem>.truth.txt` (key=value) and `<stem>.truth.bin`
/// (`SYT1 | u16 terms | {u16 layer | u32 H | H f32}*`, little-endian).
pub fn write_output(out: &SynthOutput, spec: &SynthSpec, dir: &Path, stem: &str) -> Result<SynthPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let embeddings = dir.join(format!("{stem}.ule"));
    out.store.write(&embeddings)?;
    let manifest = sidecar_path(&embeddings);
    std::fs::write(&manifest, out.corpus.manifest.to_sidecar()).map_err(|e| Error::io(&manifest, e))?;
    let outcomes = dir.join(format!("{stem}.outcomes.csv"));
    out.corpus.outcomes.write(&outcomes)?;

    let terms: Vec<String> = spec
        .signal
        .iter()
        .map(|t| match &t.weights {
            SignalWeights::Scalar(c) => format!("{}:scalar:{c}", t.layer),
            SignalWeights::Vector(_) => format!("{}:vector", t.layer),
        })
        .collect();
    let truth_text = dir.join(format!("{stem}.truth.txt"));
    let text = kv_block(&[
        ("n_users", spec.n_users.to_string()),
        ("num_layers", spec.num_layers.to_string()),
        ("hidden_dim", spec.hidden_dim.to_string()),
        ("seed", spec.seed.to_string()),
        ("world_seed", spec.world_seed.to_string()),
        ("distribution", spec.distribution.to_string()),
        ("granularity", spec.granularity.to_string()),
        ("feature_scale", spec.feature_scale.to_string()),
        ("token_sigma", spec.token_sigma.to_string()),
        ("signal_terms", terms.join(";")),
        (
            "nonlinear",
            spec.nonlinear.map(|k| k.to_string()).unwrap_or_else(|| "none".into()),
        ),
        ("noise_sigma", out.truth.noise_sigma.to_string()),
        ("bayes_mse", out.truth.bayes_mse.to_string()),
        ("signal_variance", out.truth.signal_variance.to_string()),
    ]);
    std::fs::write(&truth_text, text).map_err(|e| Error::io(&truth_text, e))?;

    let truth_weights = dir.join(format!("{stem}.truth.bin"));
    let mut bin = Vec::new();
    bin.extend_from_slice(TRUTH_MAGIC);
    bin.extend_from_slice(&(out.truth.weights.len() as u16).to_le_bytes());
    for (layer, w) in &out.truth.weights {
        bin.extend_from_slice(&(*layer as u16).to_le_bytes());
        bin.extend_from_slice(&(w.len() as u32).to_le_bytes());
        for v in w {
            bin.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    std::fs::write(&truth_weights, bin).map_err(|e| Error::io(&truth_weights, e))?;
    Ok(SynthPaths {
        embeddings,
        manifest,
        outcomes,
        truth_text,
        truth_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_corpus;

    #[test]
    fn spec_validation() {
        assert!(SynthSpec::new(10, 4, 3).with_signal(5, 1.0).validate().is_err());
        assert!(SynthSpec::new(0, 4, 3).validate().is_err());
        assert!(SynthSpec::new(10, 4, 3).with_noise(-1.0).validate().is_err());
        assert!(SynthSpec::new(10, 4, 3).with_signal(4, 1.0).validate().is_ok());
    }

    #[test]
    fn bayes_mse_is_noise_variance() {
        let out = generate(&SynthSpec::new(5, 3, 2).with_signal(1, 1.0).with_noise(0.5)).unwrap();
        assert_eq!(out.truth.bayes_mse, 0.25);
    }

    #[test]
    fn every_mode_produces_a_valid_corpus() {
        for (granularity, keep) in [
            (Granularity::User, false),
            (Granularity::Message, false),
            (Granularity::Message, true),
            (Granularity::User, true),
        ] {
            let mut spec = SynthSpec::new(6, 3, 4).with_signal(2, 1.0).with_noise(0.1);
            spec.granularity = granularity;
            spec.keep_tokens = keep;
            spec.messages_per_user = (2, 3);
            spec.tokens_per_message = (3, 5);
            let out = generate(&spec).unwrap();
            assert!(validate_corpus(&out.corpus).is_empty());
            assert_eq!(out.corpus.len(), 6);
            assert_eq!(out.tokens.is_some(), keep);
            assert_eq!(out.store.header.granularity, granularity);
        }
    }

    #[test]
    fn outcomes_are_signal_plus_noise() {
        let out = generate(&SynthSpec::new(20, 4, 3).with_signal(2, 2.0).with_noise(0.3)).unwrap();
        for (i, u) in out.corpus.users.iter().enumerate() {
            let y = out.corpus.outcomes.get(&u.user_id).unwrap();
            assert_eq!(y, out.truth.signal[i] + out.truth.noise[i]);
            let pooled = crate::aggregate::pool_user(u, 2, 3).unwrap();
            let lin: f64 = pooled.iter().map(|p| p * 2.0 / 3.0).sum();
            assert!((lin - out.truth.signal[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn parse_terms_and_distributions() {
        let t: SignalTerm = "7:0.6".parse().unwrap();
        assert_eq!(t.layer, 7);
        assert_eq!(t.weights, SignalWeights::Scalar(0.6));
        assert!("7".parse::<SignalTerm>().is_err());
        assert_eq!(
            "layerwise_shift:0.5".parse::<TokenDistribution>().unwrap(),
            TokenDistribution::LayerwiseShift { rho: 0.5 }
        );
        assert!("other".parse::<TokenDistribution>().is_err());
    }
}
