//! Context-independent token representations.
//!
//! The character path is embedding → char-CNN with max pooling → highway
//! stack → linear projection. The tagger prepends a word embedding and may
//! append a precomputed contextual vector; the language model uses the
//! character path alone.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{CharCnn, Embedding, Graph, Highway, Linear, ParameterSet, Var};
use crate::corpus::{Token, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Word embedding width; zero disables the word lookup.
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_filters: usize,
    pub char_kernel: usize,
    pub highway_layers: usize,
    /// Output width of the character path projection.
    pub char_output: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            word_dim: 50,
            char_dim: 16,
            char_filters: 128,
            char_kernel: 3,
            highway_layers: 2,
            char_output: 128,
        }
    }
}

impl EncoderConfig {
    pub fn output_dim(&self) -> usize {
        self.word_dim + self.char_output
    }
}

#[derive(Clone, Debug)]
pub struct TokenEncoder {
    pub config: EncoderConfig,
    words: Option<Embedding>,
    chars: Embedding,
    cnn: CharCnn,
    highways: Vec<Highway>,
    projection: Linear,
}

/// Which parts went into a token vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Provenance {
    pub has_word: bool,
    pub has_char: bool,
    pub has_contextual: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenVector {
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl TokenEncoder {
    pub fn build<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        config: &EncoderConfig,
        word_rows: usize,
        char_rows: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if config.char_dim == 0 || config.char_filters == 0 || config.char_output == 0 {
            return Err(Error::config("character path dimensions must be positive"));
        }
        let words = if config.word_dim > 0 {
            Some(Embedding::build(params, &format!("{prefix}.word_embedding"), word_rows, config.word_dim, rng)?)
        } else {
            None
        };
        let chars = Embedding::build(params, &format!("{prefix}.char_embedding"), char_rows, config.char_dim, rng)?;
        let cnn = CharCnn::build(
            params,
            &format!("{prefix}.char_cnn"),
            config.char_dim,
            config.char_filters,
            config.char_kernel,
            rng,
        )?;
        let highways = (0..config.highway_layers)
            .map(|i| Highway::build(params, &format!("{prefix}.highway.{i}"), config.char_filters, rng))
            .collect::<Result<Vec<_>>>()?;
        let projection = Linear::build(
            params,
            &format!("{prefix}.projection"),
            config.char_filters,
            config.char_output,
            rng,
        )?;
        Ok(TokenEncoder {
            config: config.clone(),
            words,
            chars,
            cnn,
            highways,
            projection,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn word_embedding(&self) -> Option<&Embedding> {
        self.words.as_ref()
    }

    pub fn char_embedding(&self) -> &Embedding {
        &self.chars
    }

    /// Character path only.
    pub fn char_vector(&self, g: &mut Graph, token: &Token) -> Result<Var> {
        let chars = token
            .char_ids
            .iter()
            .map(|&c| self.chars.forward(g, c))
            .collect::<Result<Vec<_>>>()?;
        let mut h = self.cnn.forward(g, &chars)?;
        for hw in &self.highways {
            h = hw.forward(g, h)?;
        }
        self.projection.forward(g, h)
    }

    /// Word embedding (if configured) followed by the character path.
    pub fn token_vector(&self, g: &mut Graph, token: &Token) -> Result<Var> {
        let c = self.char_vector(g, token)?;
        match &self.words {
            Some(emb) => {
                let w = emb.forward(g, token.word_id)?;
                Ok(g.concat(&[w, c]))
            }
            None => Ok(c),
        }
    }

    /// Per-token inputs, each optionally extended by a contextual vector.
    pub fn encode(&self, g: &mut Graph, tokens: &[Token], contextual: Option<&[Vec<f64>]>) -> Result<Vec<Var>> {
        if let Some(ctx) = contextual {
            if ctx.len() != tokens.len() {
                return Err(Error::input(format!(
                    "{} contextual vectors for {} tokens",
                    ctx.len(),
                    tokens.len()
                )));
            }
        }
        tokens
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let v = self.token_vector(g, t)?;
                match contextual {
                    Some(ctx) => {
                        let c = g.constant(ctx[k].clone());
                        Ok(g.concat(&[v, c]))
                    }
                    None => Ok(v),
                }
            })
            .collect()
    }
}

/// Evaluate the encoder outside of training.
pub fn encode_tokens(
    params: &ParameterSet,
    encoder: &TokenEncoder,
    vocab: &Vocabulary,
    sentence: &[String],
    contextual: Option<&[Vec<f64>]>,
) -> Result<Vec<TokenVector>> {
    let tokens = vocab.index_sentence(sentence);
    let mut g = Graph::new(params);
    let vars = encoder.encode(&mut g, &tokens, contextual)?;
    let provenance = Provenance {
        has_word: encoder.words.is_some(),
        has_char: true,
        has_contextual: contextual.is_some(),
    };
    Ok(vars
        .into_iter()
        .map(|v| TokenVector {
            values: g.value(v).to_vec(),
            provenance,
        })
        .collect())
}
