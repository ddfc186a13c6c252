//! Mention-pair representations, the context-dependent gated module and
//! pairwise coreference scoring.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{init_matrix, InitRng};
use crate::error::{ModelError, Result};
use crate::math::{DenseMatrix, NodeId, ParamId, ParamStore, RateGroup, Tape, DEFAULT_SINGULAR_THRESHOLD};

/// How symbolic features enter the pair representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Trigger pair only.
    Baseline,
    /// Raw feature pairs concatenated after the trigger pair.
    Simple,
    /// Feature pairs filtered through one gated module per feature.
    Cdgm,
}

impl Mode {
    pub fn uses_features(self) -> bool {
        !matches!(self, Mode::Baseline)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Simple => "simple",
            Mode::Cdgm => "cdgm",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "simple" => Ok(Mode::Simple),
            "cdgm" => Ok(Mode::Cdgm),
            other => Err(format!("unknown mode `{other}` (expected baseline, simple or cdgm)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    None,
    Sigmoid,
}

/// Hidden width used by every feedforward block.
pub fn hidden_width(output: usize) -> usize {
    (2 * output).max(32)
}

/// Two affine maps with a ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnnBlock {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub activation: OutputActivation,
}

impl FfnnBlock {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        activation: OutputActivation,
        mut rng: Option<&mut InitRng>,
    ) -> Self {
        let hidden = hidden_width(output);
        let w1 = store.add(
            format!("{name}.w1"),
            RateGroup::Upper,
            init_matrix(rng.as_deref_mut(), hidden, input, 1.0 / (input as f64).sqrt()),
        );
        let b1 = store.add(format!("{name}.b1"), RateGroup::Upper, DenseMatrix::zeros(hidden, 1));
        let w2 = store.add(
            format!("{name}.w2"),
            RateGroup::Upper,
            init_matrix(rng, output, hidden, 1.0 / (hidden as f64).sqrt()),
        );
        let b2 = store.add(format!("{name}.b2"), RateGroup::Upper, DenseMatrix::zeros(output, 1));
        Self {
            input,
            hidden,
            output,
            w1,
            b1,
            w2,
            b2,
            activation,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let h = tape.affine(self.w1, self.b1, x)?;
        let h = tape.relu(h);
        let out = tape.affine(self.w2, self.b2, h)?;
        Ok(match self.activation {
            OutputActivation::None => out,
            OutputActivation::Sigmoid => tape.sigmoid(out),
        })
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

/// Intermediate values of one gated-module application.
#[derive(Debug, Clone, Copy)]
pub struct CdgmOutput {
    pub output: NodeId,
    pub gate: NodeId,
    pub parallel: NodeId,
    pub orthogonal: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairModel {
    pub mode: Mode,
    /// Pair width `p`.
    pub width: usize,
    pub trigger: FfnnBlock,
    pub features: Vec<FfnnBlock>,
    pub gates: Vec<FfnnBlock>,
    pub scorer: FfnnBlock,
    pub singular_threshold: f64,
}

impl PairModel {
    /// Registers `FFNN_t`, then per feature `FFNN_u` (and `FFNN_g` in cdgm
    /// mode), then `FFNN_a`.
    pub fn register(
        store: &mut ParamStore,
        mode: Mode,
        feature_names: &[&str],
        trigger_dim: usize,
        feature_dim: usize,
        width: usize,
        mut rng: Option<&mut InitRng>,
    ) -> Self {
        let trigger = FfnnBlock::register(
            store,
            "ffnn_t",
            3 * trigger_dim,
            width,
            OutputActivation::None,
            rng.as_deref_mut(),
        );
        let mut features = Vec::new();
        let mut gates = Vec::new();
        if mode.uses_features() {
            for name in feature_names {
                features.push(FfnnBlock::register(
                    store,
                    &format!("ffnn_u.{name}"),
                    3 * feature_dim,
                    width,
                    OutputActivation::None,
                    rng.as_deref_mut(),
                ));
                if mode == Mode::Cdgm {
                    gates.push(FfnnBlock::register(
                        store,
                        &format!("ffnn_g.{name}"),
                        2 * width,
                        width,
                        OutputActivation::Sigmoid,
                        rng.as_deref_mut(),
                    ));
                }
            }
        }
        let scorer_input = (features.len() + 1) * width;
        let scorer = FfnnBlock::register(store, "ffnn_a", scorer_input, 1, OutputActivation::None, rng);
        Self {
            mode,
            width,
            trigger,
            features,
            gates,
            scorer,
            singular_threshold: DEFAULT_SINGULAR_THRESHOLD,
        }
    }

    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    fn feature_block(&self, u: usize) -> Result<&FfnnBlock> {
        self.features.get(u).ok_or(ModelError::FeatureIndex {
            index: u,
            count: self.features.len(),
        })
    }

    /// `FFNN_t([t_i ; t_j ; t_i ∘ t_j])`.
    pub fn trigger_pair(&self, tape: &mut Tape, ti: NodeId, tj: NodeId) -> Result<NodeId> {
        let product = tape.mul(ti, tj)?;
        let input = tape.concat(&[ti, tj, product]);
        self.trigger.forward(tape, input)
    }

    /// `FFNN_u([h_i ; h_j ; h_i ∘ h_j])` for feature `u`.
    pub fn feature_pair(&self, tape: &mut Tape, hi: NodeId, hj: NodeId, u: usize) -> Result<NodeId> {
        let block = self.feature_block(u)?;
        let product = tape.mul(hi, hj)?;
        let input = tape.concat(&[hi, hj, product]);
        block.forward(tape, input)
    }

    /// Gate computed from `[t_ij ; h_ij]`; the output mixes the component of
    /// `h_ij` orthogonal to `t_ij` (weighted by the gate) with the parallel
    /// component (weighted by one minus the gate).
    pub fn cdgm(&self, tape: &mut Tape, tij: NodeId, hij: NodeId, u: usize) -> Result<CdgmOutput> {
        let block = self.gates.get(u).ok_or(ModelError::FeatureIndex {
            index: u,
            count: self.gates.len(),
        })?;
        let joined = tape.concat(&[tij, hij]);
        let gate = block.forward(tape, joined)?;
        let (parallel, orthogonal) = tape.decompose(tij, hij, self.singular_threshold)?;
        let output = tape.gate_mix(gate, orthogonal, parallel)?;
        Ok(CdgmOutput {
            output,
            gate,
            parallel,
            orthogonal,
        })
    }

    /// Final pair representation `f_ij`. `slots` holds the raw feature pairs
    /// in simple mode and the gated outputs in cdgm mode; it must be empty in
    /// baseline mode.
    pub fn assemble_pair(&self, tape: &mut Tape, tij: NodeId, slots: &[NodeId]) -> Result<NodeId> {
        if slots.len() != self.features.len() {
            return Err(ModelError::SlotCount {
                expected: self.features.len(),
                got: slots.len(),
            });
        }
        if slots.is_empty() {
            return Ok(tij);
        }
        let mut parts = Vec::with_capacity(slots.len() + 1);
        parts.push(tij);
        parts.extend_from_slice(slots);
        Ok(tape.concat(&parts))
    }

    /// `s(i, j) = FFNN_a(f_ij)`.
    pub fn score_pair(&self, tape: &mut Tape, fij: NodeId) -> Result<NodeId> {
        self.scorer.forward(tape, fij)
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&'static str, &FfnnBlock)> {
        std::iter::once(("ffnn_t", &self.trigger))
            .chain(self.features.iter().map(|b| ("ffnn_u", b)))
            .chain(self.gates.iter().map(|b| ("ffnn_g", b)))
            .chain(std::iter::once(("ffnn_a", &self.scorer)))
    }
}

/// Scores `s(i, j)` for every `j < i`, stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScoreMatrix {
    k: usize,
    values: Vec<f64>,
}

impl PairScoreMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            values: vec![0.0; k * k.saturating_sub(1) / 2],
        }
    }

    /// Build from a function of `(i, j)` with `j < i`.
    pub fn from_fn(k: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(k);
        for i in 1..k {
            for j in 0..i {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn index(i: usize, j: usize) -> usize {
        debug_assert!(j < i);
        i * (i - 1) / 2 + j
    }

    pub fn mentions(&self) -> usize {
        self.k
    }

    /// Number of stored scores, `k(k-1)/2`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(
            j < i && i < self.k,
            "score ({i}, {j}) outside lower triangle of {}",
            self.k
        );
        self.values[Self::index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(
            j < i && i < self.k,
            "score ({i}, {j}) outside lower triangle of {}",
            self.k
        );
        self.values[Self::index(i, j)] = value;
    }

    /// Scores of mention `i` against `0..i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let start = if i == 0 { 0 } else { Self::index(i, 0) };
        &self.values[start..start + i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}
