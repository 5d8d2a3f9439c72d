//! Toy-scale architecture blocks: hierarchical windowed image encoder,
//! masked transformer expression encoder, causal/cross-attention decoder,
//! the feature-fusion block, and the Adam update.
//!
//! All blocks are pure functions of a [`ParamStore`] bound onto a [`Tape`];
//! a [`Binder`] decides per parameter whether gradients flow (used to freeze
//! the encoder in the second training stage). Parameter initialization is
//! `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))` from a per-name stream of the
//! run seed, so layout and values are independent of creation order.

use crate::expr::{Token, VOCAB_SIZE};
use crate::raster::Raster;
use crate::rng;
use crate::tensor::{Tape, Tensor};
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;

/// Hierarchical image-encoder configuration. Defaults are desk scale; the
/// full-size values remain legal configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub stages: usize,
    pub blocks_per_stage: usize,
    pub window: usize,
    pub heads: usize,
    /// Output feature width `d_img`.
    pub out_dim: usize,
    /// Run one encoder per band and fuse, instead of one multi-band encoder.
    pub per_band: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            patch_size: 4,
            embed_dim: 16,
            stages: 2,
            blocks_per_stage: 2,
            window: 4,
            heads: 4,
            out_dim: 128,
            per_band: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl EncoderConfig {
    /// Stage channel width: doubles per stage.
    pub fn stage_dim(&self, stage: usize) -> usize {
        self.embed_dim << stage
    }

    /// Stage spatial side length for an input of side `n` pixels.
    pub fn stage_side(&self, input_side: usize, stage: usize) -> usize {
        (input_side / self.patch_size) >> stage
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<(), ConfigError> {
        if self.patch_size == 0 || self.stages == 0 || self.blocks_per_stage == 0 {
            return Err(ConfigError("encoder sizes must be positive".to_string()));
        }
        let down = self.patch_size << (self.stages - 1);
        if height % down != 0 || width % down != 0 {
            return Err(ConfigError(alloc::format!(
                "input {height}x{width} not divisible by patch*2^(stages-1) = {down}"
            )));
        }
        for s in 0..self.stages {
            let (hs, ws) = (self.stage_side(height, s), self.stage_side(width, s));
            if hs % self.window != 0 || ws % self.window != 0 {
                return Err(ConfigError(alloc::format!(
                    "stage {s} resolution {hs}x{ws} not divisible by window {}",
                    self.window
                )));
            }
            if self.stage_dim(s) % self.heads != 0 {
                return Err(ConfigError(alloc::format!(
                    "stage {s} width {} not divisible by heads {}",
                    self.stage_dim(s),
                    self.heads
                )));
            }
        }
        Ok(())
    }
}

/// Sequence-model configuration shared by the expression encoder, the
/// decoder, and the fusion block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub vocab: usize,
    pub max_len: usize,
}

impl Default for SeqModelConfig {
    fn default() -> Self {
        SeqModelConfig {
            layers: 2,
            heads: 4,
            hidden: 64,
            vocab: VOCAB_SIZE,
            max_len: 64,
        }
    }
}

impl SeqModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.hidden % self.heads != 0 {
            return Err(ConfigError(alloc::format!(
                "hidden {} not divisible by heads {}",
                self.hidden,
                self.heads
            )));
        }
        if self.vocab != VOCAB_SIZE {
            return Err(ConfigError(alloc::format!(
                "vocab must be {VOCAB_SIZE}, got {}",
                self.vocab
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// Named parameter tensors in deterministic (sorted) order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    /// Create a tensor initialized uniform in `+-1/sqrt(fan_in)` from a
    /// stream derived from `(seed, name)`.
    pub fn init(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize, seed: u64) {
        let mut stream = rng::substream(seed, fnv1a(name.as_bytes()));
        let bound = 1.0 / crate::math::sqrt(fan_in.max(1) as f64);
        let values = (0..rows * cols)
            .map(|_| rng::uniform_in(&mut stream, -bound, bound))
            .collect();
        self.map.insert(name.to_string(), Param { rows, cols, values });
    }

    /// Create a zero-initialized tensor (biases, norm offsets).
    pub fn init_zero(&mut self, name: &str, rows: usize, cols: usize) {
        self.map.insert(
            name.to_string(),
            Param { rows, cols, values: alloc::vec![0.0; rows * cols] },
        );
    }

    /// Create a one-initialized tensor (norm gains).
    pub fn init_one(&mut self, name: &str, rows: usize, cols: usize) {
        self.map.insert(
            name.to_string(),
            Param { rows, cols, values: alloc::vec![1.0; rows * cols] },
        );
    }

    pub fn insert(&mut self, name: &str, param: Param) {
        self.map.insert(name.to_string(), param);
    }

    pub fn get(&self, name: &str) -> &Param {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.map.iter()
    }

    pub fn entries_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// FNV-1a over the value bits of every parameter whose name starts with
    /// `prefix`; used to verify bitwise freezing.
    pub fn checksum(&self, prefix: &str) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for (name, p) in &self.map {
            if !name.starts_with(prefix) {
                continue;
            }
            h = fnv1a_step(h, name.as_bytes());
            for v in &p.values {
                h = fnv1a_step(h, &v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    fnv1a_step(0xcbf2_9ce4_8422_2325, bytes)
}

fn fnv1a_step(mut h: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Binds store parameters onto a tape on first use, remembering which tensor
/// each name maps to so gradients can be collected after `backward`.
pub struct Binder<'a> {
    pub tape: &'a Tape,
    store: &'a ParamStore,
    bound: RefCell<BTreeMap<String, Tensor>>,
    frozen_prefixes: Vec<String>,
}

impl<'a> Binder<'a> {
    pub fn new(tape: &'a Tape, store: &'a ParamStore) -> Binder<'a> {
        Binder {
            tape,
            store,
            bound: RefCell::new(BTreeMap::new()),
            frozen_prefixes: Vec::new(),
        }
    }

    /// Parameters whose names start with any of these prefixes are bound
    /// without gradient tracking.
    pub fn with_frozen(mut self, prefixes: &[&str]) -> Binder<'a> {
        self.frozen_prefixes = prefixes.iter().map(|p| p.to_string()).collect();
        self
    }

    pub fn get(&self, name: &str) -> Tensor {
        if let Some(t) = self.bound.borrow().get(name) {
            return *t;
        }
        let p = self.store.get(name);
        let trainable = !self.frozen_prefixes.iter().any(|pre| name.starts_with(pre));
        let t = self.tape.leaf(p.rows, p.cols, p.values.clone(), trainable);
        self.bound.borrow_mut().insert(name.to_string(), t);
        t
    }

    /// Gradients of every trainable bound parameter, by name.
    pub fn grads(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out = BTreeMap::new();
        for (name, t) in self.bound.borrow().iter() {
            let trainable = !self.frozen_prefixes.iter().any(|pre| name.starts_with(pre));
            if trainable {
                out.insert(name.clone(), self.tape.grad(*t));
            }
        }
        out
    }
}

/// Linear layer: `x @ W + b`.
fn linear(b: &Binder, x: Tensor, w: &str, bias: &str) -> Tensor {
    let t = b.tape;
    t.add_row(t.matmul(x, b.get(w)), b.get(bias))
}

fn layer_norm(b: &Binder, x: Tensor, prefix: &str) -> Tensor {
    b.tape.layer_norm_rows(
        x,
        b.get(&alloc::format!("{prefix}.g")),
        b.get(&alloc::format!("{prefix}.b")),
    )
}

/// Scaled dot-product multi-head attention.
///
/// `mask`, when present, is an additive `Lq x Lk` matrix (0 for allowed,
/// a large negative number for masked positions) applied to every head's
/// logits before softmax.
pub fn multi_head_attention(
    b: &Binder,
    q_in: Tensor,
    k_in: Tensor,
    v_in: Tensor,
    heads: usize,
    mask: Option<&[f64]>,
    prefix: &str,
) -> Tensor {
    let t = b.tape;
    let (_, d) = t.shape(q_in);
    assert!(d % heads == 0, "attention width {d} not divisible by {heads} heads");
    let dh = d / heads;
    let q = linear(b, q_in, &alloc::format!("{prefix}.wq"), &alloc::format!("{prefix}.bq"));
    let k = linear(b, k_in, &alloc::format!("{prefix}.wk"), &alloc::format!("{prefix}.bk"));
    let v = linear(b, v_in, &alloc::format!("{prefix}.wv"), &alloc::format!("{prefix}.bv"));
    let scale = 1.0 / crate::math::sqrt(dh as f64);
    let mut head_outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = t.slice_cols(q, h * dh, dh);
        let kh = t.slice_cols(k, h * dh, dh);
        let vh = t.slice_cols(v, h * dh, dh);
        let mut logits = t.scale(t.matmul_nt(qh, kh), scale);
        if let Some(m) = mask {
            logits = t.add_const(logits, m);
        }
        let probs = t.softmax_rows(logits);
        head_outs.push(t.matmul(probs, vh));
    }
    let concat = t.concat_cols(&head_outs);
    linear(b, concat, &alloc::format!("{prefix}.wo"), &alloc::format!("{prefix}.bo"))
}

/// Pre-norm transformer block: attention then feedforward, both residual.
fn encoder_block(
    b: &Binder,
    x: Tensor,
    heads: usize,
    mask: Option<&[f64]>,
    prefix: &str,
) -> Tensor {
    let t = b.tape;
    let a = multi_head_attention(
        b,
        layer_norm(b, x, &alloc::format!("{prefix}.ln1")),
        layer_norm(b, x, &alloc::format!("{prefix}.ln1")),
        layer_norm(b, x, &alloc::format!("{prefix}.ln1")),
        heads,
        mask,
        &alloc::format!("{prefix}.attn"),
    );
    let x = t.add(x, a);
    let h = layer_norm(b, x, &alloc::format!("{prefix}.ln2"));
    let f = linear(b, h, &alloc::format!("{prefix}.ffn.w1"), &alloc::format!("{prefix}.ffn.b1"));
    let f = t.relu(f);
    let f = linear(b, f, &alloc::format!("{prefix}.ffn.w2"), &alloc::format!("{prefix}.ffn.b2"));
    t.add(x, f)
}

fn register_attention(store: &mut ParamStore, prefix: &str, d: usize, seed: u64) {
    for w in ["wq", "wk", "wv", "wo"] {
        store.init(&alloc::format!("{prefix}.{w}"), d, d, d, seed);
    }
    for bias in ["bq", "bk", "bv", "bo"] {
        store.init_zero(&alloc::format!("{prefix}.{bias}"), 1, d);
    }
}

fn register_block(store: &mut ParamStore, prefix: &str, d: usize, ffn: usize, seed: u64) {
    store.init_one(&alloc::format!("{prefix}.ln1.g"), 1, d);
    store.init_zero(&alloc::format!("{prefix}.ln1.b"), 1, d);
    store.init_one(&alloc::format!("{prefix}.ln2.g"), 1, d);
    store.init_zero(&alloc::format!("{prefix}.ln2.b"), 1, d);
    register_attention(store, &alloc::format!("{prefix}.attn"), d, seed);
    store.init(&alloc::format!("{prefix}.ffn.w1"), d, ffn, d, seed);
    store.init_zero(&alloc::format!("{prefix}.ffn.b1"), 1, ffn);
    store.init(&alloc::format!("{prefix}.ffn.w2"), ffn, d, ffn, seed);
    store.init_zero(&alloc::format!("{prefix}.ffn.b2"), 1, d);
}

/// The full model: image encoder, expression encoder, decoder, fusion.
#[derive(Debug, Clone)]
pub struct Model {
    pub enc: EncoderConfig,
    pub seq: SeqModelConfig,
    /// Band count the image encoder was built for.
    pub in_bands: usize,
    pub params: ParamStore,
}

pub const IMG_PREFIX: &str = "img.";

impl Model {
    pub fn init(enc: EncoderConfig, seq: SeqModelConfig, in_bands: usize, seed: u64) -> Model {
        let mut store = ParamStore::new();
        let encoders: Vec<String> = if enc.per_band {
            (0..in_bands).map(|b| alloc::format!("img.band{b}")).collect()
        } else {
            alloc::vec!["img".to_string()]
        };
        let in_ch = if enc.per_band { 1 } else { in_bands };
        for e in &encoders {
            let patch_in = enc.patch_size * enc.patch_size * in_ch;
            store.init(&alloc::format!("{e}.patch.w"), patch_in, enc.embed_dim, patch_in, seed);
            store.init_zero(&alloc::format!("{e}.patch.b"), 1, enc.embed_dim);
            for s in 0..enc.stages {
                let d = enc.stage_dim(s);
                for blk in 0..enc.blocks_per_stage {
                    register_block(store_mut(&mut store), &alloc::format!("{e}.s{s}.b{blk}"), d, 2 * d, seed);
                }
                if s + 1 < enc.stages {
                    store.init(&alloc::format!("{e}.s{s}.merge.w"), 4 * d, 2 * d, 4 * d, seed);
                    store.init_zero(&alloc::format!("{e}.s{s}.merge.b"), 1, 2 * d);
                }
            }
            let last = enc.stage_dim(enc.stages - 1);
            store.init(&alloc::format!("{e}.head.w"), last, enc.out_dim, last, seed);
            store.init_zero(&alloc::format!("{e}.head.b"), 1, enc.out_dim);
        }

        let h = seq.hidden;
        store.init("exp.embed", seq.vocab, h, h, seed);
        store.init("exp.pos", seq.max_len, h, h, seed);
        for l in 0..seq.layers {
            register_block(&mut store, &alloc::format!("exp.l{l}"), h, 2 * h, seed);
        }

        store.init("dec.embed", seq.vocab, h, h, seed);
        store.init("dec.pos", seq.max_len, h, h, seed);
        for l in 0..seq.layers {
            register_block(&mut store, &alloc::format!("dec.l{l}"), h, 2 * h, seed);
            register_attention(&mut store, &alloc::format!("dec.l{l}.cross"), h, seed);
            store.init_one(&alloc::format!("dec.l{l}.ln3.g"), 1, h);
            store.init_zero(&alloc::format!("dec.l{l}.ln3.b"), 1, h);
        }
        store.init("dec.out.w", h, seq.vocab, h, seed);
        store.init_zero("dec.out.b", 1, seq.vocab);

        store.init("fus.img_proj.w", enc.out_dim, h, enc.out_dim, seed);
        store.init_zero("fus.img_proj.b", 1, h);
        register_attention(&mut store, "fus.attn", h, seed);
        store.init("fus.ffn.w1", h, h, h, seed);
        store.init_zero("fus.ffn.b1", 1, h);
        store.init("fus.ffn.w2", h, h, h, seed);
        store.init_zero("fus.ffn.b2", 1, h);

        Model { enc, seq, in_bands, params: store }
    }
}

fn store_mut(store: &mut ParamStore) -> &mut ParamStore {
    store
}

/// Row-index groups for non-overlapping `side/window` windows of a
/// `side x side` row-major token grid.
fn window_groups(side: usize, window: usize) -> Vec<Vec<usize>> {
    let per = side / window;
    let mut groups = Vec::with_capacity(per * per);
    for wy in 0..per {
        for wx in 0..per {
            let mut g = Vec::with_capacity(window * window);
            for y in 0..window {
                for x in 0..window {
                    g.push((wy * window + y) * side + (wx * window + x));
                }
            }
            groups.push(g);
        }
    }
    groups
}

/// 2x2 patch-merging groups over a `side x side` grid, row-major output.
fn merge_groups(side: usize) -> Vec<Vec<usize>> {
    let half = side / 2;
    let mut groups = Vec::with_capacity(half * half);
    for y in 0..half {
        for x in 0..half {
            groups.push(alloc::vec![
                (2 * y) * side + 2 * x,
                (2 * y) * side + 2 * x + 1,
                (2 * y + 1) * side + 2 * x,
                (2 * y + 1) * side + 2 * x + 1,
            ]);
        }
    }
    groups
}

/// Hierarchical windowed encoder over one token grid. `x` is `[H*W, C]`
/// pixels row-major; returns the per-stage token tensors and the pooled,
/// projected `F_img` of width `out_dim`.
fn encode_tokens(
    b: &Binder,
    x: Tensor,
    side: usize,
    enc: &EncoderConfig,
    prefix: &str,
) -> (Vec<Tensor>, Tensor) {
    let t = b.tape;
    // patch embedding
    let patch_groups: Vec<Vec<usize>> = {
        let p = enc.patch_size;
        let grid = side / p;
        let mut groups = Vec::with_capacity(grid * grid);
        for gy in 0..grid {
            for gx in 0..grid {
                let mut g = Vec::with_capacity(p * p);
                for y in 0..p {
                    for x2 in 0..p {
                        g.push((gy * p + y) * side + (gx * p + x2));
                    }
                }
                groups.push(g);
            }
        }
        groups
    };
    let patches = t.unfold_rows(x, &patch_groups);
    let mut tokens = linear(b, patches, &alloc::format!("{prefix}.patch.w"), &alloc::format!("{prefix}.patch.b"));
    let mut stage_side = side / enc.patch_size;
    let mut pyramid = Vec::with_capacity(enc.stages);
    for s in 0..enc.stages {
        let groups = window_groups(stage_side, enc.window);
        for blk in 0..enc.blocks_per_stage {
            // windowed attention: run the block within each window, then
            // reassemble rows in grid order
            let mut window_rows: Vec<Tensor> = Vec::with_capacity(groups.len());
            for g in &groups {
                let win = t.gather_rows(tokens, g);
                let out = encoder_block(b, win, enc.heads, None, &alloc::format!("{prefix}.s{s}.b{blk}"));
                window_rows.push(out);
            }
            let stacked = t.concat_rows(&window_rows);
            // stacked rows are in window order; scatter back to grid order
            let mut back = alloc::vec![0usize; stage_side * stage_side];
            for (wi, g) in groups.iter().enumerate() {
                for (slot, &row) in g.iter().enumerate() {
                    back[row] = wi * g.len() + slot;
                }
            }
            tokens = t.gather_rows(stacked, &back);
        }
        pyramid.push(tokens);
        if s + 1 < enc.stages {
            let merged = t.unfold_rows(tokens, &merge_groups(stage_side));
            tokens = linear(
                b,
                merged,
                &alloc::format!("{prefix}.s{s}.merge.w"),
                &alloc::format!("{prefix}.s{s}.merge.b"),
            );
            stage_side /= 2;
        }
    }
    let pooled = t.mean_rows(tokens);
    let f_img = linear(b, pooled, &alloc::format!("{prefix}.head.w"), &alloc::format!("{prefix}.head.b"));
    (pyramid, f_img)
}

/// Image-encoder forward over an already-built pixel tensor `[H*W, C]`.
///
/// With `per_band` encoders the per-band `F_img` vectors are averaged after
/// running band-specific parameter sets in band-index order.
pub fn image_encoder_forward(
    b: &Binder,
    x: Tensor,
    side: usize,
    bands: usize,
    enc: &EncoderConfig,
) -> (Vec<Tensor>, Tensor) {
    if !enc.per_band {
        return encode_tokens(b, x, side, enc, "img");
    }
    let t = b.tape;
    let mut pyramid = Vec::new();
    let mut feats = Vec::with_capacity(bands);
    for band in 0..bands {
        let plane = t.slice_cols(x, band, 1);
        let (py, f) = encode_tokens(b, plane, side, enc, &alloc::format!("img.band{band}"));
        if band == 0 {
            pyramid = py;
        }
        feats.push(f);
    }
    let stacked = t.concat_rows(&feats);
    (pyramid, t.mean_rows(stacked))
}

/// Build the pixel tensor for a raster: `[H*W, C]` row-major.
pub fn raster_to_tensor(tape: &Tape, r: &Raster, requires_grad: bool) -> Tensor {
    let (h, w, c) = (r.height(), r.width(), r.bands());
    let mut values = Vec::with_capacity(h * w * c);
    for p in 0..h * w {
        for band in 0..c {
            values.push(r.band(band)[p] as f64);
        }
    }
    tape.leaf(h * w, c, values, requires_grad)
}

/// Additive attention mask from a key-side PAD mask: masked keys get -1e30.
fn pad_attention_mask(lq: usize, keep: &[bool]) -> Vec<f64> {
    let lk = keep.len();
    let mut m = alloc::vec![0.0; lq * lk];
    for q in 0..lq {
        for k in 0..lk {
            if !keep[k] {
                m[q * lk + k] = -1e30;
            }
        }
    }
    m
}

/// Causal (strictly lower-triangular-allowed) additive mask.
fn causal_mask(l: usize) -> Vec<f64> {
    let mut m = alloc::vec![0.0; l * l];
    for q in 0..l {
        for k in q + 1..l {
            m[q * l + k] = -1e30;
        }
    }
    m
}

/// Expression-encoder forward for one (possibly padded) token sequence.
/// PAD positions are masked out of attention and pooling; returns the pooled
/// `[1, hidden]` representation.
pub fn expression_encoder_forward(b: &Binder, tokens: &[Token], seq: &SeqModelConfig) -> Tensor {
    let t = b.tape;
    let ids: Vec<usize> = tokens.iter().map(|tok| tok.index()).collect();
    assert!(ids.len() <= seq.max_len, "sequence exceeds max_len");
    let keep: Vec<bool> = tokens.iter().map(|tok| *tok != Token::Pad).collect();
    let emb = t.embedding(b.get("exp.embed"), &ids);
    let pos_ids: Vec<usize> = (0..ids.len()).collect();
    let pos = t.embedding(b.get("exp.pos"), &pos_ids);
    let mut x = t.add(emb, pos);
    let mask = pad_attention_mask(ids.len(), &keep);
    for l in 0..seq.layers {
        x = encoder_block(b, x, seq.heads, Some(&mask), &alloc::format!("exp.l{l}"));
    }
    // masked mean pool over non-PAD rows
    let n_keep = keep.iter().filter(|k| **k).count().max(1);
    let weights: Vec<f64> = keep
        .iter()
        .map(|k| if *k { 1.0 / n_keep as f64 } else { 0.0 })
        .collect();
    let w = t.constant(1, keep.len(), weights);
    t.matmul(w, x)
}

/// Decoder forward: causal self-attention over the prefix, cross-attention
/// into `memory` (the fused features), feedforward, and a softmax head.
/// Returns `[prefix_len, vocab]` next-token distributions.
pub fn decoder_forward(
    b: &Binder,
    prefix: &[Token],
    memory: Tensor,
    seq: &SeqModelConfig,
) -> Tensor {
    let t = b.tape;
    let ids: Vec<usize> = prefix.iter().map(|tok| tok.index()).collect();
    assert!(!ids.is_empty(), "decoder prefix must be nonempty");
    assert!(ids.len() <= seq.max_len, "prefix exceeds max_len");
    let emb = t.embedding(b.get("dec.embed"), &ids);
    let pos_ids: Vec<usize> = (0..ids.len()).collect();
    let pos = t.embedding(b.get("dec.pos"), &pos_ids);
    let mut x = t.add(emb, pos);
    let mask = causal_mask(ids.len());
    for l in 0..seq.layers {
        let prefix_name = alloc::format!("dec.l{l}");
        // causal self-attention
        let normed = layer_norm(b, x, &alloc::format!("{prefix_name}.ln1"));
        let sa = multi_head_attention(b, normed, normed, normed, seq.heads, Some(&mask), &alloc::format!("{prefix_name}.attn"));
        x = t.add(x, sa);
        // cross-attention into the fused memory
        let normed = layer_norm(b, x, &alloc::format!("{prefix_name}.ln3"));
        let ca = multi_head_attention(b, normed, memory, memory, seq.heads, None, &alloc::format!("{prefix_name}.cross"));
        x = t.add(x, ca);
        // feedforward
        let h = layer_norm(b, x, &alloc::format!("{prefix_name}.ln2"));
        let f = linear(b, h, &alloc::format!("{prefix_name}.ffn.w1"), &alloc::format!("{prefix_name}.ffn.b1"));
        let f = t.relu(f);
        let f = linear(b, f, &alloc::format!("{prefix_name}.ffn.w2"), &alloc::format!("{prefix_name}.ffn.b2"));
        x = t.add(x, f);
    }
    let logits = linear(b, x, "dec.out.w", "dec.out.b");
    t.softmax_rows(logits)
}

/// Fuse image and expression features: attention over the projected pair
/// followed by a two-layer feedforward; output `[1, hidden]`.
pub fn feature_fusion(b: &Binder, f_img: Tensor, f_exp: Tensor) -> Tensor {
    let t = b.tape;
    let img_h = linear(b, f_img, "fus.img_proj.w", "fus.img_proj.b");
    let pair = t.concat_rows(&[img_h, f_exp]);
    let attended = multi_head_attention(b, pair, pair, pair, 4, None, "fus.attn");
    let x = t.add(pair, attended);
    let f = linear(b, x, "fus.ffn.w1", "fus.ffn.b1");
    let f = t.relu(f);
    let f = linear(b, f, "fus.ffn.w2", "fus.ffn.b2");
    let x = t.add(x, f);
    t.mean_rows(x)
}

/// Adam optimizer state, keyed like the parameter store.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new() -> AdamState {
        AdamState::default()
    }
}

/// Standard bias-corrected Adam update over the named gradients.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
    lr: f64,
) {
    state.t += 1;
    let t = state.t as i32;
    for (name, g) in grads {
        let p = params.map.get_mut(name).unwrap_or_else(|| panic!("unknown param '{name}'"));
        assert_eq!(g.len(), p.values.len(), "gradient shape mismatch for '{name}'");
        let m = state.m.entry(name.clone()).or_insert_with(|| alloc::vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| alloc::vec![0.0; g.len()]);
        let bc1 = 1.0 - libm::pow(ADAM_BETA1, t as f64);
        let bc2 = 1.0 - libm::pow(ADAM_BETA2, t as f64);
        for i in 0..g.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p.values[i] -= lr * mhat / (crate::math::sqrt(vhat) + ADAM_EPS);
        }
    }
}
