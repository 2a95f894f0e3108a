//! Joint intent/slot datasets: JSONL ingestion, a synthetic generator with
//! controllable label noise, and deterministic mini-batching.
//!
//! Every example is padded to the dataset's `max_len`. Real tokens occupy a
//! prefix of the sequence and `mask` marks them; padded positions carry
//! [`PAD_TOKEN`] and [`NULL_SLOT`] and are ignored by losses, scores and metrics.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed::{substream_rng, Stream};

pub const PAD_TOKEN: usize = 0;
pub const NULL_SLOT: usize = 0;
pub const PAD_NAME: &str = "<pad>";
pub const NULL_SLOT_NAME: &str = "O";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: usize,
    pub tokens: Vec<usize>,
    pub intent: usize,
    pub slots: Vec<usize>,
    pub mask: Vec<bool>,
    /// Set only for data that went through the synthetic pipeline.
    pub mislabeled: Option<bool>,
}

impl Example {
    /// Number of real (unpadded) tokens.
    pub fn true_len(&self) -> usize {
        self.mask.iter().take_while(|&&m| m).count()
    }

    pub fn is_mislabeled(&self) -> bool {
        self.mislabeled.unwrap_or(false)
    }
}

/// Index-to-name tables for tokens, intents and slots.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub tokens: Vec<String>,
    pub intents: Vec<String>,
    pub slots: Vec<String>,
}

impl Schema {
    fn sidecar(path: &Path, ext: &str) -> PathBuf {
        path.with_extension(ext)
    }

    /// Reads `<stem>.vocab`, `<stem>.intents` and `<stem>.slots` next to a
    /// JSONL file. Returns `None` unless all three exist.
    pub fn read_sidecars(jsonl: &Path) -> Result<Option<Schema>> {
        let paths = ["vocab", "intents", "slots"].map(|ext| Self::sidecar(jsonl, ext));
        if !paths.iter().all(|p| p.exists()) {
            return Ok(None);
        }
        let [tokens, intents, slots] = paths.map(|p| read_lines(&p));
        Ok(Some(Schema {
            tokens: tokens?,
            intents: intents?,
            slots: slots?,
        }))
    }

    pub fn write_sidecars(&self, jsonl: &Path) -> Result<()> {
        for (ext, names) in [("vocab", &self.tokens), ("intents", &self.intents), ("slots", &self.slots)] {
            let mut w = BufWriter::new(File::create(Self::sidecar(jsonl, ext))?);
            for name in names {
                writeln!(w, "{name}")?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let reader = BufReader::new(File::open(path)?);
    reader.lines().map(|l| l.map_err(Error::from)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    schema: Schema,
    max_len: usize,
}

impl Dataset {
    /// Builds a dataset, checking every structural invariant.
    pub fn new(examples: Vec<Example>, schema: Schema, max_len: usize) -> Result<Self> {
        let (v, ki, ks) = (schema.tokens.len(), schema.intents.len(), schema.slots.len());
        for (i, ex) in examples.iter().enumerate() {
            let bad = |msg: String| Error::Validation { line: i + 1, msg };
            if ex.id != i {
                return Err(bad(format!("id {} at position {i}; ids must be 0..N-1", ex.id)));
            }
            if ex.tokens.len() != max_len || ex.slots.len() != max_len || ex.mask.len() != max_len {
                return Err(bad(format!("sequence not padded to max_len {max_len}")));
            }
            let n = ex.true_len();
            if ex.mask[n..].iter().any(|&m| m) {
                return Err(bad("mask must be a contiguous prefix".into()));
            }
            if ex.intent >= ki {
                return Err(bad(format!("intent {} out of range (K_intent = {ki})", ex.intent)));
            }
            if let Some(&t) = ex.tokens.iter().find(|&&t| t >= v) {
                return Err(bad(format!("token {t} out of range (vocab size {v})")));
            }
            if let Some(&s) = ex.slots.iter().find(|&&s| s >= ks) {
                return Err(bad(format!("slot {s} out of range (K_slot = {ks})")));
            }
            if ex.slots[n..].iter().any(|&s| s != NULL_SLOT) || ex.tokens[n..].iter().any(|&t| t != PAD_TOKEN) {
                return Err(bad("padding positions must carry pad token and null slot".into()));
            }
        }
        Ok(Self { examples, schema, max_len })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn get(&self, id: usize) -> Option<&Example> {
        self.examples.get(id)
    }

    /// Borrow the examples named by `ids`, in that order.
    pub fn select(&self, ids: &[usize]) -> Vec<&Example> {
        ids.iter().map(|&i| &self.examples[i]).collect()
    }

    pub fn all_ids(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_intents(&self) -> usize {
        self.schema.intents.len()
    }

    pub fn n_slots(&self) -> usize {
        self.schema.slots.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.schema.tokens.len()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn mislabeled_ids(&self) -> Vec<usize> {
        self.examples.iter().filter(|e| e.is_mislabeled()).map(|e| e.id).collect()
    }

    /// SHA-256 over the canonical JSON encoding of examples and schema.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.schema).expect("schema serializes"));
        hasher.update(self.max_len.to_le_bytes());
        for ex in &self.examples {
            hasher.update(serde_json::to_vec(ex).expect("example serializes"));
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Seeded train/eval split. Both halves are re-indexed from zero.
    pub fn split(&self, eval_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
            return Err(Error::config(format!("eval fraction {eval_fraction} not in (0,1)")));
        }
        let mut ids = self.all_ids();
        ids.shuffle(&mut substream_rng(seed, Stream::Split, 0));
        let n_eval = ((self.len() as f64) * eval_fraction).round() as usize;
        let (eval_ids, train_ids) = ids.split_at(n_eval);
        let mut train_ids = train_ids.to_vec();
        let mut eval_ids = eval_ids.to_vec();
        train_ids.sort_unstable();
        eval_ids.sort_unstable();
        Ok((self.subset(&train_ids), self.subset(&eval_ids)))
    }

    fn subset(&self, ids: &[usize]) -> Dataset {
        let examples = ids
            .iter()
            .enumerate()
            .map(|(new_id, &old)| Example { id: new_id, ..self.examples[old].clone() })
            .collect();
        Dataset { examples, schema: self.schema.clone(), max_len: self.max_len }
    }
}

// ---------------------------------------------------------------------------
// JSONL
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(untagged)]
enum Label {
    Index(usize),
    Name(String),
}

#[derive(Deserialize)]
struct RawRecord {
    tokens: Vec<Label>,
    intent: Label,
    slots: Vec<Label>,
    #[serde(default)]
    mislabeled: Option<bool>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    tokens: Vec<&'a str>,
    intent: &'a str,
    slots: Vec<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mislabeled: Option<bool>,
}

#[derive(Clone, Copy, PartialEq)]
enum LabelKind {
    Index,
    Name,
}

/// Maps record labels to indices, growing the table unless frozen.
struct Interner {
    what: &'static str,
    names: Vec<String>,
    index: HashMap<String, usize>,
    frozen: bool,
    kind: Option<LabelKind>,
}

impl Interner {
    fn new(what: &'static str, names: Vec<String>, frozen: bool) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { what, names, index, frozen, kind: None }
    }

    fn resolve(&mut self, label: &Label, line: usize) -> Result<usize> {
        let kind = match label {
            Label::Index(_) => LabelKind::Index,
            Label::Name(_) => LabelKind::Name,
        };
        if *self.kind.get_or_insert(kind) != kind {
            return Err(Error::Validation {
                line,
                msg: format!("{} labels mix integer and string encodings", self.what),
            });
        }
        match label {
            Label::Index(i) => {
                if *i >= self.names.len() {
                    if self.frozen {
                        return Err(Error::Validation {
                            line,
                            msg: format!("{} index {i} outside vocabulary of {}", self.what, self.names.len()),
                        });
                    }
                    for j in self.names.len()..=*i {
                        self.names.push(j.to_string());
                        self.index.insert(j.to_string(), j);
                    }
                }
                Ok(*i)
            }
            Label::Name(name) => match self.index.get(name) {
                Some(&i) => Ok(i),
                None if self.frozen => Err(Error::Validation {
                    line,
                    msg: format!("unknown {} `{name}`", self.what),
                }),
                None => {
                    let i = self.names.len();
                    self.names.push(name.clone());
                    self.index.insert(name.clone(), i);
                    Ok(i)
                }
            },
        }
    }
}

/// Loads a JSONL dataset, padding every record to `max_len`.
///
/// If `<stem>.vocab`, `<stem>.intents` and `<stem>.slots` sit next to the
/// file they fix the index tables; otherwise tables are built in order of
/// first appearance, with `<pad>` at token 0 and `O` at slot 0.
pub fn load_jsonl(path: &Path, max_len: usize) -> Result<Dataset> {
    match Schema::read_sidecars(path)? {
        Some(schema) => load_jsonl_with_schema(path, max_len, Some(schema)),
        None => load_jsonl_with_schema(path, max_len, None),
    }
}

pub fn load_jsonl_with_schema(path: &Path, max_len: usize, schema: Option<Schema>) -> Result<Dataset> {
    let frozen = schema.is_some();
    let schema = schema.unwrap_or_else(|| Schema {
        tokens: vec![PAD_NAME.to_string()],
        intents: Vec::new(),
        slots: vec![NULL_SLOT_NAME.to_string()],
    });
    let mut tokens = Interner::new("token", schema.tokens, frozen);
    let mut intents = Interner::new("intent", schema.intents, frozen);
    let mut slots = Interner::new("slot", schema.slots, frozen);

    let reader = BufReader::new(File::open(path)?);
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if raw.tokens.len() != raw.slots.len() {
            return Err(Error::Validation {
                line: line_no,
                msg: format!("{} tokens but {} slots", raw.tokens.len(), raw.slots.len()),
            });
        }
        if raw.tokens.len() > max_len {
            return Err(Error::Validation {
                line: line_no,
                msg: format!("{} tokens exceeds max_len {max_len}", raw.tokens.len()),
            });
        }
        let n = raw.tokens.len();
        let mut tok = vec![PAD_TOKEN; max_len];
        let mut sl = vec![NULL_SLOT; max_len];
        let mut mask = vec![false; max_len];
        for m in 0..n {
            tok[m] = tokens.resolve(&raw.tokens[m], line_no)?;
            sl[m] = slots.resolve(&raw.slots[m], line_no)?;
            mask[m] = true;
        }
        let intent = intents.resolve(&raw.intent, line_no)?;
        examples.push(Example {
            id: examples.len(),
            tokens: tok,
            intent,
            slots: sl,
            mask,
            mislabeled: raw.mislabeled,
        });
    }
    let schema = Schema { tokens: tokens.names, intents: intents.names, slots: slots.names };
    Dataset::new(examples, schema, max_len)
}

/// Writes records with symbolic names plus the three schema sidecars.
pub fn save_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let schema = dataset.schema();
    let mut w = BufWriter::new(File::create(path)?);
    for ex in dataset.examples() {
        let n = ex.true_len();
        let rec = OutRecord {
            tokens: ex.tokens[..n].iter().map(|&t| schema.tokens[t].as_str()).collect(),
            intent: &schema.intents[ex.intent],
            slots: ex.slots[..n].iter().map(|&s| schema.slots[s].as_str()).collect(),
            mislabeled: ex.mislabeled,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    schema.write_sidecars(path)
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_examples: usize,
    pub n_intents: usize,
    pub n_slots: usize,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Exponent of the power-law intent prior; 0 is uniform.
    pub intent_skew: f64,
    pub slot_density: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_examples: 1000,
            n_intents: 10,
            n_slots: 6,
            vocab_size: 200,
            min_len: 3,
            max_len: 12,
            intent_skew: 1.0,
            slot_density: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_len < 1 || self.max_len < self.min_len {
            return Err(Error::config(format!(
                "need 1 <= min_len <= max_len, got {}..{}",
                self.min_len, self.max_len
            )));
        }
        if !(0.0..=1.0).contains(&self.slot_density) {
            return Err(Error::config(format!("slot_density {} not in [0,1]", self.slot_density)));
        }
        if !(self.intent_skew >= 0.0 && self.intent_skew.is_finite()) {
            return Err(Error::config("intent_skew must be a finite nonnegative number"));
        }
        if self.n_intents < 1 || self.n_slots < 1 {
            return Err(Error::config("need at least one intent and one slot class"));
        }
        if self.n_intents > self.vocab_size / 2 {
            return Err(Error::config(format!(
                "n_intents {} > vocab_size/2 = {}: insufficient token signal",
                self.n_intents,
                self.vocab_size / 2
            )));
        }
        Ok(())
    }
}

const MAX_KEYWORDS: usize = 6;
const MAX_ENTITIES: usize = 12;

/// Partition of the vocabulary into pad, intent keywords, per-slot entity
/// tokens and filler words. Keyword and entity pools are capped; any further
/// vocabulary becomes filler.
struct VocabLayout {
    keywords_per_intent: usize,
    entities_per_slot: usize,
    entity_start: usize,
    filler_start: usize,
    n_filler: usize,
}

impl VocabLayout {
    fn new(spec: &SyntheticSpec) -> Result<Self> {
        let available = spec.vocab_size - 1;
        let keywords_per_intent = (available / (4 * spec.n_intents)).clamp(1, MAX_KEYWORDS);
        let rest = available - keywords_per_intent * spec.n_intents;
        let n_entity_classes = spec.n_slots - 1;
        if rest < n_entity_classes + 1 {
            return Err(Error::config(format!(
                "vocab_size {} too small for {} intents and {} slot classes",
                spec.vocab_size, spec.n_intents, spec.n_slots
            )));
        }
        let entities_per_slot = if n_entity_classes == 0 {
            0
        } else {
            (rest / (2 * n_entity_classes)).clamp(1, ((rest - 1) / n_entity_classes).min(MAX_ENTITIES))
        };
        let entity_start = 1 + keywords_per_intent * spec.n_intents;
        let filler_start = entity_start + entities_per_slot * n_entity_classes;
        Ok(Self {
            keywords_per_intent,
            entities_per_slot,
            entity_start,
            filler_start,
            n_filler: spec.vocab_size - filler_start,
        })
    }

    fn keyword(&self, intent: usize, j: usize) -> usize {
        1 + intent * self.keywords_per_intent + j
    }

    fn entity(&self, slot: usize, j: usize) -> usize {
        self.entity_start + (slot - 1) * self.entities_per_slot + j
    }

    fn token_names(&self, spec: &SyntheticSpec) -> Vec<String> {
        let mut names = vec![PAD_NAME.to_string()];
        for k in 0..spec.n_intents {
            names.extend((0..self.keywords_per_intent).map(|j| format!("kw{k}_{j}")));
        }
        for s in 1..spec.n_slots {
            names.extend((0..self.entities_per_slot).map(|j| format!("ent{s}_{j}")));
        }
        names.extend((0..self.n_filler).map(|j| format!("w{j}")));
        names
    }
}

fn zipf(n: usize) -> Option<WeightedIndex<f64>> {
    (n > 0).then(|| WeightedIndex::new((1..=n).map(|r| 1.0 / r as f64)).expect("positive weights"))
}

/// Generates a learnable joint intent/slot dataset.
///
/// Each intent owns a pool of keyword tokens and each non-null slot class a
/// pool of entity tokens, all drawn with Zipf frequencies, so the rare tail of
/// every pool is hard to learn. About one utterance in five also carries a keyword
/// of a competing intent, outvoted two to one by its own keywords.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let layout = VocabLayout::new(spec)?;
    let mut rng = substream_rng(spec.seed, Stream::Data, 0);

    let prior = WeightedIndex::new((1..=spec.n_intents).map(|k| (k as f64).powf(-spec.intent_skew)))
        .expect("positive prior");
    let keyword_pick = zipf(layout.keywords_per_intent).expect("at least one keyword");
    let entity_pick = zipf(layout.entities_per_slot);
    let filler_pick = zipf(layout.n_filler);

    let mut examples = Vec::with_capacity(spec.n_examples);
    for id in 0..spec.n_examples {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let intent = prior.sample(&mut rng);
        let mut tokens = vec![PAD_TOKEN; spec.max_len];
        let mut slots = vec![NULL_SLOT; spec.max_len];
        for m in 0..len {
            let is_entity = spec.n_slots > 1 && rng.gen::<f64>() < spec.slot_density;
            match (is_entity, &entity_pick, &filler_pick) {
                (true, Some(pick), _) => {
                    let s = rng.gen_range(1..spec.n_slots);
                    tokens[m] = layout.entity(s, pick.sample(&mut rng));
                    slots[m] = s;
                }
                (_, _, Some(pick)) => tokens[m] = layout.filler_start + pick.sample(&mut rng),
                // No filler words at all: fall back to the intent's own keyword.
                _ => tokens[m] = layout.keyword(intent, 0),
            }
        }
        let kw = |rng: &mut ChaCha8Rng, k: usize| layout.keyword(k, keyword_pick.sample(rng));
        if len >= 3 && spec.n_intents > 1 && rng.gen_bool(0.2) {
            let pos = index::sample(&mut rng, len, 3).into_vec();
            let other = (intent + rng.gen_range(1..spec.n_intents)) % spec.n_intents;
            tokens[pos[0]] = kw(&mut rng, intent);
            tokens[pos[1]] = kw(&mut rng, intent);
            tokens[pos[2]] = kw(&mut rng, other);
            for p in pos {
                slots[p] = NULL_SLOT;
            }
        } else {
            let p = rng.gen_range(0..len);
            tokens[p] = kw(&mut rng, intent);
            slots[p] = NULL_SLOT;
        }
        let mut mask = vec![false; spec.max_len];
        mask[..len].fill(true);
        examples.push(Example { id, tokens, intent, slots, mask, mislabeled: Some(false) });
    }

    let schema = Schema {
        tokens: layout.token_names(spec),
        intents: (0..spec.n_intents).map(|k| format!("intent_{k}")).collect(),
        slots: std::iter::once(NULL_SLOT_NAME.to_string())
            .chain((1..spec.n_slots).map(|s| format!("slot_{s}")))
            .collect(),
    };
    Dataset::new(examples, schema, spec.max_len)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MislabelMode {
    Intent,
    Slot,
    Both,
}

impl std::str::FromStr for MislabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intent" => Ok(Self::Intent),
            "slot" => Ok(Self::Slot),
            "both" => Ok(Self::Both),
            other => Err(Error::config(format!("unknown mislabel mode `{other}`"))),
        }
    }
}

/// Resample a wrong label for `floor(rate * N)` uniformly chosen examples.
///
/// Intent corruption draws uniformly from the other intents; slot corruption
/// picks one real token and draws uniformly from the other slot classes.
pub fn inject_mislabels(dataset: &Dataset, rate: f64, mode: MislabelMode, seed: u64) -> Result<Dataset> {
    if !(0.0..=0.5).contains(&rate) {
        return Err(Error::config(format!("mislabel rate {rate} not in [0, 0.5]")));
    }
    let n_flag = (rate * dataset.len() as f64).floor() as usize;
    let mut out = dataset.clone();
    if n_flag == 0 {
        return Ok(out);
    }
    let touch_intent = matches!(mode, MislabelMode::Intent | MislabelMode::Both);
    let touch_slot = matches!(mode, MislabelMode::Slot | MislabelMode::Both);
    let (ki, ks) = (dataset.n_intents(), dataset.n_slots());
    if touch_intent && ki < 2 {
        return Err(Error::config("intent mislabeling needs at least two intents"));
    }
    if touch_slot && ks < 2 {
        return Err(Error::config("slot mislabeling needs at least two slot classes"));
    }

    let mut rng = substream_rng(seed, Stream::Mislabel, 0);
    let mut chosen = index::sample(&mut rng, dataset.len(), n_flag).into_vec();
    chosen.sort_unstable();
    for id in chosen {
        let ex = &mut out.examples[id];
        if touch_intent {
            ex.intent = (ex.intent + rng.gen_range(1..ki)) % ki;
        }
        if touch_slot {
            let n = ex.true_len();
            if n == 0 {
                return Err(Error::input(format!("example {id} has no real tokens to mislabel")));
            }
            let m = rng.gen_range(0..n);
            ex.slots[m] = (ex.slots[m] + rng.gen_range(1..ks)) % ks;
        }
        ex.mislabeled = Some(true);
    }
    Ok(out)
}

/// Deterministically shuffled mini-batches over `indices`; the final partial
/// batch is kept.
pub fn batch_iter(dataset: &Dataset, indices: &[usize], batch_size: usize, shuffle_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be at least 1"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::input(format!("example id {bad} out of range for N = {}", dataset.len())));
    }
    let mut order = indices.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
