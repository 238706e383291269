//! Dataset ingestion, a synthetic citation generator, and checkpointing.
//!
//! Papers file: one line per paper, `id|YYYY-MM-DD|ref1,ref2,...` (the
//! reference list may be empty). Embeddings file: a `dim D` header, then
//! `id v1 .. vD` per line. Checkpoints are versioned little-endian binary.

use crate::error::{Error, Result};
use crate::graph::{Event, NodeId, TemporalGraph};
use crate::memory::MemoryState;
use crate::model::ModelParams;
use crate::tensor::{AdamHyper, AdamState, Scalar, Tensor};
use crate::train::{EpochStats, TrainConfig, TrainerState};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// One parsed paper line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaperRecord {
    pub id: String,
    pub date: NaiveDate,
    pub refs: Vec<String>,
}

/// Parse the papers file format. Blank lines and `#` comments are
/// skipped; malformed lines are reported with their line number.
pub fn parse_papers(text: &str) -> Result<Vec<PaperRecord>> {
    let mut out = Vec::new();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            line: i + 1,
            msg,
        };
        let mut parts = line.splitn(3, '|');
        let id = parts
            .next()
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| err("missing paper id".into()))?;
        let date_str = parts
            .next()
            .map(str::trim)
            .ok_or_else(|| err("missing date field".into()))?;
        let refs_str = parts
            .next()
            .ok_or_else(|| err("missing reference field".into()))?;
        let date = NaiveDate::parse_from_str(date_str, "%Y-%m-%d")
            .map_err(|e| err(format!("bad date '{date_str}': {e}")))?;
        if let Some(&first) = seen.get(id) {
            return Err(err(format!(
                "duplicate paper id '{id}' (first at line {first})"
            )));
        }
        seen.insert(id, i + 1);
        let refs = refs_str
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        out.push(PaperRecord {
            id: id.into(),
            date,
            refs,
        });
    }
    Ok(out)
}

/// A citation graph with its paper-id bookkeeping.
#[derive(Debug)]
pub struct CitationDataset {
    /// Frozen graph, events in chronological order, times in days since
    /// the earliest paper.
    pub graph: TemporalGraph,
    /// Paper id per node, indexed by node id.
    pub ids: Vec<String>,
    pub index: BTreeMap<String, NodeId>,
    /// References pointing outside the corpus (or at the citing paper
    /// itself) that were dropped.
    pub dropped_refs: usize,
    pub base_date: NaiveDate,
}

/// Build a frozen dataset from parsed records, optionally attaching node
/// embeddings. Papers whose ids are missing from the embeddings file get
/// zero rows.
pub fn build_dataset(
    records: &[PaperRecord],
    embeddings: Option<&EmbeddingTable>,
) -> Result<CitationDataset> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no papers to load".into()));
    }
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let index: BTreeMap<String, NodeId> = ids
        .iter()
        .enumerate()
        .map(|(v, id)| (id.clone(), v))
        .collect();
    let base_date = records.iter().map(|r| r.date).min().expect("nonempty");

    let mut dropped = 0usize;
    let mut edges = Vec::new();
    for (v, r) in records.iter().enumerate() {
        let t = (r.date - base_date).num_days() as f64;
        for dst in &r.refs {
            match index.get(dst) {
                Some(&d) if d != v => edges.push((v, d, t, None)),
                _ => dropped += 1,
            }
        }
    }
    let mut graph = TemporalGraph::new();
    graph.bulk_load(edges)?;
    graph.ensure_nodes(records.len())?;
    if let Some(table) = embeddings {
        let mut feats = Tensor::zeros(&[records.len(), table.dim]);
        for (id, row) in &table.rows {
            let &v = index.get(id).ok_or_else(|| {
                Error::InvalidArgument(format!("embedding for unknown paper '{id}'"))
            })?;
            feats.data_mut()[v * table.dim..(v + 1) * table.dim].copy_from_slice(row);
        }
        graph.set_node_features(feats)?;
    }
    graph.freeze(None);
    Ok(CitationDataset {
        graph,
        ids,
        index,
        dropped_refs: dropped,
        base_date,
    })
}

/// Parsed embeddings file: dimension plus per-paper rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub rows: Vec<(String, Vec<f64>)>,
}

pub fn parse_embeddings(text: &str) -> Result<EmbeddingTable> {
    let mut dim: Option<usize> = None;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            line: i + 1,
            msg,
        };
        let mut fields = line.split_whitespace();
        let head = fields.next().expect("non-blank line");
        match dim {
            None => {
                if head != "dim" {
                    return Err(err("expected 'dim D' header".into()));
                }
                let d: usize = fields
                    .next()
                    .and_then(|s| s.parse().ok())
                    .filter(|&d| d > 0)
                    .ok_or_else(|| err("bad embedding dimension".into()))?;
                dim = Some(d);
            }
            Some(d) => {
                let values: Vec<f64> = fields
                    .map(|s| {
                        s.parse()
                            .map_err(|_| err(format!("bad embedding value '{s}'")))
                    })
                    .collect::<Result<_>>()?;
                if values.len() != d {
                    return Err(err(format!(
                        "expected {d} values for '{head}', got {}",
                        values.len()
                    )));
                }
                rows.push((head.to_string(), values));
            }
        }
    }
    let dim = dim.ok_or(Error::Parse {
        line: 1,
        msg: "embeddings file is empty".into(),
    })?;
    Ok(EmbeddingTable { dim, rows })
}

/// Read a papers file (and optional embeddings file) into a frozen
/// dataset.
pub fn load_citation_dataset(
    papers_path: &Path,
    embeddings_path: Option<&Path>,
) -> Result<CitationDataset> {
    let text = std::fs::read_to_string(papers_path)?;
    let records = parse_papers(&text)?;
    let table = match embeddings_path {
        Some(p) => Some(parse_embeddings(&std::fs::read_to_string(p)?)?),
        None => None,
    };
    build_dataset(&records, table.as_ref())
}

/// Knobs for the synthetic citation corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub papers: usize,
    /// Citations issued by each non-seed paper at publication.
    pub refs_per_paper: usize,
    /// Initial papers published with no references.
    pub seed_papers: usize,
    pub clusters: usize,
    pub feat_dim: usize,
    /// Preferential-attachment strength; 0 disables degree bias.
    pub attach_exponent: f64,
    /// Recency half-life in days; `INFINITY` disables the recency bias.
    pub recency_half_life: f64,
    /// Extra weight for same-cluster targets; 0 disables it.
    pub cluster_affinity: f64,
    /// Mean gap between publications, in days.
    pub mean_gap: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            papers: 500,
            refs_per_paper: 10,
            seed_papers: 12,
            clusters: 5,
            feat_dim: 16,
            attach_exponent: 1.0,
            recency_half_life: 180.0,
            cluster_affinity: 3.0,
            mean_gap: 3.0,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.papers <= self.seed_papers {
            return Err(Error::InvalidConfig(format!(
                "papers ({}) must exceed seed_papers ({})",
                self.papers, self.seed_papers
            )));
        }
        if self.refs_per_paper == 0 || self.refs_per_paper > self.seed_papers {
            return Err(Error::InvalidConfig(format!(
                "refs_per_paper ({}) must be in 1..=seed_papers ({})",
                self.refs_per_paper, self.seed_papers
            )));
        }
        if self.clusters == 0 || self.feat_dim == 0 {
            return Err(Error::InvalidConfig(
                "clusters and feat_dim must be positive".into(),
            ));
        }
        if !(self.mean_gap > 0.0) || !(self.recency_half_life > 0.0) {
            return Err(Error::InvalidConfig(
                "mean_gap and recency_half_life must be positive".into(),
            ));
        }
        if self.attach_exponent < 0.0 || self.cluster_affinity < 0.0 {
            return Err(Error::InvalidConfig(
                "attach_exponent and cluster_affinity must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Generated corpus: records serializable to the papers format plus node
/// features serializable to the embeddings format.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub records: Vec<PaperRecord>,
    pub features: Tensor<f64>,
    pub clusters: Vec<usize>,
}

/// Sequential citation process: papers arrive on a Poisson-ish clock and
/// cite earlier papers with probability proportional to
/// `(indeg+1)^a * 2^(-age/half_life) * (1 + affinity * same_cluster)`.
/// With `a = 0`, infinite half-life, and zero affinity the choice is
/// uniform over earlier papers.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base_date = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
    let gap = Exp::new(1.0 / cfg.mean_gap)
        .map_err(|e| Error::InvalidConfig(format!("bad mean_gap: {e}")))?;
    let noise = Normal::new(0.0, 0.3).expect("valid stddev");
    let centroid_dist = Normal::new(0.0, 1.0).expect("valid stddev");

    let clusters: Vec<usize> = (0..cfg.papers)
        .map(|_| rng.random_range(0..cfg.clusters))
        .collect();
    let centroids: Vec<Vec<f64>> = (0..cfg.clusters)
        .map(|_| (0..cfg.feat_dim).map(|_| centroid_dist.sample(&mut rng)).collect())
        .collect();
    let mut features = Tensor::zeros(&[cfg.papers, cfg.feat_dim]);
    for p in 0..cfg.papers {
        let c = &centroids[clusters[p]];
        for (j, &cv) in c.iter().enumerate() {
            features.data_mut()[p * cfg.feat_dim + j] = cv + noise.sample(&mut rng);
        }
    }

    let mut records = Vec::with_capacity(cfg.papers);
    let mut indeg = vec![0usize; cfg.papers];
    let mut last_active = vec![0.0f64; cfg.papers];
    let mut day = 0i64;
    for p in 0..cfg.papers {
        if p >= cfg.seed_papers {
            day += (gap.sample(&mut rng).round() as i64).max(1);
        }
        let t = day as f64;
        let mut refs = Vec::new();
        if p >= cfg.seed_papers {
            let mut chosen = vec![false; p];
            for _ in 0..cfg.refs_per_paper {
                let weights: Vec<f64> = (0..p)
                    .map(|q| {
                        if chosen[q] {
                            return 0.0;
                        }
                        let degree = ((indeg[q] + 1) as f64).powf(cfg.attach_exponent);
                        let recency = if cfg.recency_half_life.is_finite() {
                            (-(t - last_active[q]) / cfg.recency_half_life * std::f64::consts::LN_2)
                                .exp()
                        } else {
                            1.0
                        };
                        let affinity = if clusters[q] == clusters[p] {
                            1.0 + cfg.cluster_affinity
                        } else {
                            1.0
                        };
                        degree * recency * affinity
                    })
                    .collect();
                let total: f64 = weights.iter().sum();
                let mut pick = rng.random_range(0.0..total);
                let mut q = 0;
                for (i, w) in weights.iter().enumerate() {
                    pick -= w;
                    if pick <= 0.0 {
                        q = i;
                        break;
                    }
                }
                chosen[q] = true;
                refs.push(q);
            }
            for &q in &refs {
                indeg[q] += 1;
                last_active[q] = t;
            }
        }
        last_active[p] = t;
        records.push(PaperRecord {
            id: format!("P{p:04}"),
            date: base_date + chrono::Days::new(day as u64),
            refs: refs.iter().map(|&q| format!("P{q:04}")).collect(),
        });
    }
    Ok(SyntheticData {
        records,
        features,
        clusters,
    })
}

impl SyntheticData {
    pub fn papers_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!(
                "{}|{}|{}\n",
                r.id,
                r.date.format("%Y-%m-%d"),
                r.refs.join(",")
            ));
        }
        out
    }

    pub fn embeddings_text(&self) -> String {
        let dim = self.features.cols();
        let mut out = format!("dim {dim}\n");
        for (p, r) in self.records.iter().enumerate() {
            let row: Vec<String> = self.features.row(p).iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&format!("{} {}\n", r.id, row.join(" ")));
        }
        out
    }

    /// Frozen in-memory dataset with the generated features attached.
    pub fn to_dataset(&self) -> Result<CitationDataset> {
        let table = EmbeddingTable {
            dim: self.features.cols(),
            rows: self
                .records
                .iter()
                .enumerate()
                .map(|(p, r)| (r.id.clone(), self.features.row(p).to_vec()))
                .collect(),
        };
        build_dataset(&self.records, Some(&table))
    }
}

// ---------------------------------------------------------------------------
// checkpointing

const CKPT_MAGIC: &[u8; 8] = b"TGRCKPT\0";
const CKPT_VERSION: u32 = 1;

fn write_tensor<F: Scalar>(w: &mut impl Write, t: &Tensor<F>) -> Result<()> {
    w.write_u32::<LittleEndian>(t.shape().len() as u32)?;
    for &d in t.shape() {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    for &x in t.data() {
        w.write_f64::<LittleEndian>(x.into_f64())?;
    }
    Ok(())
}

fn read_tensor<F: Scalar>(r: &mut impl Read) -> Result<Tensor<F>> {
    let rank = r.read_u32::<LittleEndian>()? as usize;
    if rank > 2 {
        return Err(Error::Checkpoint(format!("tensor rank {rank} unsupported")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.read_u64::<LittleEndian>()? as usize);
    }
    let len: usize = shape.iter().product();
    if len > 1 << 28 {
        return Err(Error::Checkpoint(format!("tensor of {len} elements refused")));
    }
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(F::from_f64(r.read_f64::<LittleEndian>()?));
    }
    Tensor::from_vec(&shape, data)
}

fn write_string(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_u64::<LittleEndian>(s.len() as u64)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let len = r.read_u64::<LittleEndian>()? as usize;
    if len > 1 << 20 {
        return Err(Error::Checkpoint(format!("string of {len} bytes refused")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(format!("bad utf-8: {e}")))
}

fn write_event(w: &mut impl Write, e: &Event) -> Result<()> {
    w.write_u64::<LittleEndian>(e.event_id)?;
    w.write_u64::<LittleEndian>(e.src as u64)?;
    w.write_u64::<LittleEndian>(e.dst as u64)?;
    w.write_f64::<LittleEndian>(e.t)?;
    match &e.edge_feat {
        None => w.write_u8(0)?,
        Some(f) => {
            w.write_u8(1)?;
            w.write_u64::<LittleEndian>(f.len() as u64)?;
            for &x in f {
                w.write_f64::<LittleEndian>(x)?;
            }
        }
    }
    Ok(())
}

fn read_event(r: &mut impl Read) -> Result<Event> {
    let event_id = r.read_u64::<LittleEndian>()?;
    let src = r.read_u64::<LittleEndian>()? as usize;
    let dst = r.read_u64::<LittleEndian>()? as usize;
    let t = r.read_f64::<LittleEndian>()?;
    let edge_feat = match r.read_u8()? {
        0 => None,
        1 => {
            let len = r.read_u64::<LittleEndian>()? as usize;
            if len > 1 << 20 {
                return Err(Error::Checkpoint(format!("edge feature of {len} refused")));
            }
            let mut f = Vec::with_capacity(len);
            for _ in 0..len {
                f.push(r.read_f64::<LittleEndian>()?);
            }
            Some(f)
        }
        x => return Err(Error::Checkpoint(format!("bad edge-feature flag {x}"))),
    };
    Ok(Event {
        event_id,
        src,
        dst,
        t,
        edge_feat,
    })
}

/// Write the full training state: config echo, named parameters,
/// optimizer moments, committed and initial memory, deferred events,
/// loop counters, RNG position, and history.
pub fn save_checkpoint<F: Scalar>(
    path: &Path,
    config: &TrainConfig,
    state: &TrainerState<F>,
) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_u32::<LittleEndian>(CKPT_VERSION)?;
    w.write_u8(F::BITS)?;
    write_string(&mut w, &config.to_kv())?;

    let tensors = state.params.tensors();
    w.write_u64::<LittleEndian>(tensors.len() as u64)?;
    for (name, t) in &tensors {
        write_string(&mut w, name)?;
        write_tensor(&mut w, t)?;
    }

    let a = &state.adam;
    w.write_u64::<LittleEndian>(a.step)?;
    for h in [a.hyper.lr, a.hyper.beta1, a.hyper.beta2, a.hyper.eps] {
        w.write_f64::<LittleEndian>(h.into_f64())?;
    }
    for buf in [&a.m, &a.v] {
        if buf.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer tracks {} tensors but model has {}",
                buf.len(),
                tensors.len()
            )));
        }
        for t in buf.iter() {
            write_tensor(&mut w, t)?;
        }
    }

    state.memory.write_to(&mut w)?;
    state.initial_memory.write_to(&mut w)?;

    w.write_u64::<LittleEndian>(state.pending.len() as u64)?;
    for e in &state.pending {
        write_event(&mut w, e)?;
    }

    w.write_u64::<LittleEndian>(state.epoch as u64)?;
    w.write_u64::<LittleEndian>(state.cursor as u64)?;
    w.write_f64::<LittleEndian>(state.epoch_loss_accum)?;
    w.write_u64::<LittleEndian>(state.epoch_batches as u64)?;
    w.write_f64::<LittleEndian>(state.max_grad_event_time)?;
    // 0 encodes "no update yet", otherwise id + 1
    w.write_u64::<LittleEndian>(state.max_grad_event_id.map_or(0, |id| id + 1))?;
    w.write_u8(state.done as u8)?;

    w.write_all(&state.rng.get_seed())?;
    let pos = state.rng.get_word_pos();
    w.write_u64::<LittleEndian>(pos as u64)?;
    w.write_u64::<LittleEndian>((pos >> 64) as u64)?;
    w.write_u64::<LittleEndian>(state.rng.get_stream())?;

    w.write_u64::<LittleEndian>(state.history.len() as u64)?;
    for s in &state.history {
        w.write_u64::<LittleEndian>(s.epoch as u64)?;
        for v in [s.loss, s.val_mrr, s.val_ap, s.val_auc] {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<(TrainConfig, TrainerState<F>)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CKPT_VERSION})"
        )));
    }
    let bits = r.read_u8()?;
    if bits != F::BITS {
        return Err(Error::Checkpoint(format!(
            "checkpoint stores {bits}-bit parameters but {}-bit were requested",
            F::BITS
        )));
    }
    let config = TrainConfig::from_kv(&read_string(&mut r)?)?;

    let count = r.read_u64::<LittleEndian>()? as usize;
    let mut named: Vec<(String, Tensor<F>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_string(&mut r)?;
        named.push((name, read_tensor(&mut r)?));
    }
    let feat_dim = named
        .iter()
        .find(|(n, _)| n == "proj")
        .map(|(_, t)| t.rows());
    let dims = config.dims(feat_dim);
    let mut params = ModelParams::init(dims, &mut ChaCha8Rng::seed_from_u64(0))?;
    {
        let mut slots = params.tensors_mut();
        if slots.len() != named.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, model expects {}",
                named.len(),
                slots.len()
            )));
        }
        for ((name, stored), (expect, slot)) in named.into_iter().zip(slots.iter_mut()) {
            if &name != expect {
                return Err(Error::Checkpoint(format!(
                    "parameter order mismatch: found '{name}', expected '{expect}'"
                )));
            }
            if stored.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    stored.shape(),
                    slot.shape()
                )));
            }
            **slot = stored;
        }
    }

    let step = r.read_u64::<LittleEndian>()?;
    let mut hyper = [0.0f64; 4];
    for h in &mut hyper {
        *h = r.read_f64::<LittleEndian>()?;
    }
    let read_buf = |r: &mut BufReader<std::fs::File>| -> Result<Vec<Tensor<F>>> {
        (0..count).map(|_| read_tensor(r)).collect()
    };
    let m = read_buf(&mut r)?;
    let v = read_buf(&mut r)?;
    let adam = AdamState {
        hyper: AdamHyper {
            lr: F::from_f64(hyper[0]),
            beta1: F::from_f64(hyper[1]),
            beta2: F::from_f64(hyper[2]),
            eps: F::from_f64(hyper[3]),
        },
        step,
        m,
        v,
    };

    let memory = MemoryState::read_from(&mut r)?;
    let initial_memory = MemoryState::read_from(&mut r)?;

    let n_pending = r.read_u64::<LittleEndian>()? as usize;
    if n_pending > 1 << 24 {
        return Err(Error::Checkpoint(format!(
            "{n_pending} pending events refused"
        )));
    }
    let pending = (0..n_pending)
        .map(|_| read_event(&mut r))
        .collect::<Result<Vec<_>>>()?;

    let epoch = r.read_u64::<LittleEndian>()? as usize;
    let cursor = r.read_u64::<LittleEndian>()? as usize;
    let epoch_loss_accum = r.read_f64::<LittleEndian>()?;
    let epoch_batches = r.read_u64::<LittleEndian>()? as usize;
    let max_grad_event_time = r.read_f64::<LittleEndian>()?;
    let max_grad_event_id = match r.read_u64::<LittleEndian>()? {
        0 => None,
        id => Some(id - 1),
    };
    let done = r.read_u8()? != 0;

    let mut seed = [0u8; 32];
    r.read_exact(&mut seed)?;
    let lo = r.read_u64::<LittleEndian>()? as u128;
    let hi = r.read_u64::<LittleEndian>()? as u128;
    let stream = r.read_u64::<LittleEndian>()?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(lo | (hi << 64));

    let n_hist = r.read_u64::<LittleEndian>()? as usize;
    if n_hist > 1 << 24 {
        return Err(Error::Checkpoint(format!("{n_hist} history rows refused")));
    }
    let mut history = Vec::with_capacity(n_hist);
    for _ in 0..n_hist {
        let epoch = r.read_u64::<LittleEndian>()? as usize;
        let mut vals = [0.0f64; 4];
        for v in &mut vals {
            *v = r.read_f64::<LittleEndian>()?;
        }
        history.push(EpochStats {
            epoch,
            loss: vals[0],
            val_mrr: vals[1],
            val_ap: vals[2],
            val_auc: vals[3],
        });
    }

    Ok((
        config,
        TrainerState {
            params,
            adam,
            memory,
            initial_memory,
            pending,
            epoch,
            cursor,
            epoch_loss_accum,
            epoch_batches,
            rng,
            history,
            max_grad_event_time,
            max_grad_event_id,
            done,
        },
    ))
}
