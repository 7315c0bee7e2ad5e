//! Encoder throughput: median tokens per second over repeated runs on
//! shared random inputs.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use mru_core::{
    Encoder, EncoderKind, Graph, MruConfig, MruVariant, RangeSet, Rng, SeqMask, Store32, Tensor,
};

use crate::error::{HarnessError, Result};

pub const CSV_HEADER: &str = "encoder,seq_len,dim,batch,mode,median_tokens_per_sec";
const WARMUPS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Forward,
    ForwardBackward,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Forward => "forward",
            Mode::ForwardBackward => "forward_backward",
        })
    }
}

impl FromStr for Mode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Mode::Forward),
            "forward_backward" => Ok(Mode::ForwardBackward),
            other => Err(HarnessError::config(
                "bench",
                format!("unknown mode `{other}` (expected forward or forward_backward)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub encoders: Vec<EncoderKind>,
    pub seq_lens: Vec<usize>,
    pub dim: usize,
    pub batch: usize,
    pub repeats: usize,
    pub modes: Vec<Mode>,
    pub ranges: RangeSet,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            encoders: vec![EncoderKind::SimpleMru, EncoderKind::Mru, EncoderKind::Lstm],
            seq_lens: vec![500],
            dim: 250,
            batch: 32,
            repeats: 5,
            modes: vec![Mode::Forward, Mode::ForwardBackward],
            ranges: RangeSet::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub encoder: EncoderKind,
    pub seq_len: usize,
    pub dim: usize,
    pub batch: usize,
    pub mode: Mode,
    pub median_tokens_per_sec: f64,
}

impl BenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.1}",
            self.encoder, self.seq_len, self.dim, self.batch, self.mode, self.median_tokens_per_sec
        )
    }
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv());
        out.push('\n');
    }
    out
}

fn run_once(
    store: &Store32,
    enc: &Encoder,
    input: &Tensor<f32>,
    mask: &SeqMask,
    mode: Mode,
) -> Result<f64> {
    let start = Instant::now();
    let mut g = Graph::new(store).training(true);
    let x = g.constant(input.clone());
    let h = enc.encode(&mut g, x, mask)?;
    if mode == Mode::ForwardBackward {
        let loss = g.sum_all(h)?;
        g.backward(loss)?;
    }
    Ok(start.elapsed().as_secs_f64())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// One row per (sequence length, encoder, mode), in that nesting order.
pub fn bench(cfg: &BenchConfig, log: &mut dyn FnMut(&str)) -> Result<Vec<BenchRow>> {
    if cfg.repeats == 0 || cfg.batch == 0 || cfg.dim == 0 {
        return Err(HarnessError::config(
            "bench",
            "repeats, batch and dim must be positive",
        ));
    }
    let mut rows = Vec::new();
    for &len in &cfg.seq_lens {
        let input: Tensor<f32> = Rng::new(cfg.seed).fork(len as u64).uniform_tensor(
            &[cfg.batch, len, cfg.dim],
            -1.0,
            1.0,
        );
        let mask = SeqMask::full(cfg.batch, len);
        for &kind in &cfg.encoders {
            let mut store = Store32::new();
            let mru = MruConfig::new(MruVariant::Recurrent, cfg.ranges.clone());
            let enc = Encoder::new(
                &mut store,
                "bench",
                kind,
                cfg.dim,
                &mru,
                &mut Rng::new(cfg.seed),
            )?;
            {
                let mut g = Graph::new(&store);
                let x = g.constant(input.clone());
                let h = enc.encode(&mut g, x, &mask)?;
                let want = [cfg.batch, len, enc.output_dim()];
                if g.shape(h) != want {
                    return Err(HarnessError::config(
                        "bench",
                        format!("{kind} produced {:?}, expected {want:?}", g.shape(h)),
                    ));
                }
            }
            for &mode in &cfg.modes {
                for _ in 0..WARMUPS {
                    run_once(&store, &enc, &input, &mask, mode)?;
                }
                let times = (0..cfg.repeats)
                    .map(|_| run_once(&store, &enc, &input, &mask, mode))
                    .collect::<Result<Vec<_>>>()?;
                let row = BenchRow {
                    encoder: kind,
                    seq_len: len,
                    dim: cfg.dim,
                    batch: cfg.batch,
                    mode,
                    median_tokens_per_sec: (cfg.batch * len) as f64 / median(times),
                };
                log(&format!(
                    "encoder={kind} seq_len={len} mode={mode} tokens_per_sec={:.1}",
                    row.median_tokens_per_sec
                ));
                rows.push(row);
            }
        }
    }
    Ok(rows)
}
