//! The synchronous round loop.
//!
//! Nodes are driven by polls: a node is asked for an action only in rounds it
//! asked to be polled in. Every awake node that does not transmit in a round
//! listens, and asleep nodes listen for the message that wakes them, so
//! listening costs nothing and rounds in which nobody is polled are skipped.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::combinat::log2_ceil;
use crate::phys::{Name, Network};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("empty start set")]
    EmptyStart,
    #[error("round limit must be positive")]
    ZeroRoundLimit,
    #[error("start node {0} not in network")]
    UnknownStart(Name),
    #[error("behaviour count {got} does not match node count {want}")]
    BehaviorCount { got: usize, want: usize },
    #[error("node {name} requested a poll at round {requested} while in round {round}")]
    PollInPast { name: Name, round: u64, requested: u64 },
    #[error("{count} receivers passed the reception test for two senders in round {round}")]
    Uniqueness { round: u64, count: usize },
    #[error("trace output: {0}")]
    Io(#[from] std::io::Error),
}

/// When a node wants its next poll.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Poll {
    At(u64),
    /// Only a received message wakes the node up again.
    Never,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action<P> {
    Transmit(P, Poll),
    Listen(Poll),
}

/// Bit sizes used to charge message fields against the control budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitSizes {
    pub name: u32,
    pub counter: u32,
}

pub trait Payload: Clone + std::fmt::Debug {
    /// Control bits carried by the payload, not counting the sender name
    /// and the clock that every message carries.
    fn control_bits(&self, sizes: &BitSizes) -> u32;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message<P> {
    pub src: Name,
    /// Sender's local round counter.
    pub clock: u64,
    pub payload: P,
}

/// Per-node random source with bit accounting.
#[derive(Debug, Clone)]
pub struct BitStream {
    rng: ChaCha8Rng,
    word: u64,
    left: u32,
    used: u64,
}

impl BitStream {
    /// Stream for `name` under `seed`; independent of iteration order.
    pub fn new(seed: u64, name: Name) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(name as u64);
        BitStream { rng, word: 0, left: 0, used: 0 }
    }

    fn bit(&mut self) -> u64 {
        if self.left == 0 {
            self.word = self.rng.next_u64();
            self.left = 64;
        }
        let b = self.word & 1;
        self.word >>= 1;
        self.left -= 1;
        self.used += 1;
        b
    }

    /// `k` fresh bits as an integer (`k <= 64`).
    pub fn draw_bits(&mut self, k: u32) -> u64 {
        assert!(k <= 64);
        (0..k).fold(0, |acc, i| acc | (self.bit() << i))
    }

    /// True with probability `2^-i`. Bits are drawn one at a time and the
    /// draw stops at the first one bit.
    pub fn coin_pow2(&mut self, i: u32) -> bool {
        for _ in 0..i {
            if self.bit() == 1 {
                return false;
            }
        }
        true
    }

    /// Uniform integer in `[0, m)` by rejection on `ceil(log2 m)` bits.
    pub fn uniform(&mut self, m: u64) -> u64 {
        assert!(m > 0);
        if m == 1 {
            return 0;
        }
        let k = 64 - (m - 1).leading_zeros();
        loop {
            let v = self.draw_bits(k);
            if v < m {
                return v;
            }
        }
    }

    pub fn used(&self) -> u64 {
        self.used
    }
}

/// What a behaviour sees of the engine while it runs.
pub struct NodeCtx<'a> {
    pub name: Name,
    pub index: usize,
    pub name_space: u32,
    /// Maximum degree of the communication graph, known to every node.
    pub max_degree: usize,
    pub rng: &'a mut BitStream,
    clock_offset: u64,
}

impl NodeCtx<'_> {
    /// Local clock in global round `round`.
    pub fn clock(&self, round: u64) -> u64 {
        round - self.clock_offset
    }
}

/// A per-node protocol state machine.
pub trait Behavior {
    type Msg: Payload;

    /// Called in every round the node asked to be polled in.
    fn act(&mut self, ctx: &mut NodeCtx<'_>, round: u64) -> Action<Self::Msg>;

    /// Called for every delivered message. `None` keeps the pending poll.
    /// The first call for a node that was asleep is its wake-up.
    fn receive(&mut self, ctx: &mut NodeCtx<'_>, round: u64, msg: &Message<Self::Msg>) -> Option<Poll>;

    /// Short status label recorded in full traces when it changes.
    fn status(&self) -> &'static str {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StartMode {
    Uncoordinated(Name),
    Partly(Vec<Name>),
    Synchronized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceLevel {
    None,
    Full,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RoundRecord {
    pub round: u64,
    pub tx: Vec<Name>,
    /// `(receiver, sender)` pairs.
    pub rx: Vec<(Name, Name)>,
    pub wake: Vec<Name>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    /// Rounds elapsed: one past the last round in which a node was polled.
    pub rounds: u64,
    /// False when the round limit stopped the run.
    pub complete: bool,
    pub bits: Vec<u64>,
    pub max_control_bits: u32,
    pub awake: Vec<bool>,
    pub transmissions: u64,
}

impl Summary {
    pub fn max_bits(&self) -> u64 {
        self.bits.iter().copied().max().unwrap_or(0)
    }

    pub fn all_awake(&self) -> bool {
        self.awake.iter().all(|&a| a)
    }
}

pub struct Engine<'n, B: Behavior> {
    network: &'n Network,
    nodes: Vec<B>,
    streams: Vec<BitStream>,
    awake: Vec<bool>,
    clock_offset: Vec<u64>,
    next_poll: Vec<Option<u64>>,
    queue: BinaryHeap<Reverse<(u64, u32)>>,
    round_limit: u64,
    sizes: BitSizes,
    last_polled: Option<u64>,
    max_control_bits: u32,
    transmissions: u64,
    trace: Option<Box<dyn Write + 'n>>,
    statuses: Vec<&'static str>,
    done: Option<bool>,
}

impl<'n, B: Behavior> Engine<'n, B> {
    pub fn new(
        network: &'n Network,
        nodes: Vec<B>,
        start: &StartMode,
        seed: u64,
        round_limit: u64,
    ) -> Result<Self, EngineError> {
        let n = network.len();
        if nodes.len() != n {
            return Err(EngineError::BehaviorCount { got: nodes.len(), want: n });
        }
        if round_limit == 0 {
            return Err(EngineError::ZeroRoundLimit);
        }
        let start_idx: Vec<usize> = match start {
            StartMode::Synchronized => (0..n).collect(),
            StartMode::Uncoordinated(s) => vec![network.index(*s).ok_or(EngineError::UnknownStart(*s))?],
            StartMode::Partly(set) => set
                .iter()
                .map(|&s| network.index(s).ok_or(EngineError::UnknownStart(s)))
                .collect::<Result<_, _>>()?,
        };
        if start_idx.is_empty() {
            return Err(EngineError::EmptyStart);
        }
        let mut awake = vec![false; n];
        let mut next_poll = vec![None; n];
        let mut queue = BinaryHeap::new();
        for &i in &start_idx {
            if !awake[i] {
                awake[i] = true;
                next_poll[i] = Some(0);
                queue.push(Reverse((0, i as u32)));
            }
        }
        let streams = network.names().iter().map(|&v| BitStream::new(seed, v)).collect();
        let statuses = nodes.iter().map(|b| b.status()).collect();
        Ok(Engine {
            network,
            nodes,
            streams,
            awake,
            clock_offset: vec![0; n],
            next_poll,
            queue,
            round_limit,
            sizes: BitSizes {
                name: log2_ceil(network.name_space() as u64),
                counter: log2_ceil(round_limit),
            },
            last_polled: None,
            max_control_bits: 0,
            transmissions: 0,
            trace: None,
            statuses,
            done: None,
        })
    }

    /// Write a JSON-lines trace: a header now, one record per round with
    /// transmissions, and a summary when the run ends.
    pub fn with_trace(mut self, mut out: Box<dyn Write + 'n>, header: serde_json::Value) -> Result<Self, EngineError> {
        writeln!(out, "{}", header)?;
        self.trace = Some(out);
        Ok(self)
    }

    pub fn bit_sizes(&self) -> BitSizes {
        self.sizes
    }

    fn set_poll(&mut self, i: usize, round: u64, poll: Poll, strictly_after: bool) -> Result<(), EngineError> {
        match poll {
            Poll::Never => self.next_poll[i] = None,
            Poll::At(r) => {
                if r < round || (strictly_after && r == round) {
                    return Err(EngineError::PollInPast { name: self.network.name(i), round, requested: r });
                }
                // An unchanged poll is already queued.
                if self.next_poll[i] != Some(r) {
                    self.next_poll[i] = Some(r);
                    self.queue.push(Reverse((r, i as u32)));
                }
            }
        }
        Ok(())
    }

    fn split(&mut self, i: usize) -> (&mut B, NodeCtx<'_>) {
        let ctx = NodeCtx {
            name: self.network.name(i),
            index: i,
            name_space: self.network.name_space(),
            max_degree: self.network.max_degree(),
            rng: &mut self.streams[i],
            clock_offset: self.clock_offset[i],
        };
        (&mut self.nodes[i], ctx)
    }

    /// Advance to the next round in which some node is polled and execute it.
    /// Returns `None` once the run has ended.
    pub fn step(&mut self) -> Result<Option<RoundRecord>, EngineError> {
        if self.done.is_some() {
            return Ok(None);
        }
        // Drop stale queue entries.
        let round = loop {
            match self.queue.peek() {
                None => {
                    self.finish(true)?;
                    return Ok(None);
                }
                Some(&Reverse((r, i))) if self.next_poll[i as usize] != Some(r) => {
                    self.queue.pop();
                }
                Some(&Reverse((r, _))) => break r,
            }
        };
        if round >= self.round_limit {
            self.finish(false)?;
            return Ok(None);
        }
        self.last_polled = Some(round);

        let mut polled = Vec::new();
        while let Some(&Reverse((r, i))) = self.queue.peek() {
            if r != round {
                break;
            }
            self.queue.pop();
            if self.next_poll[i as usize] == Some(r) {
                self.next_poll[i as usize] = None;
                polled.push(i as usize);
            }
        }
        polled.sort_unstable();
        polled.dedup();

        let mut tx: Vec<usize> = Vec::new();
        let mut payloads: Vec<Message<B::Msg>> = Vec::new();
        for i in polled {
            debug_assert!(self.awake[i], "asleep node polled");
            let (node, mut ctx) = self.split(i);
            let action = node.act(&mut ctx, round);
            let clock = ctx.clock(round);
            let poll = match action {
                Action::Transmit(payload, poll) => {
                    let bits = payload.control_bits(&self.sizes) + self.sizes.name + self.sizes.counter;
                    self.max_control_bits = self.max_control_bits.max(bits);
                    tx.push(i);
                    payloads.push(Message { src: self.network.name(i), clock, payload });
                    poll
                }
                Action::Listen(poll) => poll,
            };
            self.set_poll(i, round, poll, true)?;
        }
        if tx.is_empty() {
            self.record_statuses(round)?;
            return Ok(Some(RoundRecord { round, tx: vec![], rx: vec![], wake: vec![] }));
        }
        self.transmissions += tx.len() as u64;

        let (deliveries, violations) = self.network.resolve(&tx);
        if violations > 0 {
            return Err(EngineError::Uniqueness { round, count: violations });
        }
        let mut rx = Vec::with_capacity(deliveries.len());
        let mut wake = Vec::new();
        for (u, s) in deliveries {
            let k = tx.binary_search(&s).expect("sender transmitted");
            let msg = &payloads[k];
            if !self.awake[u] {
                self.awake[u] = true;
                // The woken node adopts the sender's counter plus one from
                // the next round on.
                self.clock_offset[u] = round - msg.clock;
                wake.push(self.network.name(u));
            }
            rx.push((self.network.name(u), msg.src));
            let (node, mut ctx) = self.split(u);
            if let Some(poll) = node.receive(&mut ctx, round, msg) {
                self.set_poll(u, round, poll, true)?;
            }
        }
        let record = RoundRecord { round, tx: tx.iter().map(|&i| self.network.name(i)).collect(), rx, wake };
        if let Some(out) = self.trace.as_mut() {
            let line = json!({"type": "round", "round": record.round, "tx": record.tx, "rx": record.rx, "wake": record.wake});
            writeln!(out, "{}", line)?;
        }
        self.record_statuses(round)?;
        Ok(Some(record))
    }

    fn record_statuses(&mut self, round: u64) -> Result<(), EngineError> {
        let Some(out) = self.trace.as_mut() else { return Ok(()) };
        let mut changes = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let s = node.status();
            if s != self.statuses[i] {
                self.statuses[i] = s;
                changes.push((self.network.name(i), s));
            }
        }
        if !changes.is_empty() {
            writeln!(out, "{}", json!({"type": "status", "round": round, "changes": changes}))?;
        }
        Ok(())
    }

    fn finish(&mut self, complete: bool) -> Result<(), EngineError> {
        self.done = Some(complete);
        let summary = self.summary();
        if let Some(out) = self.trace.as_mut() {
            let bits: Vec<(Name, u64)> =
                self.network.names().iter().copied().zip(summary.bits.iter().copied()).collect();
            let line = json!({
                "type": "summary",
                "rounds": summary.rounds,
                "complete": summary.complete,
                "bits": bits,
                "max_control_bits": summary.max_control_bits,
                "transmissions": summary.transmissions,
            });
            writeln!(out, "{}", line)?;
            out.flush()?;
        }
        Ok(())
    }

    pub fn summary(&self) -> Summary {
        Summary {
            rounds: self.last_polled.map_or(0, |r| r + 1),
            complete: self.done.unwrap_or(false),
            bits: self.streams.iter().map(BitStream::used).collect(),
            max_control_bits: self.max_control_bits,
            awake: self.awake.clone(),
            transmissions: self.transmissions,
        }
    }

    pub fn nodes(&self) -> &[B] {
        &self.nodes
    }

    /// Run to quiescence or the round limit.
    pub fn run(mut self) -> Result<(Summary, Vec<B>), EngineError> {
        while self.step()?.is_some() {}
        let summary = self.summary();
        Ok((summary, self.nodes))
    }
}

/// Convenience wrapper: build an engine and run it without a trace.
pub fn run<B: Behavior>(
    network: &Network,
    nodes: Vec<B>,
    start: &StartMode,
    seed: u64,
    round_limit: u64,
) -> Result<(Summary, Vec<B>), EngineError> {
    Engine::new(network, nodes, start, seed, round_limit)?.run()
}

/// Header record for traces produced over `network`.
pub fn trace_header(network: &Network, seed: u64, start: &StartMode, protocol: &str) -> serde_json::Value {
    let start = match start {
        StartMode::Synchronized => json!("synchronized"),
        StartMode::Uncoordinated(s) => json!({"uncoordinated": s}),
        StartMode::Partly(set) => json!({"partly": set}),
    };
    json!({
        "type": "header",
        "schema": 1,
        "protocol": protocol,
        "seed": seed,
        "name_space": network.name_space(),
        "config": network.config(),
        "start": start,
        "nodes": network.placements(),
    })
}
