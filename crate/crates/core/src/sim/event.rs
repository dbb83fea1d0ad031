use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use crate::distributions::{RandomStream, ServiceDistribution};
use crate::error::Result;
use crate::policies::{Destination, LevelChoice, Policy, StateView};

use super::metrics::{Levels, Recorder};
use super::{
    balanced_start, Discipline, SimConfig, SystemState, TraceMetrics, STREAM_DISPATCH,
    STREAM_EVENTS, STREAM_SERVICE,
};

#[derive(Clone, Copy, Debug, PartialEq)]
struct Time(f64);

impl Eq for Time {}

impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Time {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// One server. FIFO keeps the head's absolute finish time plus the waiting
/// sizes; PS keeps per-job finish points on a virtual clock that advances
/// at rate `1/len`.
#[derive(Clone, Debug, Default)]
struct Server {
    len: usize,
    version: u64,
    // FIFO
    head_finish: f64,
    waiting: VecDeque<f64>,
    waiting_work: f64,
    // PS
    finish_points: BinaryHeap<Reverse<Time>>,
    finish_sum: f64,
    virtual_time: f64,
    last_update: f64,
}

impl Server {
    fn advance(&mut self, now: f64) {
        if self.len > 0 {
            self.virtual_time += (now - self.last_update) / self.len as f64;
        }
        self.last_update = now;
    }

    fn residual_work(&mut self, discipline: Discipline, now: f64) -> f64 {
        if self.len == 0 {
            return 0.0;
        }
        match discipline {
            Discipline::Fifo => (self.head_finish - now) + self.waiting_work,
            Discipline::ProcessorSharing => {
                self.advance(now);
                (self.finish_sum - self.len as f64 * self.virtual_time).max(0.0)
            }
        }
    }

    /// Absolute time of this server's next completion.
    fn next_departure(&self, discipline: Discipline) -> f64 {
        match discipline {
            Discipline::Fifo => self.head_finish,
            Discipline::ProcessorSharing => {
                let Reverse(Time(first)) = *self.finish_points.peek().expect("busy server");
                self.last_update + (first - self.virtual_time).max(0.0) * self.len as f64
            }
        }
    }

    fn admit(&mut self, discipline: Discipline, size: f64, now: f64) -> bool {
        match discipline {
            Discipline::Fifo => {
                self.len += 1;
                if self.len == 1 {
                    self.head_finish = now + size;
                    true
                } else {
                    self.waiting.push_back(size);
                    self.waiting_work += size;
                    false
                }
            }
            Discipline::ProcessorSharing => {
                self.advance(now);
                self.len += 1;
                let finish = self.virtual_time + size;
                self.finish_points.push(Reverse(Time(finish)));
                self.finish_sum += finish;
                true
            }
        }
    }

    /// Removes the completing job; returns whether a new departure is due.
    fn complete(&mut self, discipline: Discipline, now: f64) -> bool {
        match discipline {
            Discipline::Fifo => {
                self.len -= 1;
                match self.waiting.pop_front() {
                    Some(size) => {
                        self.waiting_work -= size;
                        if self.waiting.is_empty() {
                            self.waiting_work = 0.0;
                        }
                        self.head_finish = now + size;
                        true
                    }
                    None => false,
                }
            }
            Discipline::ProcessorSharing => {
                self.advance(now);
                self.len -= 1;
                let Reverse(Time(done)) = self.finish_points.pop().expect("busy server");
                self.finish_sum -= done;
                if self.len == 0 {
                    self.virtual_time = 0.0;
                    self.finish_sum = 0.0;
                    false
                } else {
                    true
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Arrival,
    Departure(usize),
}

/// Event-driven k-server simulator with per-job work.
#[derive(Debug)]
pub struct EventSimulator {
    k: usize,
    lambda: f64,
    policy: Policy,
    discipline: Discipline,
    service: ServiceDistribution,
    servers: Vec<Server>,
    levels: Levels,
    central: VecDeque<f64>,
    total_jobs: usize,
    time: f64,
    next_arrival: f64,
    departures: BinaryHeap<Reverse<(Time, usize, u64)>>,
    work_buf: Vec<f64>,
    len_buf: Vec<usize>,
    events: RandomStream,
    dispatch: RandomStream,
    sizes: RandomStream,
}

impl EventSimulator {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let central_policy = matches!(cfg.policy, Policy::CentralQueue);
        let jobs = cfg.initial_jobs();
        let (levels, buffered) = balanced_start(cfg.k, jobs, central_policy);
        let mut sim = EventSimulator {
            k: cfg.k,
            lambda: cfg.lambda,
            policy: cfg.policy,
            discipline: cfg.discipline,
            service: cfg.service,
            servers: vec![Server::default(); cfg.k],
            levels: Levels::new(vec![cfg.k], true),
            central: VecDeque::new(),
            total_jobs: 0,
            time: 0.0,
            next_arrival: 0.0,
            departures: BinaryHeap::new(),
            work_buf: vec![0.0; cfg.k],
            len_buf: vec![0; cfg.k],
            events: RandomStream::new(cfg.seed, cfg.stream_id(STREAM_EVENTS)),
            dispatch: RandomStream::new(cfg.seed, cfg.stream_id(STREAM_DISPATCH)),
            sizes: RandomStream::new(cfg.seed, cfg.stream_id(STREAM_SERVICE)),
        };
        // Fill servers lowest-index first to reach the balanced level counts.
        let mut server = 0;
        for (level, &count) in levels.iter().enumerate() {
            for _ in 0..count {
                for _ in 0..level {
                    let size = sim.service.sample_unchecked(&mut sim.sizes);
                    sim.place(server, size);
                }
                server += 1;
            }
        }
        for _ in 0..buffered {
            let size = sim.service.sample_unchecked(&mut sim.sizes);
            sim.central.push_back(size);
            sim.total_jobs += 1;
        }
        sim.next_arrival = sim.events.exp1() / sim.lambda;
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn total_jobs(&self) -> usize {
        self.total_jobs
    }

    pub fn busy_servers(&self) -> usize {
        self.k - self.levels.count(0)
    }

    pub fn queue_lengths(&self) -> Vec<usize> {
        self.servers.iter().map(|s| s.len).collect()
    }

    /// Unfinished work at every server plus the central buffer.
    pub fn total_residual_work(&mut self) -> f64 {
        let now = self.time;
        let d = self.discipline;
        self.servers
            .iter_mut()
            .map(|s| s.residual_work(d, now))
            .sum::<f64>()
            + self.central.iter().sum::<f64>()
    }

    pub fn state(&self) -> SystemState {
        let mut level_counts = self.levels.counts.clone();
        while level_counts.len() > 1 && *level_counts.last().unwrap() == 0 {
            level_counts.pop();
        }
        SystemState {
            level_counts,
            total_jobs: self.total_jobs,
            central_buffer: self.central.len(),
        }
    }

    fn schedule(&mut self, server: usize) {
        let s = &mut self.servers[server];
        s.version += 1;
        let at = s.next_departure(self.discipline);
        self.departures.push(Reverse((Time(at), server, s.version)));
    }

    fn place(&mut self, server: usize, size: f64) {
        let now = self.time;
        if self.servers[server].admit(self.discipline, size, now) {
            self.schedule(server);
        }
        self.total_jobs += 1;
        let len = self.servers[server].len;
        self.levels.shift_server(server, len, now);
    }

    fn choose(&mut self) -> Result<Destination> {
        if self.policy.needs_work() {
            let now = self.time;
            for (i, s) in self.servers.iter_mut().enumerate() {
                self.work_buf[i] = s.residual_work(self.discipline, now);
                self.len_buf[i] = s.len;
            }
            let view = StateView::with_work(&self.len_buf, &self.work_buf);
            return self.policy.dispatch(&view, &mut self.dispatch);
        }
        Ok(
            match self
                .policy
                .dispatch_level(&self.levels.counts, self.k, &mut self.dispatch)?
            {
                LevelChoice::Level(l) => {
                    let rank = self.dispatch.index(self.levels.count(l));
                    Destination::Server(self.levels.server_in_level(l, rank))
                }
                LevelChoice::Central => {
                    let idle = self.levels.count(0);
                    if idle > 0 {
                        let rank = self.dispatch.index(idle);
                        Destination::Server(self.levels.server_in_level(0, rank))
                    } else {
                        Destination::Central
                    }
                }
            },
        )
    }

    /// Earliest live departure, discarding superseded heap entries.
    fn peek_departure(&mut self) -> Option<(f64, usize)> {
        while let Some(&Reverse((Time(t), server, version))) = self.departures.peek() {
            if self.servers[server].version == version && self.servers[server].len > 0 {
                return Some((t, server));
            }
            self.departures.pop();
        }
        None
    }

    fn next_event(&mut self) -> (f64, EventKind) {
        match self.peek_departure() {
            Some((t, server)) if t < self.next_arrival => (t, EventKind::Departure(server)),
            _ => (self.next_arrival, EventKind::Arrival),
        }
    }

    fn apply(&mut self, at: f64, kind: EventKind) -> Result<()> {
        self.time = at;
        match kind {
            EventKind::Arrival => {
                let size = self.service.sample_unchecked(&mut self.sizes);
                match self.choose()? {
                    Destination::Server(s) => self.place(s, size),
                    Destination::Central => {
                        self.central.push_back(size);
                        self.total_jobs += 1;
                    }
                }
                self.next_arrival = at + self.events.exp1() / self.lambda;
            }
            EventKind::Departure(server) => {
                self.departures.pop();
                if self.servers[server].complete(self.discipline, at) {
                    self.schedule(server);
                }
                self.total_jobs -= 1;
                let len = self.servers[server].len;
                self.levels.shift_server(server, len, at);
                if len == 0 {
                    if let Some(size) = self.central.pop_front() {
                        self.total_jobs -= 1;
                        self.place(server, size);
                    }
                }
            }
        }
        Ok(())
    }

    /// Advances one event and reports it.
    pub fn step(&mut self) -> Result<EventKind> {
        let (at, kind) = self.next_event();
        self.apply(at, kind)?;
        Ok(kind)
    }

    fn run(mut self, cfg: &SimConfig) -> Result<TraceMetrics> {
        let mut rec = Recorder::new(self.k, cfg.trace_interval);
        let warmup = cfg.warmup_arrivals();
        let mut arrivals = 0u64;
        if warmup == 0 {
            rec.begin(0.0, &mut self.levels, self.total_jobs);
        }
        loop {
            let (at, kind) = self.next_event();
            rec.hold(at - self.time, self.total_jobs, &self.levels);
            if kind == EventKind::Arrival {
                arrivals += 1;
                if arrivals == cfg.horizon_arrivals {
                    self.time = at;
                    break;
                }
            }
            self.apply(at, kind)?;
            if !rec.is_recording() && arrivals == warmup {
                rec.begin(self.time, &mut self.levels, self.total_jobs);
            } else {
                rec.observe(self.time, &self.levels, self.total_jobs);
            }
        }
        let transient = !cfg.is_stable();
        Ok(rec.finish(
            self.time,
            &mut self.levels,
            arrivals - warmup,
            cfg.warmup_fraction,
            transient,
        ))
    }
}

/// Event-driven simulation with general job sizes under FIFO or PS.
pub fn run_event_driven(cfg: &SimConfig) -> Result<TraceMetrics> {
    EventSimulator::new(cfg)?.run(cfg)
}
