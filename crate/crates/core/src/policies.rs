//! Dispatch rules.
//!
//! A policy sees either a per-server snapshot ([`StateView`]) or, on the
//! Markov-chain fast path, only the vector of level counts `M_l` (number of
//! servers holding exactly `l` jobs). Every rule except LWL can decide from
//! level counts alone; the concrete server within a level is then uniform.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;

use crate::distributions::RandomStream;
use crate::error::{param, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    Random,
    Jsq,
    /// Power-of-d choices, sampling without replacement.
    PowerOfD(usize),
    /// Idle-queue-first; same decisions as `IdleDepth(0)`.
    Iqf,
    /// Idle-one-first; same decisions as `IdleDepth(1)`.
    I1f,
    /// JSQ restricted to servers holding at most `q` jobs, uniform otherwise.
    IdleDepth(usize),
    CentralQueue,
    LeastWorkLeft,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Destination {
    Server(usize),
    Central,
}

/// Outcome of a level-count decision: the level of the chosen server.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LevelChoice {
    Level(usize),
    Central,
}

/// Read-only snapshot at an arrival epoch.
#[derive(Clone, Copy, Debug)]
pub struct StateView<'a> {
    pub queue_lengths: &'a [usize],
    pub residual_work: Option<&'a [f64]>,
}

impl<'a> StateView<'a> {
    pub fn new(queue_lengths: &'a [usize]) -> Self {
        StateView {
            queue_lengths,
            residual_work: None,
        }
    }

    pub fn with_work(queue_lengths: &'a [usize], residual_work: &'a [f64]) -> Self {
        StateView {
            queue_lengths,
            residual_work: Some(residual_work),
        }
    }
}

/// The set a policy picks uniformly from, when it has one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Candidates {
    Servers(Vec<usize>),
    Central,
    /// Sampling-based rule (PoD); no fixed candidate set.
    Sampled,
}

impl Policy {
    /// Threshold `q` for the idle-first family, if this is one of them.
    pub fn idle_depth(&self) -> Option<usize> {
        match *self {
            Policy::Iqf => Some(0),
            Policy::I1f => Some(1),
            Policy::IdleDepth(q) => Some(q),
            _ => None,
        }
    }

    pub fn needs_work(&self) -> bool {
        matches!(self, Policy::LeastWorkLeft)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if k == 0 {
            return Err(param("server count must be positive"));
        }
        if let Policy::PowerOfD(d) = *self {
            if d < 2 {
                return Err(param(format!("pod needs d >= 2, got {d}")));
            }
            if d > k {
                return Err(param(format!("pod:{d} samples more servers than k={k}")));
            }
        }
        Ok(())
    }

    /// Deterministic candidate set (uniform choice among it).
    pub fn candidates(&self, view: &StateView<'_>) -> Result<Candidates> {
        let q = view.queue_lengths;
        self.validate(q.len())?;
        let argmin_by = |key: &dyn Fn(usize) -> f64, filter: &dyn Fn(usize) -> bool| {
            let mut best = f64::INFINITY;
            let mut set = Vec::new();
            for i in (0..q.len()).filter(|&i| filter(i)) {
                let v = key(i);
                if v < best {
                    best = v;
                    set.clear();
                    set.push(i);
                } else if v == best {
                    set.push(i);
                }
            }
            set
        };
        let all = || (0..q.len()).collect::<Vec<_>>();
        Ok(match *self {
            Policy::CentralQueue => Candidates::Central,
            Policy::PowerOfD(_) => Candidates::Sampled,
            Policy::Random => Candidates::Servers(all()),
            Policy::Jsq => Candidates::Servers(argmin_by(&|i| q[i] as f64, &|_| true)),
            Policy::Iqf | Policy::I1f | Policy::IdleDepth(_) => {
                let depth = self.idle_depth().unwrap_or(0);
                let set = argmin_by(&|i| q[i] as f64, &|i| q[i] <= depth);
                if set.is_empty() {
                    Candidates::Servers(all())
                } else {
                    Candidates::Servers(set)
                }
            }
            Policy::LeastWorkLeft => {
                let work = view.residual_work.ok_or_else(|| Error::Capability {
                    policy: self.to_string(),
                    needs: "per-server residual work",
                })?;
                if work.len() != q.len() {
                    return Err(param("residual_work and queue_lengths differ in length"));
                }
                Candidates::Servers(argmin_by(&|i| work[i], &|_| true))
            }
        })
    }

    /// Chooses a destination for one arriving job.
    pub fn dispatch(&self, view: &StateView<'_>, stream: &mut RandomStream) -> Result<Destination> {
        match self.candidates(view)? {
            Candidates::Central => Ok(Destination::Central),
            Candidates::Servers(set) => Ok(Destination::Server(set[stream.index(set.len())])),
            Candidates::Sampled => {
                let Policy::PowerOfD(d) = *self else {
                    unreachable!("only pod samples")
                };
                let q = view.queue_lengths;
                let mut best = usize::MAX;
                let mut chosen = 0;
                let mut ties = 0usize;
                for i in index::sample(stream, q.len(), d) {
                    if q[i] < best {
                        best = q[i];
                        chosen = i;
                        ties = 1;
                    } else if q[i] == best {
                        ties += 1;
                        if stream.index(ties) == 0 {
                            chosen = i;
                        }
                    }
                }
                Ok(Destination::Server(chosen))
            }
        }
    }

    /// Level-count decision: `levels[l]` is the number of servers with `l`
    /// jobs and `k` is their sum. Returns the level of the chosen server.
    pub fn dispatch_level(
        &self,
        levels: &[usize],
        k: usize,
        stream: &mut RandomStream,
    ) -> Result<LevelChoice> {
        let first_nonempty =
            |upto: usize| (0..=upto.min(levels.len().saturating_sub(1))).find(|&l| levels[l] > 0);
        let uniform_server =
            |stream: &mut RandomStream| LevelChoice::Level(level_of(levels, stream.index(k)));
        Ok(match *self {
            Policy::CentralQueue => LevelChoice::Central,
            Policy::Jsq => {
                LevelChoice::Level(first_nonempty(usize::MAX).ok_or_else(|| param("no servers"))?)
            }
            Policy::Random => uniform_server(stream),
            Policy::Iqf | Policy::I1f | Policy::IdleDepth(_) => {
                match first_nonempty(self.idle_depth().unwrap_or(0)) {
                    Some(l) => LevelChoice::Level(l),
                    None => uniform_server(stream),
                }
            }
            Policy::PowerOfD(d) => {
                self.validate(k)?;
                // Sequential draws without replacement from the level multiset.
                let mut remaining: Vec<usize> = levels.to_vec();
                let mut left = k;
                let mut best = usize::MAX;
                for _ in 0..d {
                    let l = level_of(&remaining, stream.index(left));
                    remaining[l] -= 1;
                    left -= 1;
                    best = best.min(l);
                }
                LevelChoice::Level(best)
            }
            Policy::LeastWorkLeft => {
                return Err(Error::Capability {
                    policy: self.to_string(),
                    needs: "per-server residual work",
                })
            }
        })
    }
}

/// Level holding the `rank`-th server when servers are ordered by level.
#[inline]
pub(crate) fn level_of(levels: &[usize], mut rank: usize) -> usize {
    for (l, &m) in levels.iter().enumerate() {
        if rank < m {
            return l;
        }
        rank -= m;
    }
    panic!("rank exceeds server count")
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Policy::Random => f.write_str("random"),
            Policy::Jsq => f.write_str("jsq"),
            Policy::PowerOfD(d) => write!(f, "pod:{d}"),
            Policy::Iqf => f.write_str("iqf"),
            Policy::I1f => f.write_str("i1f"),
            Policy::IdleDepth(q) => write!(f, "idf:{q}"),
            Policy::CentralQueue => f.write_str("cq"),
            Policy::LeastWorkLeft => f.write_str("lwl"),
        }
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let arg = |prefix: &str| -> Result<usize> {
            s[prefix.len()..]
                .parse()
                .map_err(|_| param(format!("bad policy argument in {s:?}")))
        };
        Ok(match s.as_str() {
            "random" => Policy::Random,
            "jsq" => Policy::Jsq,
            "iqf" => Policy::Iqf,
            "i1f" => Policy::I1f,
            "cq" => Policy::CentralQueue,
            "lwl" => Policy::LeastWorkLeft,
            _ if s.starts_with("pod:") => {
                let d = arg("pod:")?;
                if d < 2 {
                    return Err(param(format!("pod needs d >= 2, got {d}")));
                }
                Policy::PowerOfD(d)
            }
            _ if s.starts_with("idf:") => Policy::IdleDepth(arg("idf:")?),
            _ => return Err(param(format!("unknown policy {s:?}"))),
        })
    }
}
