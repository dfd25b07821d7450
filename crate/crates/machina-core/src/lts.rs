//! Exhaustive state-space construction and Aldebaran (.aut) interchange.
//!
//! Exploration is breadth-first from the initial configuration with a fixed
//! successor ordering, so state numbering and the exported text are fully
//! deterministic: two builds of the same spec are byte-identical.

use crate::engine::{initial_configuration, successors, ActionLabel, Configuration};
use crate::model::ModelSpec;
use serde::Serialize;
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub max_states: usize,
    pub max_edges: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_states: 20_000_000, max_edges: 200_000_000 }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BuildStats {
    pub states: usize,
    pub edges: usize,
    pub depth: usize,
    pub elapsed_ms: u64,
}

#[derive(Debug, Error)]
pub enum LtsError {
    #[error("LIMIT_EXCEEDED after {states} states and {edges} edges (depth {depth})")]
    LimitExceeded { states: usize, edges: usize, depth: usize },
    #[error("PARSE_ERROR at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Explicit finite labelled transition system with canonical state ids.
/// State 0 is the initial state; labels are interned in first-seen order.
#[derive(Debug, Clone)]
pub struct Lts {
    pub num_states: u32,
    pub labels: Vec<ActionLabel>,
    /// (source, label id, target) in discovery order.
    pub edges: Vec<(u32, u32, u32)>,
    /// Configuration per state id; empty for imported systems.
    pub configs: Vec<Configuration>,
}

impl Lts {
    pub fn label(&self, id: u32) -> &ActionLabel {
        &self.labels[id as usize]
    }

    /// Forward adjacency in CSR form: per state, (label id, target) pairs.
    pub fn forward(&self) -> Csr {
        Csr::build(self.num_states, self.edges.iter().map(|&(s, l, t)| (s, l, t)))
    }

    /// Reverse adjacency: per state, (label id, source) pairs.
    pub fn reverse(&self) -> Csr {
        Csr::build(self.num_states, self.edges.iter().map(|&(s, l, t)| (t, l, s)))
    }
}

/// Compressed adjacency built once and shared by the checkers.
pub struct Csr {
    pub offsets: Vec<u32>,
    pub entries: Vec<(u32, u32)>,
}

impl Csr {
    fn build(n: u32, it: impl Iterator<Item = (u32, u32, u32)> + Clone) -> Csr {
        let mut counts = vec![0u32; n as usize + 1];
        for (k, _, _) in it.clone() {
            counts[k as usize + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut entries = vec![(0u32, 0u32); counts[n as usize] as usize];
        let mut cursor = counts.clone();
        for (k, l, v) in it {
            let slot = cursor[k as usize] as usize;
            entries[slot] = (l, v);
            cursor[k as usize] += 1;
        }
        Csr { offsets: counts, entries }
    }

    pub fn row(&self, s: u32) -> &[(u32, u32)] {
        &self.entries[self.offsets[s as usize] as usize..self.offsets[s as usize + 1] as usize]
    }
}

pub struct Explored {
    pub lts: Lts,
    pub stats: BuildStats,
}

/// Breadth-first exploration of the engine semantics from the initial
/// configuration. Canonical numbering is BFS discovery order.
pub fn build_lts(spec: &ModelSpec, limits: Limits) -> Result<Explored, LtsError> {
    let start = Instant::now();
    let initial = initial_configuration(spec);
    let mut ids: HashMap<Configuration, u32> = HashMap::new();
    let mut configs: Vec<Configuration> = Vec::new();
    let mut depth_of: Vec<u32> = Vec::new();
    let mut labels: Vec<ActionLabel> = Vec::new();
    let mut label_ids: HashMap<ActionLabel, u32> = HashMap::new();
    let mut edges: Vec<(u32, u32, u32)> = Vec::new();
    let mut depth = 0usize;

    ids.insert(initial.clone(), 0);
    configs.push(initial);
    depth_of.push(0);

    let mut next = 0usize;
    while next < configs.len() {
        let src = next as u32;
        let cur = configs[next].clone();
        next += 1;
        depth = depth.max(depth_of[src as usize] as usize);
        for (label, target) in successors(&cur, spec) {
            let lid = *label_ids.entry(label.clone()).or_insert_with(|| {
                labels.push(label);
                labels.len() as u32 - 1
            });
            let tid = match ids.get(&target) {
                Some(t) => *t,
                None => {
                    let t = configs.len() as u32;
                    if configs.len() + 1 > limits.max_states {
                        return Err(LtsError::LimitExceeded {
                            states: configs.len(),
                            edges: edges.len(),
                            depth,
                        });
                    }
                    ids.insert(target.clone(), t);
                    configs.push(target);
                    depth_of.push(depth_of[src as usize] + 1);
                    t
                }
            };
            if edges.len() + 1 > limits.max_edges {
                return Err(LtsError::LimitExceeded {
                    states: configs.len(),
                    edges: edges.len(),
                    depth,
                });
            }
            edges.push((src, lid, tid));
        }
    }

    let stats = BuildStats {
        states: configs.len(),
        edges: edges.len(),
        depth,
        elapsed_ms: start.elapsed().as_millis() as u64,
    };
    Ok(Explored {
        lts: Lts { num_states: configs.len() as u32, labels, edges, configs },
        stats,
    })
}

/// Writes Aldebaran format: `des (0,<edges>,<states>)` then one
/// `(<src>,"<label>",<dst>)` line per edge.
pub fn export_aut(lts: &Lts, sink: &mut impl Write) -> Result<(), LtsError> {
    writeln!(sink, "des (0,{},{})", lts.edges.len(), lts.num_states)?;
    let rendered: Vec<String> = lts.labels.iter().map(|l| l.to_string()).collect();
    for (s, l, t) in &lts.edges {
        writeln!(sink, "({},\"{}\",{})", s, rendered[*l as usize], t)?;
    }
    Ok(())
}

/// Reads Aldebaran format back; inverse of [`export_aut`] up to structural
/// equality (imported systems carry no configurations).
pub fn import_aut(source: &mut impl BufRead) -> Result<Lts, LtsError> {
    let mut lines = source.lines();
    let header = lines
        .next()
        .ok_or(LtsError::ParseError { line: 1, message: "empty file".into() })?
        .map_err(LtsError::Io)?;
    let header = header.trim();
    let body = header
        .strip_prefix("des")
        .map(str::trim)
        .and_then(|r| r.strip_prefix('('))
        .and_then(|r| r.strip_suffix(')'))
        .ok_or(LtsError::ParseError {
            line: 1,
            message: "expected `des (<init>,<edges>,<states>)`".into(),
        })?;
    let parts: Vec<&str> = body.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(LtsError::ParseError { line: 1, message: "malformed des header".into() });
    }
    let initial: u32 = parts[0]
        .parse()
        .map_err(|_| LtsError::ParseError { line: 1, message: "bad initial state".into() })?;
    if initial != 0 {
        return Err(LtsError::ParseError {
            line: 1,
            message: "only initial state 0 is supported".into(),
        })?;
    }
    let num_edges: usize = parts[1]
        .parse()
        .map_err(|_| LtsError::ParseError { line: 1, message: "bad edge count".into() })?;
    let num_states: u32 = parts[2]
        .parse()
        .map_err(|_| LtsError::ParseError { line: 1, message: "bad state count".into() })?;

    let mut labels: Vec<ActionLabel> = Vec::new();
    let mut label_ids: HashMap<String, u32> = HashMap::new();
    let mut edges = Vec::with_capacity(num_edges);
    for (i, line) in lines.enumerate() {
        let lno = i + 2;
        let line = line.map_err(LtsError::Io)?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let inner = line
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or(LtsError::ParseError { line: lno, message: "expected `(src,\"label\",dst)`".into() })?;
        let open = inner.find('"').ok_or(LtsError::ParseError {
            line: lno,
            message: "missing opening quote".into(),
        })?;
        let close = inner.rfind('"').ok_or(LtsError::ParseError {
            line: lno,
            message: "missing closing quote".into(),
        })?;
        if close <= open {
            return Err(LtsError::ParseError { line: lno, message: "malformed label".into() });
        }
        let src: u32 = inner[..open]
            .trim()
            .trim_end_matches(',')
            .trim()
            .parse()
            .map_err(|_| LtsError::ParseError { line: lno, message: "bad source state".into() })?;
        let dst: u32 = inner[close + 1..]
            .trim()
            .trim_start_matches(',')
            .trim()
            .parse()
            .map_err(|_| LtsError::ParseError { line: lno, message: "bad target state".into() })?;
        if src >= num_states || dst >= num_states {
            return Err(LtsError::ParseError { line: lno, message: "state id out of range".into() });
        }
        let text = &inner[open + 1..close];
        let lid = match label_ids.get(text) {
            Some(l) => *l,
            None => {
                let l = labels.len() as u32;
                labels.push(parse_label(text));
                label_ids.insert(text.to_string(), l);
                l
            }
        };
        edges.push((src, lid, dst));
    }
    if edges.len() != num_edges {
        return Err(LtsError::ParseError {
            line: 1,
            message: format!("header says {} edges, found {}", num_edges, edges.len()),
        });
    }
    Ok(Lts { num_states, labels, edges, configs: Vec::new() })
}

/// Parses a rendered action label back into structured form; unknown text
/// becomes an opaque [`ActionLabel::Raw`] label.
pub fn parse_label(text: &str) -> ActionLabel {
    use crate::model::{BehaviorId, StateId, TransId};
    fn bools(args: &str) -> Option<Vec<bool>> {
        if args.is_empty() {
            return Some(Vec::new());
        }
        args.split(',')
            .map(|a| match a.trim() {
                "tt" => Some(true),
                "ff" => Some(false),
                _ => None,
            })
            .collect()
    }
    let raw = || ActionLabel::Raw(Arc::from(text));
    match text {
        "no_freecmd" => return ActionLabel::NoFreeCmd,
        "command_none" => return ActionLabel::CommandNone,
        "chk_ready" => return ActionLabel::ChkReady,
        "tau_no_trans" => return ActionLabel::TauNoTrans,
        "post_done" => return ActionLabel::PostDone,
        _ => {}
    }
    let Some(open) = text.find('(') else { return raw() };
    let Some(stripped) = text.strip_suffix(')') else { return raw() };
    let (name, args) = (&text[..open], &stripped[open + 1..]);
    match name {
        "inputs" => bools(args).map(ActionLabel::Inputs).unwrap_or_else(raw),
        "free_input_signals" => bools(args).map(ActionLabel::FreeInputSignals).unwrap_or_else(raw),
        "freecmd" => args.parse().map(ActionLabel::FreeCmd).unwrap_or_else(|_| raw()),
        "trans" => args.parse().map(|v| ActionLabel::Trans(TransId(v))).unwrap_or_else(|_| raw()),
        "beh" => args.parse().map(|v| ActionLabel::Beh(BehaviorId(v))).unwrap_or_else(|_| raw()),
        "post" => args.parse().map(|v| ActionLabel::Post(BehaviorId(v))).unwrap_or_else(|_| raw()),
        "command" => {
            let parts: Vec<&str> = args.split(',').collect();
            if parts.len() != 2 {
                return raw();
            }
            let idx = parts[0].trim().parse();
            let val = match parts[1].trim() {
                "tt" => Some(true),
                "ff" => Some(false),
                _ => None,
            };
            match (idx, val) {
                (Ok(i), Some(v)) => ActionLabel::Command(i, v),
                _ => raw(),
            }
        }
        "states" => {
            let Some((m, list)) = args.split_once(',') else { return raw() };
            let Ok(machine) = m.trim().parse::<u32>() else { return raw() };
            let Some(list) = list.trim().strip_prefix('[').and_then(|l| l.strip_suffix(']')) else {
                return raw();
            };
            let chain: Option<Vec<StateId>> = if list.is_empty() {
                Some(Vec::new())
            } else {
                list.split(',').map(|x| x.trim().parse().ok().map(StateId)).collect()
            };
            chain.map(|c| ActionLabel::StatesObs { machine, chain: c }).unwrap_or_else(raw)
        }
        _ => {
            // state_M<i>'<prop>(v)
            if let Some(rest) = name.strip_prefix("state_M") {
                if let Some((part, prop)) = rest.split_once('\'') {
                    if let Ok(part) = part.parse::<u32>() {
                        let value = match args {
                            "tt" => Some(true),
                            "ff" => Some(false),
                            _ => None,
                        };
                        if let Some(value) = value {
                            return ActionLabel::StateObs {
                                part,
                                prop: Arc::from(prop),
                                value,
                            };
                        }
                    }
                }
            }
            raw()
        }
    }
}
