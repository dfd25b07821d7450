//! Small-step executor of the cyclic execution model.
//!
//! A [`Configuration`] is one semantic state; [`successors`] enumerates all
//! labelled micro-steps out of it. Phases with no observable action (empty
//! behavior queues, command removal) are skipped during construction, so
//! every configuration handed out has at least one labelled successor.
//!
//! One full cycle: read inputs, set free input signals (and timer oracles),
//! set free commands, then per machinepart: prestate, command step, one
//! transition per state machine in order, poststate, command removal.

use crate::model::{
    eval_expr, BehaviorId, EvalEnv, ModelSpec, NodeKind, PropId, StateId, StateRef, TimerId,
    TransId,
};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Execution phase, advancing in the fixed cycle order. `part` indexes the
/// machinepart whose turn it is; `machine` is the per-part machine cursor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExecPhase {
    SetInputs,
    SetFreeInputSignals,
    SetFreeCommands { part: u8 },
    Prestate { part: u8 },
    CommandStep { part: u8 },
    CommandBehaviors { part: u8 },
    MachineStep { part: u8, machine: u8 },
    TransitionBehaviors { part: u8, machine: u8 },
    PoststateBehaviors { part: u8 },
}

/// Command interface of one machinepart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmdSlot {
    Empty,
    Cmd { index: u16, accepted: bool, ready: bool },
}

/// One semantic state: active-state chains per machine, property valuation,
/// command interfaces, pending behaviors and the execution phase.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    pub phase: ExecPhase,
    /// Per flat machine index: root-to-leaf chain of active state ids.
    pub active: Vec<Vec<StateId>>,
    /// Property valuation, bit per global `PropId`.
    pub props: u64,
    /// Timer oracle valuation, bit per `TimerId`; cleared at cycle end.
    pub timers: u16,
    /// Per machinepart command interface.
    pub cmds: Vec<CmdSlot>,
    /// Queued behavior ids for the current behavior-execution phase.
    pub pending: Vec<BehaviorId>,
}

impl EvalEnv for Configuration {
    fn prop(&self, p: PropId) -> bool {
        self.props >> p.0 & 1 == 1
    }

    fn state_active(&self, s: StateRef) -> bool {
        match s {
            StateRef::Machine(fi) => !self.active[fi].is_empty(),
            StateRef::Node(id) => self.active.iter().any(|chain| chain.contains(&id)),
        }
    }

    fn cmd_check(&self, part: usize, index: u32) -> bool {
        matches!(self.cmds[part], CmdSlot::Cmd { index: i, accepted: true, .. } if i as u32 == index)
    }

    fn timer_elapsed(&self, t: TimerId) -> bool {
        self.timers >> t.0 & 1 == 1
    }
}

impl Configuration {
    fn set_prop(&mut self, p: PropId, v: bool) {
        if v {
            self.props |= 1 << p.0;
        } else {
            self.props &= !(1 << p.0);
        }
    }

    fn apply_behavior(&mut self, spec: &ModelSpec, b: BehaviorId) {
        // right-hand sides are evaluated against the block's entry state
        let block = spec.behavior(b);
        let values: Vec<bool> = block
            .statements
            .iter()
            .map(|st| eval_expr(&st.value, self))
            .collect();
        for (st, v) in block.statements.iter().zip(values) {
            self.set_prop(st.target, v);
        }
    }
}

/// One observable step label, mirroring the process-algebra action alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ActionLabel {
    /// All Input properties, declaration order.
    Inputs(Vec<bool>),
    /// All InputSignal/InOutSignal properties, declaration order.
    FreeInputSignals(Vec<bool>),
    FreeCmd(u16),
    NoFreeCmd,
    Command(u16, bool),
    CommandNone,
    ChkReady,
    Trans(TransId),
    TauNoTrans,
    Beh(BehaviorId),
    Post(BehaviorId),
    PostDone,
    /// Observation self-loop exposing one output/output-signal value.
    StateObs { part: u32, prop: Arc<str>, value: bool },
    /// Observation self-loop exposing one machine's active state ids.
    StatesObs { machine: u32, chain: Vec<StateId> },
    /// Foreign label from an imported `.aut` file, kept verbatim.
    Raw(Arc<str>),
}

fn fmt_bools(f: &mut fmt::Formatter<'_>, vals: &[bool]) -> fmt::Result {
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            write!(f, ",")?;
        }
        write!(f, "{}", if *v { "tt" } else { "ff" })?;
    }
    Ok(())
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionLabel::Inputs(vs) => {
                write!(f, "inputs(")?;
                fmt_bools(f, vs)?;
                write!(f, ")")
            }
            ActionLabel::FreeInputSignals(vs) => {
                write!(f, "free_input_signals(")?;
                fmt_bools(f, vs)?;
                write!(f, ")")
            }
            ActionLabel::FreeCmd(i) => write!(f, "freecmd({i})"),
            ActionLabel::NoFreeCmd => write!(f, "no_freecmd"),
            ActionLabel::Command(i, b) => {
                write!(f, "command({i},{})", if *b { "tt" } else { "ff" })
            }
            ActionLabel::CommandNone => write!(f, "command_none"),
            ActionLabel::ChkReady => write!(f, "chk_ready"),
            ActionLabel::Trans(t) => write!(f, "trans({})", t.0),
            ActionLabel::TauNoTrans => write!(f, "tau_no_trans"),
            ActionLabel::Beh(b) => write!(f, "beh({})", b.0),
            ActionLabel::Post(b) => write!(f, "post({})", b.0),
            ActionLabel::PostDone => write!(f, "post_done"),
            ActionLabel::StateObs { part, prop, value } => {
                write!(f, "state_M{part}'{prop}({})", if *value { "tt" } else { "ff" })
            }
            ActionLabel::StatesObs { machine, chain } => {
                write!(f, "states({machine},[")?;
                for (i, s) in chain.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{}", s.0)?;
                }
                write!(f, "])")
            }
            ActionLabel::Raw(s) => write!(f, "{s}"),
        }
    }
}

impl ActionLabel {
    /// Observation self-loops carry no progress; they only expose values.
    pub fn is_observation(&self) -> bool {
        matches!(self, ActionLabel::StateObs { .. } | ActionLabel::StatesObs { .. })
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("CHOICE_NOT_ENABLED at script step {step}: {choice}")]
    ChoiceNotEnabled { step: usize, choice: String },
    #[error("SCRIPT_SYNTAX at line {line}: {message}")]
    ScriptSyntax { line: usize, message: String },
    #[error("internal invariant violated: {0}")]
    IllFormed(String),
}

/// Initial configuration: phase `SetInputs`, root machines at their initial
/// pseudo-states, declared initial property values, empty command interfaces.
pub fn initial_configuration(spec: &ModelSpec) -> Configuration {
    let mut active = Vec::new();
    for (_, _, m) in spec.all_machines() {
        if m.is_root {
            active.push(vec![m.initial.expect("validated machine has an initial state")]);
        } else {
            active.push(Vec::new());
        }
    }
    let mut props = 0u64;
    for part in &spec.machineparts {
        for p in &part.properties {
            if p.initial {
                props |= 1 << p.id.0;
            }
        }
    }
    Configuration {
        phase: ExecPhase::SetInputs,
        active,
        props,
        timers: 0,
        cmds: vec![CmdSlot::Empty; spec.machineparts.len()],
        pending: Vec::new(),
    }
}

/// Moves `c` into `phase`, skipping phases that would emit no action.
fn enter(c: &mut Configuration, spec: &ModelSpec, phase: ExecPhase) {
    let mut phase = phase;
    loop {
        match phase {
            ExecPhase::Prestate { part } => {
                c.pending = spec.machineparts[part as usize].prestate.clone();
                if c.pending.is_empty() {
                    phase = ExecPhase::CommandStep { part };
                    continue;
                }
            }
            ExecPhase::CommandBehaviors { part } => {
                if c.pending.is_empty() {
                    phase = ExecPhase::MachineStep { part, machine: 0 };
                    continue;
                }
            }
            ExecPhase::TransitionBehaviors { part, machine } => {
                if c.pending.is_empty() {
                    phase = next_machine(spec, part, machine);
                    continue;
                }
            }
            ExecPhase::PoststateBehaviors { part } => {
                // load the combined poststate; stands even when empty so the
                // cycle-closing post_done step is always observable
                c.pending = spec.machineparts[part as usize].poststate.clone();
            }
            _ => {}
        }
        c.phase = phase;
        return;
    }
}

/// Phase after machine `machine` of `part` has taken its step.
fn next_machine(spec: &ModelSpec, part: u8, machine: u8) -> ExecPhase {
    if (machine as usize + 1) < spec.machineparts[part as usize].machines.len() {
        ExecPhase::MachineStep { part, machine: machine + 1 }
    } else {
        // poststate blocks are loaded when the phase is entered
        ExecPhase::PoststateBehaviors { part }
    }
}

/// Applies end-of-turn command removal and advances to the next machinepart
/// or back to the start of the cycle.
fn after_post_done(c: &mut Configuration, spec: &ModelSpec, part: u8) {
    if let CmdSlot::Cmd { ready: true, .. } = c.cmds[part as usize] {
        c.cmds[part as usize] = CmdSlot::Empty;
    }
    if (part as usize + 1) < spec.machineparts.len() {
        enter(c, spec, ExecPhase::Prestate { part: part + 1 });
    } else {
        c.timers = 0;
        enter(c, spec, ExecPhase::SetInputs);
    }
}

/// Enumerates assignments over `n` booleans, all-true first (descending).
fn assignments(n: usize) -> Vec<Vec<bool>> {
    let total = 1usize << n;
    let mut out = Vec::with_capacity(total);
    for k in (0..total).rev() {
        out.push((0..n).map(|i| k >> (n - 1 - i) & 1 == 1).collect());
    }
    out
}

/// Timers whose predicates are observable this cycle: any timer mentioned in
/// command conditions or behavior blocks, plus guards of transitions whose
/// source state is currently active.
fn sampled_timer_mask(c: &Configuration, spec: &ModelSpec) -> u16 {
    let mut mask = spec_static_timer_mask(spec);
    for (fi, chain) in c.active.iter().enumerate() {
        if !chain.is_empty() {
            mask |= spec.machine_timer_mask(fi, chain);
        }
    }
    mask
}

fn spec_static_timer_mask(spec: &ModelSpec) -> u16 {
    let mut mask = 0;
    for part in &spec.machineparts {
        for cmd in &part.commands {
            mask |= cmd.guard_condition.timer_mask();
            mask |= cmd.ready_condition.timer_mask();
        }
    }
    for b in &spec.behaviors {
        for st in &b.statements {
            mask |= st.value.timer_mask();
        }
    }
    mask
}

/// Clears the chain of machine `fi` and, recursively, of every machine
/// referenced from a state in that chain.
fn deactivate(active: &mut [Vec<StateId>], spec: &ModelSpec, fi: usize) {
    let chain = std::mem::take(&mut active[fi]);
    for s in chain {
        if let Some(sub) = spec.node(s).submachine {
            deactivate(active, spec, sub);
        }
    }
}

/// Observation self-loops exposing outputs, output signals and active states.
pub fn observation_labels(c: &Configuration, spec: &ModelSpec) -> Vec<ActionLabel> {
    let mut out = Vec::new();
    for part in &spec.machineparts {
        for p in part.observables() {
            out.push(ActionLabel::StateObs {
                part: part.index,
                prop: Arc::from(p.name.as_str()),
                value: c.prop(p.id),
            });
        }
    }
    for (fi, (_, _, m)) in spec.all_machines().enumerate() {
        out.push(ActionLabel::StatesObs { machine: m.index, chain: c.active[fi].clone() });
    }
    out
}

/// All labelled successor micro-steps of `c`, observation self-loops last.
/// Enumeration order is fixed: free-value assignments descend from all-true,
/// `no_freecmd` precedes the `freecmd(i)` summands.
pub fn successors(c: &Configuration, spec: &ModelSpec) -> Vec<(ActionLabel, Configuration)> {
    let mut out: Vec<(ActionLabel, Configuration)> = Vec::new();
    match c.phase {
        ExecPhase::SetInputs => {
            let inputs: Vec<PropId> = spec
                .machineparts
                .iter()
                .flat_map(|p| p.inputs().map(|q| q.id))
                .collect();
            for vals in assignments(inputs.len()) {
                let mut n = c.clone();
                for (p, v) in inputs.iter().zip(&vals) {
                    n.set_prop(*p, *v);
                }
                enter(&mut n, spec, ExecPhase::SetFreeInputSignals);
                out.push((ActionLabel::Inputs(vals), n));
            }
        }
        ExecPhase::SetFreeInputSignals => {
            let signals: Vec<PropId> = spec
                .machineparts
                .iter()
                .flat_map(|p| p.free_signals().map(|q| q.id))
                .collect();
            let tmask = sampled_timer_mask(c, spec);
            let timer_bits: Vec<u16> = (0..16).filter(|b| tmask >> b & 1 == 1).collect();
            for vals in assignments(signals.len()) {
                for tvals in assignments(timer_bits.len()) {
                    let mut n = c.clone();
                    for (p, v) in signals.iter().zip(&vals) {
                        n.set_prop(*p, *v);
                    }
                    n.timers = 0;
                    for (bit, v) in timer_bits.iter().zip(&tvals) {
                        if *v {
                            n.timers |= 1 << bit;
                        }
                    }
                    enter(&mut n, spec, ExecPhase::SetFreeCommands { part: 0 });
                    out.push((ActionLabel::FreeInputSignals(vals.clone()), n));
                }
            }
        }
        ExecPhase::SetFreeCommands { part } => {
            let next = if (part as usize + 1) < spec.machineparts.len() {
                ExecPhase::SetFreeCommands { part: part + 1 }
            } else {
                ExecPhase::Prestate { part: 0 }
            };
            let mut n = c.clone();
            enter(&mut n, spec, next);
            out.push((ActionLabel::NoFreeCmd, n));
            for cmd in &spec.machineparts[part as usize].commands {
                let mut n = c.clone();
                n.cmds[part as usize] =
                    CmdSlot::Cmd { index: cmd.index as u16, accepted: false, ready: false };
                enter(&mut n, spec, next);
                out.push((ActionLabel::FreeCmd(cmd.index as u16), n));
            }
        }
        ExecPhase::Prestate { part } => {
            let mut n = c.clone();
            let b = n.pending.remove(0);
            n.apply_behavior(spec, b);
            if n.pending.is_empty() {
                n.phase = ExecPhase::CommandStep { part };
            }
            out.push((ActionLabel::Beh(b), n));
        }
        ExecPhase::CommandStep { part } => {
            let pi = part as usize;
            match c.cmds[pi] {
                CmdSlot::Empty => {
                    let mut n = c.clone();
                    enter(&mut n, spec, ExecPhase::MachineStep { part, machine: 0 });
                    out.push((ActionLabel::CommandNone, n));
                }
                CmdSlot::Cmd { index, accepted: false, .. } => {
                    let cmd = spec.machineparts[pi]
                        .command_by_index(index as u32)
                        .expect("command index is validated");
                    let g = eval_expr(&cmd.guard_condition, c);
                    let ready = eval_expr(&cmd.ready_condition, c);
                    let mut n = c.clone();
                    n.cmds[pi] = CmdSlot::Cmd { index, accepted: g, ready };
                    let action = if g { cmd.accept_action } else { cmd.reject_action };
                    n.pending = action.into_iter().collect();
                    enter(&mut n, spec, ExecPhase::CommandBehaviors { part });
                    out.push((ActionLabel::Command(index, g), n));
                }
                CmdSlot::Cmd { index, accepted: true, .. } => {
                    let cmd = spec.machineparts[pi]
                        .command_by_index(index as u32)
                        .expect("command index is validated");
                    let ready = eval_expr(&cmd.ready_condition, c);
                    let mut n = c.clone();
                    n.cmds[pi] = CmdSlot::Cmd { index, accepted: true, ready };
                    enter(&mut n, spec, ExecPhase::MachineStep { part, machine: 0 });
                    out.push((ActionLabel::ChkReady, n));
                }
            }
        }
        ExecPhase::CommandBehaviors { part } | ExecPhase::TransitionBehaviors { part, .. } => {
            let mut n = c.clone();
            let b = n.pending.remove(0);
            n.apply_behavior(spec, b);
            let phase = c.phase;
            if n.pending.is_empty() {
                match phase {
                    ExecPhase::CommandBehaviors { .. } => {
                        enter(&mut n, spec, ExecPhase::MachineStep { part, machine: 0 })
                    }
                    ExecPhase::TransitionBehaviors { machine, .. } => {
                        let np = next_machine(spec, part, machine);
                        enter(&mut n, spec, np)
                    }
                    _ => unreachable!(),
                }
            }
            out.push((ActionLabel::Beh(b), n));
        }
        ExecPhase::MachineStep { part, machine } => {
            let fi = spec.flat_machine_index(part as usize, machine as usize);
            let m = spec.machine(part as usize, machine as usize);
            if c.active[fi].is_empty() {
                let mut n = c.clone();
                enter(&mut n, spec, next_machine(spec, part, machine));
                out.push((ActionLabel::TauNoTrans, n));
            } else {
                // continuous behavior of all active states, innermost first
                let mut n = c.clone();
                for sid in c.active[fi].iter().rev() {
                    if let Some(b) = spec.node(*sid).continuous {
                        n.apply_behavior(spec, b);
                    }
                }
                let fired = m.priority_order.iter().copied().find(|tid| {
                    let t = spec.transition(*tid);
                    n.active[fi].contains(&t.source_state())
                        && eval_expr(&t.effective_guard, &n)
                });
                match fired {
                    None => {
                        enter(&mut n, spec, next_machine(spec, part, machine));
                        out.push((ActionLabel::TauNoTrans, n));
                    }
                    Some(tid) => {
                        let t = spec.transition(tid);
                        let cut_depth = spec.node(t.dest[0]).depth as usize - 1;
                        let old_chain = std::mem::take(&mut n.active[fi]);
                        let (keep, exited) = old_chain.split_at(cut_depth.min(old_chain.len()));
                        let mut chain = keep.to_vec();
                        for s in exited {
                            if let Some(sub) = spec.node(*s).submachine {
                                deactivate(&mut n.active, spec, sub);
                            }
                        }
                        chain.extend_from_slice(&t.dest);
                        for d in &t.dest {
                            if let Some(sub) = spec.node(*d).submachine {
                                let sm = {
                                    let (pi2, mi2) = spec.machine_position(sub);
                                    spec.machine(pi2, mi2)
                                };
                                n.active[sub] =
                                    vec![sm.initial.expect("validated machine has initial")];
                            }
                        }
                        n.active[fi] = chain;
                        let innermost = *t.dest.last().unwrap();
                        n.pending = t
                            .behavior
                            .into_iter()
                            .chain(spec.node(innermost).entry)
                            .collect();
                        enter(&mut n, spec, ExecPhase::TransitionBehaviors { part, machine });
                        out.push((ActionLabel::Trans(tid), n));
                    }
                }
            }
        }
        ExecPhase::PoststateBehaviors { part } => {
            if c.pending.is_empty() {
                let mut n = c.clone();
                after_post_done(&mut n, spec, part);
                out.push((ActionLabel::PostDone, n));
            } else {
                let mut n = c.clone();
                let b = n.pending.remove(0);
                n.apply_behavior(spec, b);
                out.push((ActionLabel::Post(b), n));
            }
        }
    }
    for label in observation_labels(c, spec) {
        out.push((label, c.clone()));
    }
    out
}

// ---------------------------------------------------------------------------
// Trace scripts and replay
// ---------------------------------------------------------------------------

/// One resolved nondeterministic choice from a trace script.
#[derive(Debug, Clone, PartialEq)]
pub enum ScriptChoice {
    Inputs(Vec<bool>),
    /// Signal values plus optional timer values (`| t1 t2` suffix);
    /// unsampled or omitted timers default to false.
    FreeInputSignals(Vec<bool>, Vec<bool>),
    FreeCmd(String),
    NoFreeCmd,
}

impl fmt::Display for ScriptChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn bools(vs: &[bool]) -> String {
            vs.iter().map(|v| if *v { "tt" } else { "ff" }).collect::<Vec<_>>().join(" ")
        }
        match self {
            ScriptChoice::Inputs(vs) => write!(f, "inputs {}", bools(vs)),
            ScriptChoice::FreeInputSignals(vs, ts) if ts.is_empty() => {
                write!(f, "free_input_signals {}", bools(vs))
            }
            ScriptChoice::FreeInputSignals(vs, ts) => {
                write!(f, "free_input_signals {} | {}", bools(vs), bools(ts))
            }
            ScriptChoice::FreeCmd(n) => write!(f, "freecmd {n}"),
            ScriptChoice::NoFreeCmd => write!(f, "no_freecmd"),
        }
    }
}

/// Parses a line-oriented trace script: one resolved choice per line,
/// `#` comments and blank lines ignored.
pub fn parse_script(text: &str) -> Result<Vec<ScriptChoice>, EngineError> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut words = line.split_whitespace();
        let head = words.next().unwrap();
        let parse_bools = |ws: &[&str], ln: usize| -> Result<Vec<bool>, EngineError> {
            ws.iter()
                .map(|w| match *w {
                    "tt" | "true" => Ok(true),
                    "ff" | "false" => Ok(false),
                    other => Err(EngineError::ScriptSyntax {
                        line: ln + 1,
                        message: format!("expected tt/ff, found `{other}`"),
                    }),
                })
                .collect()
        };
        match head {
            "inputs" => {
                let rest: Vec<&str> = words.collect();
                out.push(ScriptChoice::Inputs(parse_bools(&rest, ln)?));
            }
            "free_input_signals" => {
                let rest: Vec<&str> = words.collect();
                let split = rest.iter().position(|w| *w == "|");
                let (sig, tim) = match split {
                    Some(i) => (rest[..i].to_vec(), rest[i + 1..].to_vec()),
                    None => (rest, Vec::new()),
                };
                out.push(ScriptChoice::FreeInputSignals(
                    parse_bools(&sig, ln)?,
                    parse_bools(&tim, ln)?,
                ));
            }
            "freecmd" => {
                let name = words.next().ok_or(EngineError::ScriptSyntax {
                    line: ln + 1,
                    message: "freecmd needs a command name".into(),
                })?;
                out.push(ScriptChoice::FreeCmd(name.to_string()));
            }
            "no_freecmd" => out.push(ScriptChoice::NoFreeCmd),
            other => {
                return Err(EngineError::ScriptSyntax {
                    line: ln + 1,
                    message: format!("unknown choice `{other}`"),
                })
            }
        }
    }
    Ok(out)
}

fn is_choice_phase(phase: ExecPhase) -> bool {
    matches!(
        phase,
        ExecPhase::SetInputs | ExecPhase::SetFreeInputSignals | ExecPhase::SetFreeCommands { .. }
    )
}

/// Deterministic replay: the script resolves every nondeterministic choice
/// point in order; deterministic micro-steps run by themselves. The trace
/// ends when the script is exhausted and the next choice point is reached.
pub fn run_trace(
    spec: &ModelSpec,
    script: &[ScriptChoice],
) -> Result<Vec<(ActionLabel, Configuration)>, EngineError> {
    let mut trace = Vec::new();
    let mut cur = initial_configuration(spec);
    let mut step = 0usize;
    loop {
        if is_choice_phase(cur.phase) {
            if step == script.len() {
                return Ok(trace);
            }
            let choice = &script[step];
            let succs = successors(&cur, spec);
            let found = succs.into_iter().find(|(label, target)| {
                match (choice, label) {
                    (ScriptChoice::Inputs(want), ActionLabel::Inputs(got)) => want == got,
                    (ScriptChoice::FreeInputSignals(want, tim), ActionLabel::FreeInputSignals(got)) => {
                        if want != got {
                            return false;
                        }
                        let mut mask = 0u16;
                        for (i, v) in tim.iter().enumerate() {
                            if *v {
                                mask |= 1 << i;
                            }
                        }
                        target.timers == mask
                    }
                    (ScriptChoice::FreeCmd(name), ActionLabel::FreeCmd(idx)) => spec
                        .machineparts
                        .iter()
                        .flat_map(|p| p.commands.iter())
                        .any(|cmd| cmd.name == *name && cmd.index as u16 == *idx),
                    (ScriptChoice::NoFreeCmd, ActionLabel::NoFreeCmd) => true,
                    _ => false,
                }
            });
            match found {
                Some((label, next)) => {
                    trace.push((label, next.clone()));
                    cur = next;
                    step += 1;
                }
                None => {
                    return Err(EngineError::ChoiceNotEnabled {
                        step,
                        choice: choice.to_string(),
                    })
                }
            }
        } else {
            let succs = successors(&cur, spec);
            let (label, next) = succs
                .into_iter()
                .find(|(l, _)| !l.is_observation())
                .ok_or_else(|| EngineError::IllFormed("no successor at deterministic phase".into()))?;
            trace.push((label, next.clone()));
            cur = next;
        }
    }
}
