//! Domain AST for machines, state machines, expressions and behaviors.
//!
//! A [`ModelSpec`] is immutable after validation and safe to share read-only
//! across threads. All identifiers (state ids, transition ids, behavior ids,
//! property ids) are assigned in depth-first document order by the parser and
//! are unique model-wide.

use crate::diag::{nearest_match, Diagnostic, Span};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TransId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BehaviorId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PropId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimerId(pub u32);

/// Who may write a property. Input-like stereotypes are free variables chosen
/// by the environment each cycle; the rest are written by the model only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stereotype {
    Input,
    Output,
    InputSignal,
    OutputSignal,
    InOutSignal,
    Var,
}

impl Stereotype {
    /// Environment-writable ("free") properties.
    pub fn is_free(self) -> bool {
        matches!(
            self,
            Stereotype::Input | Stereotype::InputSignal | Stereotype::InOutSignal
        )
    }

    /// Legal assignment targets for behaviors.
    pub fn is_writable(self) -> bool {
        matches!(
            self,
            Stereotype::Output | Stereotype::OutputSignal | Stereotype::InOutSignal | Stereotype::Var
        )
    }

    /// Properties exposed through observation self-loops.
    pub fn is_observable(self) -> bool {
        matches!(self, Stereotype::Output | Stereotype::OutputSignal)
    }
}

impl fmt::Display for Stereotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stereotype::Input => "Input",
            Stereotype::Output => "Output",
            Stereotype::InputSignal => "InputSignal",
            Stereotype::OutputSignal => "OutputSignal",
            Stereotype::InOutSignal => "InOutSignal",
            Stereotype::Var => "Var",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Property {
    pub name: String,
    pub stereotype: Stereotype,
    pub initial: bool,
    /// Global id; doubles as the bit position in a configuration valuation.
    pub id: PropId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    pub name: String,
    /// Model-wide command index as used in `freecmd`/`command` action labels.
    pub index: u32,
    pub guard_condition: Expr,
    pub ready_condition: Expr,
    pub accept_action: Option<BehaviorId>,
    pub reject_action: Option<BehaviorId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Simple,
    Composite,
    Initial,
    Final,
    Choice,
    /// Reference to a separately executing state machine.
    SubmachineRef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateNode {
    pub id: StateId,
    pub name: String,
    pub kind: NodeKind,
    pub machine: usize,
    pub parent: Option<StateId>,
    pub depth: u32,
    pub children: Vec<StateId>,
    pub entry: Option<BehaviorId>,
    pub continuous: Option<BehaviorId>,
    /// For `SubmachineRef` nodes: index of the referenced machine.
    pub submachine: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub id: TransId,
    pub machine: usize,
    /// Root-to-source path inside the machine (innermost last).
    pub source: Vec<StateId>,
    /// Target state as written in the source text.
    pub target: StateId,
    /// Configuration entered, starting at the least common ancestor level;
    /// includes initial-completion below the target.
    pub dest: Vec<StateId>,
    /// Guard as written; `None` means defaulted (see [`ModelSpec::effective_guard`]).
    pub guard: Option<Expr>,
    /// Defaulted guard, filled in during validation.
    pub effective_guard: Expr,
    pub behavior: Option<BehaviorId>,
    pub is_self_loop: bool,
    /// Bitmask over timer ids read by the effective guard.
    pub timer_mask: u16,
}

impl Transition {
    pub fn source_state(&self) -> StateId {
        *self.source.last().expect("transition source path is nonempty")
    }

    pub fn source_depth(&self) -> u32 {
        self.source.len() as u32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateMachine {
    pub name: String,
    /// Paper-style machine index used in `states(i, ...)` labels.
    pub index: u32,
    /// Top-level states (the machine has no materialised root node).
    pub top: Vec<StateId>,
    /// Transition ids owned by this machine, in priority scan order
    /// (source depth, self-loops last, then document order).
    pub priority_order: Vec<TransId>,
    /// True when no submachine reference points at this machine; root
    /// machines start active in the initial configuration.
    pub is_root: bool,
    /// Initial pseudo-state among `top`, when present.
    pub initial: Option<StateId>,
}

/// One `target := expr` statement.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub target: PropId,
    pub value: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorBlock {
    pub id: BehaviorId,
    pub statements: Vec<Assignment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachinePart {
    pub name: String,
    /// Paper-style machinepart index (`M<i>'prop` in observation labels).
    pub index: u32,
    pub properties: Vec<Property>,
    pub commands: Vec<Command>,
    /// Executable machines in their predetermined execution order.
    pub machines: Vec<StateMachine>,
    pub prestate: Vec<BehaviorId>,
    pub poststate: Vec<BehaviorId>,
    pub timers: Vec<String>,
}

impl MachinePart {
    pub fn inputs(&self) -> impl Iterator<Item = &Property> {
        self.properties.iter().filter(|p| p.stereotype == Stereotype::Input)
    }

    pub fn free_signals(&self) -> impl Iterator<Item = &Property> {
        self.properties.iter().filter(|p| {
            matches!(p.stereotype, Stereotype::InputSignal | Stereotype::InOutSignal)
        })
    }

    pub fn observables(&self) -> impl Iterator<Item = &Property> {
        self.properties.iter().filter(|p| p.stereotype.is_observable())
    }

    pub fn command_by_index(&self, index: u32) -> Option<&Command> {
        self.commands.iter().find(|c| c.index == index)
    }
}

/// Boolean expression over a configuration. Evaluation is total and pure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Lit(bool),
    /// Bare property reference.
    Prop(PropId),
    /// `InpSignal(name)`; by validation the property is input-signal shaped.
    InpSignal(PropId),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Eq(Box<Expr>, Box<Expr>),
    /// `State(path)` active-state predicate.
    State(StateRef),
    /// `CmdChk(name)`: command on the machinepart interface and accepted.
    CmdChk { part: usize, index: u32 },
    /// Free timer oracle, chosen nondeterministically each cycle.
    TimerElapsed(TimerId),
}

/// A resolved `State(...)` path: either a concrete node or a machine root.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateRef {
    Node(StateId),
    /// The root of a state machine; active iff the machine has active states.
    Machine(usize),
}

/// Read access to a semantic state, implemented by `engine::Configuration`.
pub trait EvalEnv {
    fn prop(&self, p: PropId) -> bool;
    fn state_active(&self, s: StateRef) -> bool;
    fn cmd_check(&self, part: usize, index: u32) -> bool;
    fn timer_elapsed(&self, t: TimerId) -> bool;
}

/// Evaluates `e` against `env`. Pure: the value is determined solely by `env`.
pub fn eval_expr(e: &Expr, env: &impl EvalEnv) -> bool {
    match e {
        Expr::Lit(b) => *b,
        Expr::Prop(p) | Expr::InpSignal(p) => env.prop(*p),
        Expr::Not(x) => !eval_expr(x, env),
        Expr::And(a, b) => eval_expr(a, env) && eval_expr(b, env),
        Expr::Or(a, b) => eval_expr(a, env) || eval_expr(b, env),
        Expr::Eq(a, b) => eval_expr(a, env) == eval_expr(b, env),
        Expr::State(s) => env.state_active(*s),
        Expr::CmdChk { part, index } => env.cmd_check(*part, *index),
        Expr::TimerElapsed(t) => env.timer_elapsed(*t),
    }
}

impl Expr {
    pub fn and(a: Expr, b: Expr) -> Expr {
        Expr::And(Box::new(a), Box::new(b))
    }
    pub fn or(a: Expr, b: Expr) -> Expr {
        Expr::Or(Box::new(a), Box::new(b))
    }
    pub fn not(a: Expr) -> Expr {
        Expr::Not(Box::new(a))
    }

    fn collect_timers(&self, mask: &mut u16) {
        match self {
            Expr::TimerElapsed(t) => *mask |= 1 << t.0,
            Expr::Not(x) => x.collect_timers(mask),
            Expr::And(a, b) | Expr::Or(a, b) | Expr::Eq(a, b) => {
                a.collect_timers(mask);
                b.collect_timers(mask);
            }
            _ => {}
        }
    }

    pub fn timer_mask(&self) -> u16 {
        let mut m = 0;
        self.collect_timers(&mut m);
        m
    }
}

/// The parsed machine: machineparts in execution order plus the shared
/// node/transition/behavior arenas.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub machineparts: Vec<MachinePart>,
    /// All state nodes of all machines, indexed by `StateId`.
    pub nodes: Vec<StateNode>,
    /// All transitions, indexed by `TransId`; ids follow document order.
    pub transitions: Vec<Transition>,
    /// All behavior blocks, indexed by `BehaviorId`.
    pub behaviors: Vec<BehaviorBlock>,
}

impl ModelSpec {
    pub fn node(&self, id: StateId) -> &StateNode {
        &self.nodes[id.0 as usize]
    }

    pub fn transition(&self, id: TransId) -> &Transition {
        &self.transitions[id.0 as usize]
    }

    pub fn behavior(&self, id: BehaviorId) -> &BehaviorBlock {
        &self.behaviors[id.0 as usize]
    }

    pub fn prop(&self, id: PropId) -> &Property {
        let mut idx = id.0 as usize;
        for part in &self.machineparts {
            if idx < part.properties.len() {
                return &part.properties[idx];
            }
            idx -= part.properties.len();
        }
        panic!("property id out of range");
    }

    /// Machinepart owning a property id.
    pub fn prop_part(&self, id: PropId) -> usize {
        let mut idx = id.0 as usize;
        for (pi, part) in self.machineparts.iter().enumerate() {
            if idx < part.properties.len() {
                return pi;
            }
            idx -= part.properties.len();
        }
        panic!("property id out of range");
    }

    pub fn total_properties(&self) -> usize {
        self.machineparts.iter().map(|p| p.properties.len()).sum()
    }

    /// Executable machines across all machineparts, in execution order.
    pub fn all_machines(&self) -> impl Iterator<Item = (usize, usize, &StateMachine)> {
        self.machineparts
            .iter()
            .enumerate()
            .flat_map(|(pi, part)| part.machines.iter().enumerate().map(move |(mi, m)| (pi, mi, m)))
    }

    pub fn machine(&self, part: usize, machine: usize) -> &StateMachine {
        &self.machineparts[part].machines[machine]
    }

    /// Qualified dotted name of a node, rooted at its machine name.
    pub fn qualified_name(&self, id: StateId) -> String {
        let mut parts = Vec::new();
        let mut cur = Some(id);
        let machine_idx = self.node(id).machine;
        while let Some(c) = cur {
            let n = self.node(c);
            parts.push(n.name.clone());
            cur = n.parent;
        }
        let (pi, mi) = self.machine_position(machine_idx);
        parts.push(self.machineparts[pi].machines[mi].name.clone());
        parts.reverse();
        parts.join(".")
    }

    /// Maps a flat machine index (over all parts) back to (part, machine).
    pub fn machine_position(&self, flat: usize) -> (usize, usize) {
        let mut idx = flat;
        for (pi, part) in self.machineparts.iter().enumerate() {
            if idx < part.machines.len() {
                return (pi, idx);
            }
            idx -= part.machines.len();
        }
        panic!("machine index out of range");
    }

    pub fn flat_machine_index(&self, part: usize, machine: usize) -> usize {
        self.machineparts[..part]
            .iter()
            .map(|p| p.machines.len())
            .sum::<usize>()
            + machine
    }

    pub fn num_machines(&self) -> usize {
        self.machineparts.iter().map(|p| p.machines.len()).sum()
    }

    /// Resolves a dotted state path. The first segment names a state machine
    /// or a globally unique state; later segments navigate children, stepping
    /// through submachine references transparently.
    pub fn resolve_state_path(&self, path: &str) -> Result<StateRef, Diagnostic> {
        let segments: Vec<&str> = path.split('.').collect();
        if segments.is_empty() || segments.iter().any(|s| s.is_empty()) {
            return Err(Diagnostic::error(
                Span::default(),
                "UNKNOWN_PATH",
                format!("malformed state path `{path}`"),
            ));
        }

        // Root segment: machine name first, then a globally unique state name.
        let head = segments[0];
        let mut cursor: Option<StateRef> = None;
        for (fi, (_, _, m)) in self.all_machines().enumerate() {
            if m.name == head {
                cursor = Some(StateRef::Machine(fi));
                break;
            }
        }
        if cursor.is_none() {
            let mut hits = self.nodes.iter().filter(|n| n.name == head);
            match (hits.next(), hits.next()) {
                (Some(n), None) => cursor = Some(StateRef::Node(n.id)),
                (Some(_), Some(_)) => {
                    return Err(Diagnostic::error(
                        Span::default(),
                        "AMBIGUOUS_PATH",
                        format!("state path root `{head}` is ambiguous; qualify it with its machine name"),
                    ))
                }
                (None, None) => {
                    let suggestion = nearest_match(
                        head,
                        self.nodes
                            .iter()
                            .map(|n| n.name.as_str())
                            .chain(self.all_machines().map(|(_, _, m)| m.name.as_str())),
                    );
                    return Err(unknown_path(path, head, suggestion));
                }
                (None, Some(_)) => unreachable!(),
            }
        }

        for seg in &segments[1..] {
            let children: Vec<StateId> = match cursor.unwrap() {
                StateRef::Machine(fi) => {
                    let (pi, mi) = self.machine_position(fi);
                    self.machineparts[pi].machines[mi].top.clone()
                }
                StateRef::Node(id) => {
                    let n = self.node(id);
                    if let Some(sub) = n.submachine {
                        let (pi, mi) = self.machine_position(sub);
                        self.machineparts[pi].machines[mi].top.clone()
                    } else {
                        n.children.clone()
                    }
                }
            };
            let found = children.iter().find(|c| self.node(**c).name == *seg);
            match found {
                Some(c) => cursor = Some(StateRef::Node(*c)),
                None => {
                    let suggestion =
                        nearest_match(seg, children.iter().map(|c| self.node(*c).name.as_str()));
                    return Err(unknown_path(path, seg, suggestion));
                }
            }
        }
        Ok(cursor.unwrap())
    }

    /// Applies the paper's unguarded-transition defaults.
    ///
    /// Unguarded transitions from an initial pseudo-state or into a choice
    /// node are `true`; unguarded transitions out of a choice node become the
    /// conjunction of the negated sibling guards (else); every other
    /// unguarded transition is `false`. Guarded transitions are unchanged,
    /// which makes the operation idempotent.
    pub fn effective_guard(&self, t: &Transition) -> Expr {
        if let Some(g) = &t.guard {
            return g.clone();
        }
        let src = self.node(t.source_state());
        let dst_outer = t.dest.first().copied();
        let into_choice = t
            .dest
            .last()
            .map(|d| self.node(*d).kind == NodeKind::Choice)
            .unwrap_or(false);
        if src.kind == NodeKind::Initial || into_choice {
            return Expr::Lit(true);
        }
        if src.kind == NodeKind::Choice {
            // else: negation of every guarded sibling.
            let mut acc = Expr::Lit(true);
            let mut first = true;
            for other in &self.transitions {
                if other.machine == t.machine
                    && other.id != t.id
                    && other.source_state() == t.source_state()
                {
                    if let Some(g) = &other.guard {
                        let neg = Expr::not(g.clone());
                        acc = if first { neg } else { Expr::and(acc, neg) };
                        first = false;
                    }
                }
            }
            return acc;
        }
        let _ = dst_outer;
        Expr::Lit(false)
    }

    /// Timers syntactically readable from the active configuration of one
    /// machine; used to avoid sampling oracles nobody consults this cycle.
    pub fn machine_timer_mask(&self, flat_machine: usize, active: &[StateId]) -> u16 {
        let (pi, mi) = self.machine_position(flat_machine);
        let m = &self.machineparts[pi].machines[mi];
        let mut mask = 0u16;
        for tid in &m.priority_order {
            let t = self.transition(*tid);
            if t.timer_mask != 0 && active.contains(&t.source_state()) {
                mask |= t.timer_mask;
            }
        }
        mask
    }
}

fn unknown_path(path: &str, segment: &str, suggestion: Option<&str>) -> Diagnostic {
    let mut msg = format!("unknown state `{segment}` in path `{path}`");
    if let Some(s) = suggestion {
        msg.push_str(&format!("; did you mean `{s}`?"));
    }
    Diagnostic::error(Span::default(), "UNKNOWN_PATH", msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edit_distance_suggestions() {
        assert_eq!(crate::diag::edit_distance("Disabled", "Disabled"), 0);
        assert_eq!(crate::diag::edit_distance("Disabld", "Disabled"), 1);
    }
}
