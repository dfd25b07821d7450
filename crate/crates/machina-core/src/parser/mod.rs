//! Parser and validator for the textual model DSL (`.cmdl`).
//!
//! Parsing runs in three stages: a recursive-descent pass into a raw syntax
//! tree, syntactic inlining of subdiagrams at their use sites, and a build
//! pass that assigns ids in depth-first document order, resolves names and
//! checks the model invariants. Any byte sequence yields either a validated
//! [`ModelSpec`] or at least one [`Diagnostic`].

mod lexer;
mod pretty;

pub use pretty::pretty_print;

use crate::diag::{has_errors, nearest_match, Diagnostic, Span};
use crate::model::*;
use lexer::{lex, Tok, Token};
use std::collections::{BTreeMap, BTreeSet};

// ---------------------------------------------------------------------------
// Raw syntax tree
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum RawExpr {
    Lit(bool),
    Name(String, Span),
    State(String, Span),
    InpSignal(String, Span),
    CmdChk(String, Span),
    TimerElapsed(String, Span),
    Not(Box<RawExpr>),
    And(Box<RawExpr>, Box<RawExpr>),
    Or(Box<RawExpr>, Box<RawExpr>),
    Eq(Box<RawExpr>, Box<RawExpr>),
}

#[derive(Debug, Clone)]
struct RawStmt {
    target: String,
    value: RawExpr,
    span: Span,
}

#[derive(Debug, Clone)]
struct RawBlock {
    stmts: Vec<RawStmt>,
    span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RawKind {
    Simple,
    Initial,
    Final,
    Choice,
}

#[derive(Debug, Clone)]
struct RawState {
    name: String,
    kind: RawKind,
    uses: Option<String>,
    children: Vec<RawState>,
    entry: Option<RawBlock>,
    continuous: Option<RawBlock>,
    span: Span,
}

#[derive(Debug, Clone)]
struct RawTransition {
    source: Vec<String>,
    dest: Vec<String>,
    guard: Option<RawExpr>,
    action: Option<RawBlock>,
    span: Span,
}

#[derive(Debug, Clone)]
struct RawDiagram {
    name: String,
    index: Option<u32>,
    states: Vec<RawState>,
    transitions: Vec<RawTransition>,
    span: Span,
}

#[derive(Debug, Clone)]
struct RawCommand {
    name: String,
    index: Option<u32>,
    guard: RawExpr,
    ready: RawExpr,
    accept: Option<RawBlock>,
    reject: Option<RawBlock>,
    span: Span,
}

#[derive(Debug, Clone)]
struct RawProp {
    name: String,
    stereotype: Stereotype,
    initial: bool,
    span: Span,
}

#[derive(Debug, Clone)]
struct RawPart {
    name: String,
    index: Option<u32>,
    properties: Vec<RawProp>,
    timers: Vec<(String, Span)>,
    commands: Vec<RawCommand>,
    machines: Vec<RawDiagram>,
    subdiagrams: Vec<RawDiagram>,
    prestate: Vec<RawBlock>,
    poststate: Vec<RawBlock>,
    span: Span,
}

// ---------------------------------------------------------------------------
// Recursive descent
// ---------------------------------------------------------------------------

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn at_ident(&self, kw: &str) -> bool {
        self.peek().kind == Tok::Ident && self.peek().text == kw
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, kind: Tok, what: &str) -> PResult<Token> {
        if self.peek().kind == kind {
            Ok(self.bump())
        } else {
            Err(self.err(format!("expected {what}, found `{}`", self.describe())))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.at_ident(kw) {
            self.bump();
            Ok(())
        } else {
            Err(self.err(format!("expected `{kw}`, found `{}`", self.describe())))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<(String, Span)> {
        let t = self.expect(Tok::Ident, what)?;
        Ok((t.text, t.span))
    }

    fn describe(&self) -> String {
        let t = self.peek();
        if t.kind == Tok::Eof {
            "<eof>".to_string()
        } else {
            t.text.clone()
        }
    }

    fn err(&self, msg: String) -> Diagnostic {
        Diagnostic::error(self.peek().span, "SYNTAX", msg)
    }

    fn model(&mut self) -> PResult<Vec<RawPart>> {
        let mut parts = Vec::new();
        while self.peek().kind != Tok::Eof {
            if self.at_ident("machinepart") {
                parts.push(self.machinepart()?);
            } else {
                return Err(self.err(format!(
                    "expected `machinepart`, found `{}`",
                    self.describe()
                )));
            }
        }
        Ok(parts)
    }

    fn opt_index(&mut self) -> PResult<Option<u32>> {
        if self.at_ident("index") {
            self.bump();
            let t = self.expect(Tok::Number, "an index number")?;
            let n: u32 = t
                .text
                .parse()
                .map_err(|_| Diagnostic::error(t.span, "SYNTAX", "index out of range"))?;
            Ok(Some(n))
        } else {
            Ok(None)
        }
    }

    fn machinepart(&mut self) -> PResult<RawPart> {
        self.expect_kw("machinepart")?;
        let (name, span) = self.ident("a machinepart name")?;
        let index = self.opt_index()?;
        self.expect(Tok::LBrace, "`{`")?;
        let mut part = RawPart {
            name,
            index,
            properties: Vec::new(),
            timers: Vec::new(),
            commands: Vec::new(),
            machines: Vec::new(),
            subdiagrams: Vec::new(),
            prestate: Vec::new(),
            poststate: Vec::new(),
            span,
        };
        loop {
            match self.peek().kind {
                Tok::RBrace => {
                    self.bump();
                    break;
                }
                Tok::Ident => match self.peek().text.as_str() {
                    "property" => part.properties.push(self.property()?),
                    "timer" => {
                        self.bump();
                        let (n, s) = self.ident("a timer name")?;
                        part.timers.push((n, s));
                    }
                    "command" => part.commands.push(self.command()?),
                    "statemachine" => part.machines.push(self.diagram("statemachine")?),
                    "subdiagram" => part.subdiagrams.push(self.diagram("subdiagram")?),
                    "prestate" => {
                        self.bump();
                        part.prestate.push(self.block()?);
                    }
                    "poststate" => {
                        self.bump();
                        part.poststate.push(self.block()?);
                    }
                    other => {
                        return Err(self.err(format!("unexpected `{other}` in machinepart body")))
                    }
                },
                _ => return Err(self.err("unexpected token in machinepart body".into())),
            }
        }
        Ok(part)
    }

    fn property(&mut self) -> PResult<RawProp> {
        self.expect_kw("property")?;
        let (name, span) = self.ident("a property name")?;
        self.expect(Tok::Colon, "`:`")?;
        let (st, st_span) = self.ident("a stereotype")?;
        let stereotype = match st.as_str() {
            "Input" => Stereotype::Input,
            "Output" => Stereotype::Output,
            "InputSignal" => Stereotype::InputSignal,
            "OutputSignal" => Stereotype::OutputSignal,
            "InOutSignal" => Stereotype::InOutSignal,
            "Var" => Stereotype::Var,
            other => {
                return Err(Diagnostic::error(
                    st_span,
                    "SYNTAX",
                    format!("unknown stereotype `{other}`"),
                ))
            }
        };
        let mut initial = false;
        if self.peek().kind == Tok::Eq {
            self.bump();
            let (v, vs) = self.ident("`true` or `false`")?;
            initial = match v.as_str() {
                "true" => true,
                "false" => false,
                _ => {
                    return Err(Diagnostic::error(
                        vs,
                        "SYNTAX",
                        "initial value must be `true` or `false`",
                    ))
                }
            };
        }
        Ok(RawProp { name, stereotype, initial, span })
    }

    fn command(&mut self) -> PResult<RawCommand> {
        self.expect_kw("command")?;
        let (name, span) = self.ident("a command name")?;
        let index = self.opt_index()?;
        self.expect(Tok::LBrace, "`{`")?;
        let mut guard = None;
        let mut ready = None;
        let mut accept = None;
        let mut reject = None;
        loop {
            match self.peek().kind {
                Tok::RBrace => {
                    self.bump();
                    break;
                }
                Tok::Ident => match self.peek().text.as_str() {
                    "guard" => {
                        self.bump();
                        self.expect(Tok::LBracket, "`[`")?;
                        guard = Some(self.expr()?);
                        self.expect(Tok::RBracket, "`]`")?;
                    }
                    "ready" => {
                        self.bump();
                        self.expect(Tok::LBracket, "`[`")?;
                        ready = Some(self.expr()?);
                        self.expect(Tok::RBracket, "`]`")?;
                    }
                    "accept" => {
                        self.bump();
                        accept = Some(self.block()?);
                    }
                    "reject" => {
                        self.bump();
                        reject = Some(self.block()?);
                    }
                    other => return Err(self.err(format!("unexpected `{other}` in command body"))),
                },
                _ => return Err(self.err("unexpected token in command body".into())),
            }
        }
        let guard = guard.ok_or_else(|| {
            Diagnostic::error(span, "SYNTAX", format!("command `{name}` has no guard condition"))
        })?;
        let ready = ready.ok_or_else(|| {
            Diagnostic::error(span, "SYNTAX", format!("command `{name}` has no ready condition"))
        })?;
        Ok(RawCommand { name, index, guard, ready, accept, reject, span })
    }

    fn diagram(&mut self, kw: &str) -> PResult<RawDiagram> {
        self.expect_kw(kw)?;
        let (name, span) = self.ident("a name")?;
        let index = if kw == "statemachine" { self.opt_index()? } else { None };
        self.expect(Tok::LBrace, "`{`")?;
        let (states, transitions) = self.diagram_body()?;
        Ok(RawDiagram { name, index, states, transitions, span })
    }

    /// States and transitions up to the closing `}`.
    fn diagram_body(&mut self) -> PResult<(Vec<RawState>, Vec<RawTransition>)> {
        let mut states = Vec::new();
        let mut transitions = Vec::new();
        loop {
            match self.peek().kind {
                Tok::RBrace => {
                    self.bump();
                    break;
                }
                Tok::Ident => match self.peek().text.as_str() {
                    "state" => states.push(self.state(RawKind::Simple)?),
                    "initial" => states.push(self.state(RawKind::Initial)?),
                    "final" => states.push(self.state(RawKind::Final)?),
                    "choice" => states.push(self.state(RawKind::Choice)?),
                    _ => transitions.push(self.transition()?),
                },
                _ => return Err(self.err("unexpected token in state machine body".into())),
            }
        }
        Ok((states, transitions))
    }

    fn state(&mut self, kind: RawKind) -> PResult<RawState> {
        self.bump(); // keyword
        let (name, span) = self.ident("a state name")?;
        let mut st = RawState {
            name,
            kind,
            uses: None,
            children: Vec::new(),
            entry: None,
            continuous: None,
            span,
        };
        if self.at_ident("uses") {
            if kind != RawKind::Simple {
                return Err(Diagnostic::error(span, "SYNTAX", "only plain states may use a diagram"));
            }
            self.bump();
            let (target, _) = self.ident("a subdiagram or state machine name")?;
            st.uses = Some(target);
            return Ok(st);
        }
        if self.peek().kind == Tok::LBrace {
            if kind != RawKind::Simple {
                return Err(Diagnostic::error(
                    span,
                    "SYNTAX",
                    "initial, final and choice states carry no body",
                ));
            }
            self.bump();
            loop {
                match self.peek().kind {
                    Tok::RBrace => {
                        self.bump();
                        break;
                    }
                    Tok::Ident => match self.peek().text.as_str() {
                        "state" => st.children.push(self.state(RawKind::Simple)?),
                        "initial" => st.children.push(self.state(RawKind::Initial)?),
                        "final" => st.children.push(self.state(RawKind::Final)?),
                        "choice" => st.children.push(self.state(RawKind::Choice)?),
                        "entry" => {
                            self.bump();
                            st.entry = Some(self.block()?);
                        }
                        "continuous" => {
                            self.bump();
                            st.continuous = Some(self.block()?);
                        }
                        other => {
                            return Err(self.err(format!("unexpected `{other}` in state body")))
                        }
                    },
                    _ => return Err(self.err("unexpected token in state body".into())),
                }
            }
        }
        Ok(st)
    }

    fn path(&mut self) -> PResult<Vec<String>> {
        let (first, _) = self.ident("a state path")?;
        let mut segs = vec![first];
        while self.peek().kind == Tok::Dot {
            self.bump();
            let (seg, _) = self.ident("a path segment")?;
            segs.push(seg);
        }
        Ok(segs)
    }

    fn transition(&mut self) -> PResult<RawTransition> {
        let span = self.peek().span;
        let source = self.path()?;
        self.expect(Tok::Arrow, "`->`")?;
        let dest = self.path()?;
        let mut guard = None;
        if self.peek().kind == Tok::LBracket {
            self.bump();
            guard = Some(self.expr()?);
            self.expect(Tok::RBracket, "`]`")?;
        }
        let mut action = None;
        if self.peek().kind == Tok::Slash {
            self.bump();
            action = Some(self.block()?);
        }
        Ok(RawTransition { source, dest, guard, action, span })
    }

    fn block(&mut self) -> PResult<RawBlock> {
        let span = self.expect(Tok::LBrace, "`{`")?.span;
        let mut stmts = Vec::new();
        loop {
            match self.peek().kind {
                Tok::RBrace => {
                    self.bump();
                    break;
                }
                Tok::Semi => {
                    self.bump();
                }
                Tok::Ident => {
                    let (target, tspan) = self.ident("an assignment target")?;
                    self.expect(Tok::Assign, "`:=`")?;
                    let value = self.expr()?;
                    stmts.push(RawStmt { target, value, span: tspan });
                }
                _ => return Err(self.err("unexpected token in behavior block".into())),
            }
        }
        Ok(RawBlock { stmts, span })
    }

    // expr := and (OR and)*
    fn expr(&mut self) -> PResult<RawExpr> {
        let mut lhs = self.expr_and()?;
        while self.at_ident("OR") {
            self.bump();
            let rhs = self.expr_and()?;
            lhs = RawExpr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn expr_and(&mut self) -> PResult<RawExpr> {
        let mut lhs = self.expr_eq()?;
        while self.at_ident("AND") {
            self.bump();
            let rhs = self.expr_eq()?;
            lhs = RawExpr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn expr_eq(&mut self) -> PResult<RawExpr> {
        let lhs = self.expr_unary()?;
        if self.peek().kind == Tok::EqEq {
            self.bump();
            let rhs = self.expr_unary()?;
            return Ok(RawExpr::Eq(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn expr_unary(&mut self) -> PResult<RawExpr> {
        if self.at_ident("NOT") {
            self.bump();
            let inner = self.expr_unary()?;
            return Ok(RawExpr::Not(Box::new(inner)));
        }
        self.expr_atom()
    }

    fn expr_atom(&mut self) -> PResult<RawExpr> {
        match self.peek().kind {
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident => {
                let (name, span) = self.ident("an expression")?;
                match name.as_str() {
                    "true" => Ok(RawExpr::Lit(true)),
                    "false" => Ok(RawExpr::Lit(false)),
                    "State" | "InpSignal" | "CmdChk" | "TimerElapsed" => {
                        self.expect(Tok::LParen, "`(`")?;
                        let segs = self.path()?;
                        self.expect(Tok::RParen, "`)`")?;
                        let arg = segs.join(".");
                        Ok(match name.as_str() {
                            "State" => RawExpr::State(arg, span),
                            "InpSignal" => RawExpr::InpSignal(arg, span),
                            "CmdChk" => RawExpr::CmdChk(arg, span),
                            _ => RawExpr::TimerElapsed(arg, span),
                        })
                    }
                    _ => Ok(RawExpr::Name(name, span)),
                }
            }
            _ => Err(self.err(format!("expected an expression, found `{}`", self.describe()))),
        }
    }
}

// ---------------------------------------------------------------------------
// Build: inline subdiagrams, assign ids, resolve names
// ---------------------------------------------------------------------------

enum PendingKind {
    TransitionGuard(usize),
    CommandGuard(usize, usize),
    CommandReady(usize, usize),
    /// behavior id, statement index
    Statement(usize, usize),
}

struct PendingExpr {
    part: usize,
    kind: PendingKind,
    raw: RawExpr,
}

#[derive(Default)]
struct Builder {
    diags: Vec<Diagnostic>,
    nodes: Vec<StateNode>,
    transitions: Vec<Transition>,
    behaviors: Vec<BehaviorBlock>,
    pending: Vec<PendingExpr>,
    /// (behavior id, statement index) -> (target name, span, part)
    stmt_targets: Vec<(usize, usize, String, Span, usize)>,
    /// node index -> referenced machine name
    submachine_fixups: Vec<(usize, String, Span)>,
}

impl Builder {
    fn error(&mut self, span: Span, code: &'static str, msg: impl Into<String>) {
        self.diags.push(Diagnostic::error(span, code, msg));
    }

    fn alloc_block(&mut self, part: usize, blk: &RawBlock) -> BehaviorId {
        let id = BehaviorId(self.behaviors.len() as u32);
        let mut statements = Vec::new();
        for (si, st) in blk.stmts.iter().enumerate() {
            self.stmt_targets
                .push((id.0 as usize, si, st.target.clone(), st.span, part));
            self.pending.push(PendingExpr {
                part,
                kind: PendingKind::Statement(id.0 as usize, si),
                raw: st.value.clone(),
            });
            statements.push(Assignment { target: PropId(0), value: Expr::Lit(false) });
        }
        self.behaviors.push(BehaviorBlock { id, statements });
        id
    }

    fn materialise(
        &mut self,
        part: usize,
        machine: usize,
        st: &RawState,
        parent: Option<StateId>,
        depth: u32,
        machine_names: &BTreeSet<&str>,
    ) -> StateId {
        let id = StateId(self.nodes.len() as u32);
        let kind = if st.uses.is_some() {
            NodeKind::SubmachineRef
        } else if !st.children.is_empty() {
            NodeKind::Composite
        } else {
            match st.kind {
                RawKind::Simple => NodeKind::Simple,
                RawKind::Initial => NodeKind::Initial,
                RawKind::Final => NodeKind::Final,
                RawKind::Choice => NodeKind::Choice,
            }
        };
        let entry = st.entry.as_ref().map(|blk| self.alloc_block(part, blk));
        let continuous = st.continuous.as_ref().map(|blk| self.alloc_block(part, blk));
        self.nodes.push(StateNode {
            id,
            name: st.name.clone(),
            kind,
            machine,
            parent,
            depth,
            children: Vec::new(),
            entry,
            continuous,
            submachine: None,
        });
        if let Some(uses) = &st.uses {
            if machine_names.contains(uses.as_str()) {
                self.submachine_fixups.push((id.0 as usize, uses.clone(), st.span));
            } else {
                // inline_state already rejected unknown names
                self.error(st.span, "UNKNOWN_NAME", format!("unknown diagram `{uses}`"));
            }
        }
        let mut child_ids = Vec::new();
        for child in &st.children {
            let cid = self.materialise(part, machine, child, Some(id), depth + 1, machine_names);
            child_ids.push(cid);
        }
        self.nodes[id.0 as usize].children = child_ids;
        id
    }
}

/// Parses and validates model source. On success the spec satisfies all
/// model invariants; accompanying warnings (if any) are returned alongside.
pub fn parse_model(source: &str) -> Result<(ModelSpec, Vec<Diagnostic>), Vec<Diagnostic>> {
    let toks = lex(source).map_err(|d| vec![d])?;
    let mut p = Parser { toks, pos: 0 };
    let raw = p.model().map_err(|d| vec![d])?;
    build(raw)
}

fn build(raw: Vec<RawPart>) -> Result<(ModelSpec, Vec<Diagnostic>), Vec<Diagnostic>> {
    let mut b = Builder::default();

    if raw.is_empty() {
        b.error(Span::default(), "EMPTY_MODEL", "a model needs at least one machinepart");
        return Err(b.diags);
    }

    let mut parts: Vec<MachinePart> = Vec::new();
    let mut prop_base = 0u32;

    for (pi, rp) in raw.iter().enumerate() {
        let part_index = rp.index.unwrap_or(pi as u32 + 1);

        let mut properties = Vec::new();
        let mut seen = BTreeSet::new();
        for prop in &rp.properties {
            if !seen.insert(prop.name.clone()) {
                b.error(prop.span, "DUPLICATE_NAME", format!("duplicate property `{}`", prop.name));
            }
            properties.push(Property {
                name: prop.name.clone(),
                stereotype: prop.stereotype,
                initial: prop.initial,
                id: PropId(prop_base + properties.len() as u32),
            });
        }
        prop_base += properties.len() as u32;

        let mut timers = Vec::new();
        for (tn, ts) in &rp.timers {
            if timers.contains(tn) {
                b.error(*ts, "DUPLICATE_NAME", format!("duplicate timer `{tn}`"));
            }
            timers.push(tn.clone());
        }
        if timers.len() > 16 {
            b.error(rp.span, "LIMIT_EXCEEDED", "at most 16 timers per model");
        }

        let mut prestate = Vec::new();
        for blk in &rp.prestate {
            prestate.push(b.alloc_block(pi, blk));
        }

        let mut commands = Vec::new();
        let mut cmd_names = BTreeSet::new();
        for (ci, rc) in rp.commands.iter().enumerate() {
            if !cmd_names.insert(rc.name.clone()) {
                b.error(rc.span, "DUPLICATE_NAME", format!("duplicate command `{}`", rc.name));
            }
            let accept = rc.accept.as_ref().map(|blk| b.alloc_block(pi, blk));
            let reject = rc.reject.as_ref().map(|blk| b.alloc_block(pi, blk));
            b.pending.push(PendingExpr {
                part: pi,
                kind: PendingKind::CommandGuard(pi, ci),
                raw: rc.guard.clone(),
            });
            b.pending.push(PendingExpr {
                part: pi,
                kind: PendingKind::CommandReady(pi, ci),
                raw: rc.ready.clone(),
            });
            commands.push(Command {
                name: rc.name.clone(),
                index: rc.index.unwrap_or(ci as u32 + 1),
                guard_condition: Expr::Lit(true),
                ready_condition: Expr::Lit(true),
                accept_action: accept,
                reject_action: reject,
            });
        }

        let sub_by_name: BTreeMap<&str, &RawDiagram> =
            rp.subdiagrams.iter().map(|d| (d.name.as_str(), d)).collect();
        let machine_names: BTreeSet<&str> = rp.machines.iter().map(|d| d.name.as_str()).collect();
        {
            let mut names = BTreeSet::new();
            for m in rp.machines.iter().chain(rp.subdiagrams.iter()) {
                if !names.insert(m.name.clone()) {
                    b.error(m.span, "DUPLICATE_NAME", format!("duplicate diagram name `{}`", m.name));
                }
            }
        }

        let mut machines = Vec::new();
        let machines_before: usize = parts.iter().map(|p| p.machines.len()).sum();
        for (mi, rm) in rp.machines.iter().enumerate() {
            let flat_machine = machines_before + mi;

            let mut inlined_states = Vec::new();
            let mut spliced = Vec::new();
            let mut stack = Vec::new();
            for st in &rm.states {
                match inline_state(st, &sub_by_name, &machine_names, &mut spliced, &mut stack, &[]) {
                    Ok(s) => inlined_states.push(s),
                    Err(d) => b.diags.push(d),
                }
            }
            let mut all_trans = spliced;
            all_trans.extend(rm.transitions.iter().cloned());

            let mut top = Vec::new();
            for st in &inlined_states {
                let id = b.materialise(pi, flat_machine, st, None, 1, &machine_names);
                top.push(id);
            }
            check_sibling_names(&mut b, &top, rm.span);

            let initial = top
                .iter()
                .copied()
                .find(|s| b.nodes[s.0 as usize].kind == NodeKind::Initial);

            let trans_base = b.transitions.len();
            for rt in &all_trans {
                let Some(source) = resolve_machine_path(&b, &top, &rt.source) else {
                    b.error(
                        rt.span,
                        "UNKNOWN_PATH",
                        format!("unknown transition source `{}`", rt.source.join(".")),
                    );
                    continue;
                };
                let Some(target) = resolve_machine_path(&b, &top, &rt.dest) else {
                    b.error(
                        rt.span,
                        "UNKNOWN_PATH",
                        format!("unknown transition target `{}`", rt.dest.join(".")),
                    );
                    continue;
                };
                let behavior = rt.action.as_ref().map(|blk| b.alloc_block(pi, blk));
                let id = TransId(b.transitions.len() as u32);
                if let Some(g) = &rt.guard {
                    b.pending.push(PendingExpr {
                        part: pi,
                        kind: PendingKind::TransitionGuard(id.0 as usize),
                        raw: g.clone(),
                    });
                }
                let Some((source_path, dest_path, self_loop)) =
                    transition_paths(&mut b, source, target, rt.span)
                else {
                    continue;
                };
                b.transitions.push(Transition {
                    id,
                    machine: flat_machine,
                    source: source_path,
                    target,
                    dest: dest_path,
                    // placeholder until the expression pass; None stays None
                    guard: rt.guard.as_ref().map(|_| Expr::Lit(false)),
                    effective_guard: Expr::Lit(false),
                    behavior,
                    is_self_loop: self_loop,
                    timer_mask: 0,
                });
            }

            let mut priority_order: Vec<TransId> =
                (trans_base..b.transitions.len()).map(|i| TransId(i as u32)).collect();
            priority_order.sort_by_key(|tid| {
                let t = &b.transitions[tid.0 as usize];
                (t.source_depth(), t.is_self_loop, t.id)
            });

            machines.push(StateMachine {
                name: rm.name.clone(),
                index: rm.index.unwrap_or(mi as u32 + 1),
                top,
                priority_order,
                is_root: true, // fixed once references are known
                initial,
            });
        }

        let mut poststate = Vec::new();
        for blk in &rp.poststate {
            poststate.push(b.alloc_block(pi, blk));
        }

        parts.push(MachinePart {
            name: rp.name.clone(),
            index: part_index,
            properties,
            commands,
            machines,
            prestate,
            poststate,
            timers,
        });
    }

    // resolve submachine references, mark referenced machines as non-root
    let flat_names: Vec<String> = parts
        .iter()
        .flat_map(|p| p.machines.iter().map(|m| m.name.clone()))
        .collect();
    let mut referenced: BTreeSet<usize> = BTreeSet::new();
    let fixups = std::mem::take(&mut b.submachine_fixups);
    for (ni, name, span) in fixups {
        match flat_names.iter().position(|n| *n == name) {
            Some(flat) => {
                b.nodes[ni].submachine = Some(flat);
                referenced.insert(flat);
            }
            None => {
                let suggestion = nearest_match(&name, flat_names.iter().map(|n| n.as_str()));
                let mut msg = format!("unknown state machine `{name}`");
                if let Some(s) = suggestion {
                    msg.push_str(&format!("; did you mean `{s}`?"));
                }
                b.error(span, "UNKNOWN_NAME", msg);
            }
        }
    }
    {
        let mut flat = 0;
        for part in parts.iter_mut() {
            for m in part.machines.iter_mut() {
                m.is_root = !referenced.contains(&flat);
                flat += 1;
            }
        }
    }

    let pending = std::mem::take(&mut b.pending);
    let stmt_targets = std::mem::take(&mut b.stmt_targets);
    let mut diags = std::mem::take(&mut b.diags);
    let mut spec = ModelSpec {
        machineparts: parts,
        nodes: b.nodes,
        transitions: b.transitions,
        behaviors: b.behaviors,
    };

    // second pass: resolve recorded expressions against the finished tree
    for pe in pending {
        match resolve_expr(&spec, pe.part, &pe.raw) {
            Ok(e) => match pe.kind {
                PendingKind::TransitionGuard(ti) => {
                    if let Some(t) = spec.transitions.get_mut(ti) {
                        t.guard = Some(e);
                    }
                }
                PendingKind::CommandGuard(p, c) => {
                    spec.machineparts[p].commands[c].guard_condition = e;
                }
                PendingKind::CommandReady(p, c) => {
                    spec.machineparts[p].commands[c].ready_condition = e;
                }
                PendingKind::Statement(bid, si) => {
                    spec.behaviors[bid].statements[si].value = e;
                }
            },
            Err(d) => diags.push(d),
        }
    }
    for (bid, si, target, span, part) in stmt_targets {
        let prop = spec.machineparts[part]
            .properties
            .iter()
            .find(|p| p.name == target)
            .map(|p| (p.id, p.stereotype));
        match prop {
            Some((id, st)) => {
                if !st.is_writable() {
                    diags.push(Diagnostic::error(
                        span,
                        "WRITE_TO_INPUT",
                        format!("assignment to `{target}` with stereotype {st} is not allowed"),
                    ));
                }
                spec.behaviors[bid].statements[si].target = id;
            }
            None => {
                let suggestion = nearest_match(
                    &target,
                    spec.machineparts[part].properties.iter().map(|p| p.name.as_str()),
                );
                let mut msg = format!("unknown property `{target}`");
                if let Some(s) = suggestion {
                    msg.push_str(&format!("; did you mean `{s}`?"));
                }
                diags.push(Diagnostic::error(span, "UNKNOWN_NAME", msg));
            }
        }
    }

    if has_errors(&diags) {
        return Err(diags);
    }
    finalize(&mut spec, &mut diags);
    if has_errors(&diags) {
        return Err(diags);
    }
    diags.extend(validate(&spec));
    if has_errors(&diags) {
        Err(diags)
    } else {
        Ok((spec, diags))
    }
}

/// Syntactic substitution of subdiagram content at a use site. Internal
/// transitions of the subdiagram are re-rooted at the using state's path and
/// collected in document order.
fn inline_state(
    st: &RawState,
    subs: &BTreeMap<&str, &RawDiagram>,
    machines: &BTreeSet<&str>,
    spliced: &mut Vec<RawTransition>,
    stack: &mut Vec<String>,
    prefix: &[String],
) -> Result<RawState, Diagnostic> {
    let mut out = st.clone();
    let mut here = prefix.to_vec();
    here.push(st.name.clone());
    if let Some(uses) = &st.uses {
        if machines.contains(uses.as_str()) {
            return Ok(out); // submachine reference, kept as-is
        }
        let Some(sub) = subs.get(uses.as_str()) else {
            return Err(Diagnostic::error(
                st.span,
                "UNKNOWN_NAME",
                format!("`uses {uses}` matches no subdiagram or state machine"),
            ));
        };
        if stack.contains(uses) {
            return Err(Diagnostic::error(
                st.span,
                "INLINE_CYCLE",
                format!("subdiagram `{uses}` includes itself"),
            ));
        }
        stack.push(uses.clone());
        out.uses = None;
        out.children = Vec::new();
        for child in &sub.states {
            out.children.push(inline_state(child, subs, machines, spliced, stack, &here)?);
        }
        for t in &sub.transitions {
            let mut t2 = t.clone();
            let mut src = here.clone();
            src.extend(t.source.iter().cloned());
            let mut dst = here.clone();
            dst.extend(t.dest.iter().cloned());
            t2.source = src;
            t2.dest = dst;
            spliced.push(t2);
        }
        stack.pop();
        return Ok(out);
    }
    out.children = Vec::new();
    for child in &st.children {
        out.children.push(inline_state(child, subs, machines, spliced, stack, &here)?);
    }
    Ok(out)
}

fn check_sibling_names(b: &mut Builder, siblings: &[StateId], span: Span) {
    let mut seen = BTreeSet::new();
    let mut dups = Vec::new();
    for s in siblings {
        let name = b.nodes[s.0 as usize].name.clone();
        if !seen.insert(name.clone()) {
            dups.push(name);
        }
    }
    for name in dups {
        b.error(span, "DUPLICATE_NAME", format!("duplicate sibling state `{name}`"));
    }
    let children: Vec<Vec<StateId>> =
        siblings.iter().map(|s| b.nodes[s.0 as usize].children.clone()).collect();
    for ch in children {
        if !ch.is_empty() {
            check_sibling_names(b, &ch, span);
        }
    }
}

/// Resolves a dotted path relative to a machine's top-level states.
fn resolve_machine_path(b: &Builder, top: &[StateId], segs: &[String]) -> Option<StateId> {
    let mut level: Vec<StateId> = top.to_vec();
    let mut cur: Option<StateId> = None;
    for seg in segs {
        let found = level.iter().copied().find(|s| b.nodes[s.0 as usize].name == *seg)?;
        level = b.nodes[found.0 as usize].children.clone();
        cur = Some(found);
    }
    cur
}

/// Computes the root-to-source path, the entered configuration (from the
/// least-common-ancestor level down, with initial completion) and whether
/// the transition is a self-loop.
fn transition_paths(
    b: &mut Builder,
    source: StateId,
    target: StateId,
    span: Span,
) -> Option<(Vec<StateId>, Vec<StateId>, bool)> {
    let chain = |mut s: StateId| {
        let mut path = vec![s];
        while let Some(p) = b.nodes[s.0 as usize].parent {
            path.push(p);
            s = p;
        }
        path.reverse();
        path
    };
    let s_path = chain(source);
    let t_path = chain(target);
    let self_loop = source == target;

    // length of the common prefix; a self-loop exits and re-enters its source
    let mut lca = 0;
    while lca < s_path.len() && lca < t_path.len() && s_path[lca] == t_path[lca] {
        lca += 1;
    }
    if self_loop {
        lca = s_path.len() - 1;
    } else if lca == t_path.len() {
        // target is an ancestor of the source: re-enter the target
        lca = t_path.len() - 1;
    }
    let mut dest: Vec<StateId> = t_path[lca..].to_vec();
    if dest.is_empty() {
        dest.push(target);
    }
    // initial completion below the final target
    let mut cur = *dest.last().unwrap();
    loop {
        let node = &b.nodes[cur.0 as usize];
        if node.kind == NodeKind::SubmachineRef || node.children.is_empty() {
            break;
        }
        let init = node
            .children
            .iter()
            .copied()
            .find(|c| b.nodes[c.0 as usize].kind == NodeKind::Initial);
        match init {
            Some(i) => {
                dest.push(i);
                cur = i;
            }
            None => {
                let name = b.nodes[cur.0 as usize].name.clone();
                b.error(
                    span,
                    "MISSING_INITIAL",
                    format!("composite state `{name}` is entered but has no initial pseudo-state"),
                );
                return None;
            }
        }
    }
    Some((s_path, dest, self_loop))
}

fn resolve_expr(spec: &ModelSpec, part: usize, raw: &RawExpr) -> Result<Expr, Diagnostic> {
    let p = &spec.machineparts[part];
    Ok(match raw {
        RawExpr::Lit(v) => Expr::Lit(*v),
        RawExpr::Name(n, span) => {
            if let Some(prop) = p.properties.iter().find(|q| q.name == *n) {
                Expr::Prop(prop.id)
            } else {
                let suggestion = nearest_match(n, p.properties.iter().map(|q| q.name.as_str()));
                let mut msg = format!("unknown property `{n}`");
                if let Some(s) = suggestion {
                    msg.push_str(&format!("; did you mean `{s}`?"));
                }
                return Err(Diagnostic::error(*span, "UNKNOWN_NAME", msg));
            }
        }
        RawExpr::InpSignal(n, span) => {
            let Some(prop) = p.properties.iter().find(|q| q.name == *n) else {
                return Err(Diagnostic::error(
                    *span,
                    "UNKNOWN_NAME",
                    format!("unknown input signal `{n}`"),
                ));
            };
            if !matches!(prop.stereotype, Stereotype::InputSignal | Stereotype::InOutSignal) {
                return Err(Diagnostic::error(
                    *span,
                    "STEREOTYPE_MISMATCH",
                    format!("`{n}` is {} but InpSignal() expects an input signal", prop.stereotype),
                ));
            }
            Expr::InpSignal(prop.id)
        }
        RawExpr::CmdChk(n, span) => {
            let Some(cmd) = p.commands.iter().find(|c| c.name == *n) else {
                let suggestion = nearest_match(n, p.commands.iter().map(|c| c.name.as_str()));
                let mut msg = format!("unknown command `{n}`");
                if let Some(s) = suggestion {
                    msg.push_str(&format!("; did you mean `{s}`?"));
                }
                return Err(Diagnostic::error(*span, "UNKNOWN_NAME", msg));
            };
            Expr::CmdChk { part, index: cmd.index }
        }
        RawExpr::TimerElapsed(n, span) => {
            let Some(pos) = p.timers.iter().position(|t| t == n) else {
                return Err(Diagnostic::error(
                    *span,
                    "UNKNOWN_NAME",
                    format!("unknown timer `{n}`; declare it with `timer {n}`"),
                ));
            };
            Expr::TimerElapsed(TimerId(pos as u32))
        }
        RawExpr::State(path, span) => {
            let r = spec
                .resolve_state_path(path)
                .map_err(|d| Diagnostic::error(*span, d.code, d.message))?;
            Expr::State(r)
        }
        RawExpr::Not(x) => Expr::not(resolve_expr(spec, part, x)?),
        RawExpr::And(a, c) => Expr::and(resolve_expr(spec, part, a)?, resolve_expr(spec, part, c)?),
        RawExpr::Or(a, c) => Expr::or(resolve_expr(spec, part, a)?, resolve_expr(spec, part, c)?),
        RawExpr::Eq(a, c) => Expr::Eq(
            Box::new(resolve_expr(spec, part, a)?),
            Box::new(resolve_expr(spec, part, c)?),
        ),
    })
}

/// Fills in derived transition data once expressions are resolved.
fn finalize(spec: &mut ModelSpec, diags: &mut Vec<Diagnostic>) {
    for ti in 0..spec.transitions.len() {
        let eff = spec.effective_guard(&spec.transitions[ti]);
        let t = &mut spec.transitions[ti];
        t.timer_mask = eff.timer_mask();
        t.effective_guard = eff;
    }
    let mut cmd_indices = BTreeSet::new();
    let mut machine_indices = BTreeSet::new();
    let mut part_indices = BTreeSet::new();
    for part in &spec.machineparts {
        if !part_indices.insert(part.index) {
            diags.push(Diagnostic::error(
                Span::default(),
                "DUPLICATE_INDEX",
                format!("machinepart index {} is used twice", part.index),
            ));
        }
        for c in &part.commands {
            if !cmd_indices.insert(c.index) {
                diags.push(Diagnostic::error(
                    Span::default(),
                    "DUPLICATE_INDEX",
                    format!("command index {} is used twice", c.index),
                ));
            }
        }
        for m in &part.machines {
            if !machine_indices.insert(m.index) {
                diags.push(Diagnostic::error(
                    Span::default(),
                    "DUPLICATE_INDEX",
                    format!("state machine index {} is used twice", m.index),
                ));
            }
        }
    }
    if spec.total_properties() > 64 {
        diags.push(Diagnostic::error(
            Span::default(),
            "LIMIT_EXCEEDED",
            "at most 64 properties per model",
        ));
    }
}

/// Re-checks model invariants on a built spec; empty iff all hold. Warnings
/// cover unreachable states (no incoming transition and not an initial node).
pub fn validate(spec: &ModelSpec) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    // unique ids by exhaustive scan
    for (i, n) in spec.nodes.iter().enumerate() {
        if n.id.0 as usize != i {
            diags.push(Diagnostic::error(
                Span::default(),
                "ID_INTEGRITY",
                "state id table is inconsistent",
            ));
        }
    }
    for (i, t) in spec.transitions.iter().enumerate() {
        if t.id.0 as usize != i {
            diags.push(Diagnostic::error(
                Span::default(),
                "ID_INTEGRITY",
                "transition id table is inconsistent",
            ));
        }
    }
    for (i, bb) in spec.behaviors.iter().enumerate() {
        if bb.id.0 as usize != i {
            diags.push(Diagnostic::error(
                Span::default(),
                "ID_INTEGRITY",
                "behavior id table is inconsistent",
            ));
        }
    }

    // stereotype write rule over all behaviors
    for bb in &spec.behaviors {
        for st in &bb.statements {
            let p = spec.prop(st.target);
            if !p.stereotype.is_writable() {
                diags.push(Diagnostic::error(
                    Span::default(),
                    "WRITE_TO_INPUT",
                    format!("behavior {} assigns to `{}` ({})", bb.id.0, p.name, p.stereotype),
                ));
            }
        }
    }

    // choice nodes: at most one unguarded (else) outgoing transition
    let mut else_count: BTreeMap<StateId, usize> = BTreeMap::new();
    for t in &spec.transitions {
        let src = spec.node(t.source_state());
        if src.kind == NodeKind::Choice && t.guard.is_none() {
            *else_count.entry(src.id).or_insert(0) += 1;
        }
    }
    for (sid, n) in else_count {
        if n > 1 {
            diags.push(Diagnostic::error(
                Span::default(),
                "CHOICE_MULTIPLE_ELSE",
                format!(
                    "choice node `{}` has {n} unguarded outgoing transitions",
                    spec.qualified_name(sid)
                ),
            ));
        }
    }

    // pseudo-states carry no behavior
    for n in &spec.nodes {
        if matches!(n.kind, NodeKind::Initial | NodeKind::Final | NodeKind::Choice)
            && (n.entry.is_some() || n.continuous.is_some())
        {
            diags.push(Diagnostic::error(
                Span::default(),
                "PSEUDO_STATE_BEHAVIOR",
                format!("pseudo-state `{}` carries behavior", spec.qualified_name(n.id)),
            ));
        }
    }

    // machines need an initial pseudo-state to be enterable
    for part in &spec.machineparts {
        for m in &part.machines {
            if m.initial.is_none() {
                diags.push(Diagnostic::error(
                    Span::default(),
                    "MISSING_INITIAL",
                    format!("state machine `{}` has no initial pseudo-state", m.name),
                ));
            }
        }
    }

    // unreachable states: no incoming dest and not an initial node
    let mut entered: BTreeSet<StateId> = BTreeSet::new();
    for t in &spec.transitions {
        for d in &t.dest {
            entered.insert(*d);
        }
    }
    for n in &spec.nodes {
        if n.kind == NodeKind::Initial {
            continue;
        }
        if !entered.contains(&n.id) {
            diags.push(Diagnostic::warning(
                Span::default(),
                "UNREACHABLE_STATE",
                format!("state `{}` has no incoming transition", spec.qualified_name(n.id)),
            ));
        }
    }
    diags
}
