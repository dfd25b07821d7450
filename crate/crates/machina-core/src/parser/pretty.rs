//! Pretty-printer for a built [`ModelSpec`].
//!
//! Prints the inlined form (subdiagrams are already substituted), so parsing
//! the output again yields a structurally equal spec.

use crate::model::*;
use std::fmt::Write;

pub fn pretty_print(spec: &ModelSpec) -> String {
    let mut out = String::new();
    for part in &spec.machineparts {
        let _ = writeln!(out, "machinepart {} index {} {{", part.name, part.index);
        for p in &part.properties {
            let init = if p.initial { " = true" } else { "" };
            let _ = writeln!(out, "  property {} : {}{}", p.name, p.stereotype, init);
        }
        for t in &part.timers {
            let _ = writeln!(out, "  timer {t}");
        }
        for c in &part.commands {
            let _ = writeln!(out, "  command {} index {} {{", c.name, c.index);
            let _ = writeln!(out, "    guard [{}]", expr(spec, part, &c.guard_condition));
            let _ = writeln!(out, "    ready [{}]", expr(spec, part, &c.ready_condition));
            if let Some(b) = c.accept_action {
                let _ = write!(out, "    accept ");
                block(&mut out, spec, part, b, 4);
            }
            if let Some(b) = c.reject_action {
                let _ = write!(out, "    reject ");
                block(&mut out, spec, part, b, 4);
            }
            let _ = writeln!(out, "  }}");
        }
        for m in &part.machines {
            let _ = writeln!(out, "  statemachine {} index {} {{", m.name, m.index);
            for s in &m.top {
                state(&mut out, spec, part, *s, 4);
            }
            let flat = flat_index(spec, part, m);
            for t in spec.transitions.iter().filter(|t| t.machine == flat) {
                let src = machine_path(spec, t.source_state());
                let dst = machine_path(spec, t.target);
                let _ = write!(out, "    {src} -> {dst}");
                if let Some(g) = &t.guard {
                    let _ = write!(out, " [{}]", expr(spec, part, g));
                }
                if let Some(b) = t.behavior {
                    let _ = write!(out, " / ");
                    block_inline(&mut out, spec, part, b);
                }
                let _ = writeln!(out);
            }
            let _ = writeln!(out, "  }}");
        }
        for b in &part.prestate {
            let _ = write!(out, "  prestate ");
            block(&mut out, spec, part, *b, 2);
        }
        for b in &part.poststate {
            let _ = write!(out, "  poststate ");
            block(&mut out, spec, part, *b, 2);
        }
        let _ = writeln!(out, "}}");
    }
    out
}

fn flat_index(spec: &ModelSpec, part: &MachinePart, m: &StateMachine) -> usize {
    let pi = spec
        .machineparts
        .iter()
        .position(|p| std::ptr::eq(p, part))
        .unwrap();
    let mi = part.machines.iter().position(|x| std::ptr::eq(x, m)).unwrap();
    spec.flat_machine_index(pi, mi)
}

fn machine_path(spec: &ModelSpec, id: StateId) -> String {
    let mut segs = Vec::new();
    let mut cur = Some(id);
    while let Some(c) = cur {
        let n = spec.node(c);
        segs.push(n.name.clone());
        cur = n.parent;
    }
    segs.reverse();
    segs.join(".")
}

fn state(out: &mut String, spec: &ModelSpec, part: &MachinePart, id: StateId, indent: usize) {
    let n = spec.node(id);
    let pad = " ".repeat(indent);
    match n.kind {
        NodeKind::Initial => {
            let _ = writeln!(out, "{pad}initial {}", n.name);
        }
        NodeKind::Final => {
            let _ = writeln!(out, "{pad}final {}", n.name);
        }
        NodeKind::Choice => {
            let _ = writeln!(out, "{pad}choice {}", n.name);
        }
        NodeKind::SubmachineRef => {
            let flat = n.submachine.expect("resolved submachine reference");
            let (pi, mi) = spec.machine_position(flat);
            let _ = writeln!(
                out,
                "{pad}state {} uses {}",
                n.name, spec.machineparts[pi].machines[mi].name
            );
        }
        NodeKind::Simple if n.entry.is_none() && n.continuous.is_none() => {
            let _ = writeln!(out, "{pad}state {}", n.name);
        }
        _ => {
            let _ = writeln!(out, "{pad}state {} {{", n.name);
            if let Some(b) = n.entry {
                let _ = write!(out, "{pad}  entry ");
                block(out, spec, part, b, indent + 2);
            }
            if let Some(b) = n.continuous {
                let _ = write!(out, "{pad}  continuous ");
                block(out, spec, part, b, indent + 2);
            }
            for c in &n.children {
                state(out, spec, part, *c, indent + 2);
            }
            let _ = writeln!(out, "{pad}}}");
        }
    }
}

fn block(out: &mut String, spec: &ModelSpec, part: &MachinePart, id: BehaviorId, indent: usize) {
    let pad = " ".repeat(indent);
    let _ = writeln!(out, "{{");
    for st in &spec.behavior(id).statements {
        let _ = writeln!(
            out,
            "{pad}  {} := {}",
            spec.prop(st.target).name,
            expr(spec, part, &st.value)
        );
    }
    let _ = writeln!(out, "{pad}}}");
}

fn block_inline(out: &mut String, spec: &ModelSpec, part: &MachinePart, id: BehaviorId) {
    let _ = write!(out, "{{ ");
    for st in &spec.behavior(id).statements {
        let _ = write!(
            out,
            "{} := {}; ",
            spec.prop(st.target).name,
            expr(spec, part, &st.value)
        );
    }
    let _ = write!(out, "}}");
}

/// Renders with explicit parentheses on nested binary operators, which keeps
/// the grammar round-trip exact without tracking precedence.
pub fn expr(spec: &ModelSpec, part: &MachinePart, e: &Expr) -> String {
    match e {
        Expr::Lit(true) => "true".into(),
        Expr::Lit(false) => "false".into(),
        Expr::Prop(p) => spec.prop(*p).name.clone(),
        Expr::InpSignal(p) => format!("InpSignal({})", spec.prop(*p).name),
        Expr::Not(x) => format!("NOT {}", atomize(spec, part, x)),
        Expr::And(a, b) => {
            format!("{} AND {}", atomize(spec, part, a), atomize(spec, part, b))
        }
        Expr::Or(a, b) => format!("{} OR {}", atomize(spec, part, a), atomize(spec, part, b)),
        Expr::Eq(a, b) => format!("{} == {}", atomize(spec, part, a), atomize(spec, part, b)),
        Expr::State(StateRef::Node(id)) => format!("State({})", spec.qualified_name(*id)),
        Expr::State(StateRef::Machine(fi)) => {
            let (pi, mi) = spec.machine_position(*fi);
            format!("State({})", spec.machineparts[pi].machines[mi].name)
        }
        Expr::CmdChk { part: p, index } => {
            let cmd = spec.machineparts[*p]
                .command_by_index(*index)
                .expect("command index resolves");
            format!("CmdChk({})", cmd.name)
        }
        Expr::TimerElapsed(t) => format!("TimerElapsed({})", part.timers[t.0 as usize]),
    }
}

fn atomize(spec: &ModelSpec, part: &MachinePart, e: &Expr) -> String {
    match e {
        Expr::And(..) | Expr::Or(..) | Expr::Eq(..) | Expr::Not(..) => {
            format!("({})", expr(spec, part, e))
        }
        _ => expr(spec, part, e),
    }
}
