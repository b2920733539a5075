//! Template-generated corpus of small programs in two pseudo-languages.
//!
//! Tasks come in families that share a program skeleton and differ in a
//! small subtree (an operator, a comparison, or a guard), so that siblings
//! form natural hard negatives. Each task is rendered in a Java-like and a
//! Python-like tree shape with several variants per language: identifiers
//! are renamed, idioms are rewritten (`x = x + y` vs `x += y`, for-each vs
//! indexed loops) and debug prints are inserted as noise.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::interchange::{write_parse_tree, InterchangeError, ManifestEntry, ParseNode, ParseTree};
use crate::unify::schema::{GrammarSchema, NodeSpec};

pub const JAVA: &str = "java";
pub const PYTHON: &str = "python";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub tasks: usize,
    pub family_size: usize,
    pub variants: usize,
    /// Probability of inserting a debug print into a variant.
    pub noise: f64,
    pub seed: u64,
    /// Prepended to task ids, so corpora from different seeds can be mixed.
    pub task_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { tasks: 20, family_size: 4, variants: 3, noise: 0.3, seed: 7, task_prefix: "t".into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Op {
    Add,
    Sub,
    Mul,
    Mod,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Cmp {
    Lt,
    Gt,
    Eq,
    Ne,
    Le,
    Ge,
}

const OPS: [Op; 5] = [Op::Add, Op::Sub, Op::Mul, Op::Mod, Op::Div];
const CMPS: [Cmp; 6] = [Cmp::Lt, Cmp::Gt, Cmp::Eq, Cmp::Ne, Cmp::Le, Cmp::Ge];

#[derive(Clone, Debug)]
enum Expr {
    Var(&'static str),
    Num(i64),
    Bin(Op, Box<Expr>, Box<Expr>),
    Cmp(Cmp, Box<Expr>, Box<Expr>),
    Index(&'static str, Box<Expr>),
    Len(&'static str),
}

#[derive(Clone, Debug)]
enum Stmt {
    Decl(&'static str, Expr),
    Assign(&'static str, Expr),
    /// `v = v op e`, rendered either expanded or as an augmented assignment.
    Update(&'static str, Op, Expr),
    ForRange(&'static str, Expr, Vec<Stmt>),
    ForEach(&'static str, &'static str, Vec<Stmt>),
    While(Expr, Vec<Stmt>),
    If(Expr, Vec<Stmt>, Vec<Stmt>),
    Return(Expr),
    Print(&'static str),
}

#[derive(Clone, Debug)]
struct Program {
    params: Vec<(&'static str, bool)>,
    body: Vec<Stmt>,
}

/// Distinguishing choices of one task inside its family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct TaskSpec {
    kind: usize,
    op: Op,
    op2: Op,
    cmp: Cmp,
    guard: bool,
}

const KINDS: usize = 6;

fn v(s: &'static str) -> Box<Expr> {
    Box::new(Expr::Var(s))
}

fn n(x: i64) -> Box<Expr> {
    Box::new(Expr::Num(x))
}

fn build_program(t: TaskSpec) -> Program {
    use Expr::*;
    use Stmt::*;
    match t.kind {
        0 => {
            let upd = Update("acc", t.op, Var("x"));
            let inner = if t.guard { vec![If(Cmp(t.cmp, v("x"), n(0)), vec![upd], vec![])] } else { vec![upd] };
            Program {
                params: vec![("arr", true)],
                body: vec![Decl("acc", Num(0)), ForEach("x", "arr", inner), Return(Var("acc"))],
            }
        }
        1 => {
            let hit = if t.guard { Return(Index("arr", v("i"))) } else { Return(Var("i")) };
            let cond = Cmp(t.cmp, Box::new(Bin(t.op, Box::new(Index("arr", v("i"))), n(2))), v("target"));
            Program {
                params: vec![("arr", true), ("target", false)],
                body: vec![ForRange("i", Len("arr"), vec![If(cond, vec![hit], vec![])]), Return(Num(-1))],
            }
        }
        2 => {
            let mut body = vec![
                Update("acc", t.op, Bin(Op::Mod, v("n"), n(10))),
                Assign("n", Bin(Op::Div, v("n"), n(10))),
            ];
            if t.guard {
                body = vec![If(Cmp(self::Cmp::Gt, v("n"), n(5)), body, vec![Assign("n", Bin(Op::Sub, v("n"), n(1)))])];
            }
            Program {
                params: vec![("n", false)],
                body: vec![Decl("acc", Num(0)), While(Cmp(t.cmp, v("n"), n(0)), body), Return(Var("acc"))],
            }
        }
        3 => {
            let pair = Bin(t.op, Box::new(Index("arr", v("i"))), Box::new(Index("arr", v("j"))));
            let hit = Update("count", Op::Add, Num(1));
            let inner = If(Cmp(t.cmp, Box::new(pair), v("target")), vec![hit], vec![]);
            let inner = if t.guard { If(Cmp(self::Cmp::Ne, v("i"), v("j")), vec![inner], vec![]) } else { inner };
            Program {
                params: vec![("arr", true), ("target", false)],
                body: vec![
                    Decl("count", Num(0)),
                    ForRange("i", Len("arr"), vec![ForRange("j", Len("arr"), vec![inner])]),
                    Return(Var("count")),
                ],
            }
        }
        4 => {
            let step = vec![Decl("t", Bin(t.op, v("a"), v("b"))), Assign("a", Var("b")), Assign("b", Var("t"))];
            let step = if t.guard { vec![If(Cmp(t.cmp, v("a"), v("n")), step, vec![])] } else { step };
            Program {
                params: vec![("n", false)],
                body: vec![
                    Decl("a", Num(0)),
                    Decl("b", Num(1)),
                    ForRange("i", Var("n"), step),
                    Return(if t.guard { Var("b") } else { Var("a") }),
                ],
            }
        }
        _ => {
            let mut body = vec![If(
                Cmp(t.cmp, v("n"), v("k")),
                vec![Return(Bin(t.op, v("n"), v("k")))],
                vec![Return(Bin(t.op2, v("k"), v("n")))],
            )];
            if t.guard {
                body.insert(0, Assign("n", Bin(Op::Mul, v("n"), n(2))));
            }
            Program { params: vec![("n", false), ("k", false)], body }
        }
    }
}

/// Clears choices the program of `t` does not use, so that distinct specs
/// yield distinct programs.
fn normalize(mut t: TaskSpec) -> TaskSpec {
    if !t.guard && (t.kind == 0 || t.kind == 4) {
        t.cmp = Cmp::Lt;
    }
    t
}

/// The `count` sibling specs of one family, pairwise distinct.
fn family_specs(kind: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<TaskSpec> {
    let mut all = Vec::new();
    for &op in &OPS {
        for &cmp in &CMPS {
            for guard in [false, true] {
                let op2 = if kind == 5 { OPS[(OPS.iter().position(|&o| o == op).unwrap() + 1) % OPS.len()] } else { Op::Add };
                all.push(normalize(TaskSpec { kind, op, op2, cmp, guard }));
            }
        }
    }
    all.sort();
    all.dedup();
    // Siblings share most choices with a base spec: each differs in one
    // or two of op, cmp and guard.
    let base = *all.choose(rng).expect("non-empty");
    let mut near: Vec<TaskSpec> = all
        .iter()
        .copied()
        .filter(|s| {
            let diffs = usize::from(s.op != base.op) + usize::from(s.cmp != base.cmp) + usize::from(s.guard != base.guard);
            diffs >= 1 && diffs <= 2
        })
        .collect();
    near.shuffle(rng);
    let mut out = vec![base];
    out.extend(near.into_iter().take(count.saturating_sub(1)));
    out
}

const NAME_POOL: &[&str] = &[
    "total", "result", "acc", "value", "current", "tmp", "res", "out", "val", "item", "elem", "x", "y", "z", "data",
    "nums", "values", "items", "arr", "lst", "num", "limit", "goal", "key", "cnt", "idx", "pos", "first", "second",
    "left", "right", "prev", "next", "cur", "size", "bound", "input", "seq", "store", "answer",
];

const FUNC_POOL: &[&str] = &["solve", "compute", "run", "helper", "calc", "process", "evaluate", "apply", "work", "handle"];

fn symbols(p: &Program) -> Vec<&'static str> {
    fn expr(e: &Expr, out: &mut BTreeSet<&'static str>) {
        match e {
            Expr::Var(s) | Expr::Len(s) => {
                out.insert(s);
            }
            Expr::Num(_) => {}
            Expr::Bin(_, a, b) | Expr::Cmp(_, a, b) => {
                expr(a, out);
                expr(b, out);
            }
            Expr::Index(s, i) => {
                out.insert(s);
                expr(i, out);
            }
        }
    }
    fn stmts(ss: &[Stmt], out: &mut BTreeSet<&'static str>) {
        for s in ss {
            match s {
                Stmt::Decl(x, e) | Stmt::Assign(x, e) | Stmt::Update(x, _, e) => {
                    out.insert(x);
                    expr(e, out);
                }
                Stmt::ForRange(x, e, b) => {
                    out.insert(x);
                    expr(e, out);
                    stmts(b, out);
                }
                Stmt::ForEach(x, a, b) => {
                    out.insert(x);
                    out.insert(a);
                    stmts(b, out);
                }
                Stmt::While(e, b) => {
                    expr(e, out);
                    stmts(b, out);
                }
                Stmt::If(e, a, b) => {
                    expr(e, out);
                    stmts(a, out);
                    stmts(b, out);
                }
                Stmt::Return(e) => expr(e, out),
                Stmt::Print(x) => {
                    out.insert(x);
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    for (p, _) in &p.params {
        out.insert(*p);
    }
    stmts(&p.body, &mut out);
    out.into_iter().collect()
}

/// Rendering choices of one snippet.
struct Style {
    names: BTreeMap<&'static str, String>,
    func: String,
    augmented: bool,
    indexed_foreach: bool,
    print: Option<(usize, &'static str)>,
}

fn camel(s: &str) -> String {
    let mut out = String::new();
    for (i, part) in s.split('_').enumerate() {
        if i == 0 {
            out.push_str(part);
        } else {
            let mut c = part.chars();
            if let Some(f) = c.next() {
                out.extend(f.to_uppercase());
                out.push_str(c.as_str());
            }
        }
    }
    out
}

fn draw_style(p: &Program, lang: &str, noise: f64, rng: &mut ChaCha8Rng) -> Style {
    let syms = symbols(p);
    let mut pool: Vec<&str> = NAME_POOL.to_vec();
    pool.shuffle(rng);
    let names = syms
        .iter()
        .zip(pool)
        .map(|(&s, name)| {
            let name = if rng.random_bool(0.3) { format!("{name}_{}", ["val", "sum", "list", "idx"][rng.random_range(0..4)]) } else { name.to_string() };
            (s, if lang == JAVA { camel(&name) } else { name })
        })
        .collect();
    let func = FUNC_POOL.choose(rng).expect("non-empty").to_string();
    let print = if rng.random_bool(noise) {
        let at = rng.random_range(0..p.body.len().saturating_sub(1).max(1));
        let var = *syms.choose(rng).expect("programs have symbols");
        Some((at, var))
    } else {
        None
    };
    Style { names, func, augmented: rng.random_bool(0.5), indexed_foreach: rng.random_bool(0.5), print }
}

struct Builder {
    nodes: Vec<ParseNode>,
}

impl Builder {
    fn add(&mut self, parent: Option<usize>, ty: &str, attrs: &[&str]) -> usize {
        let id = self.nodes.len();
        self.nodes.push(ParseNode {
            id,
            type_name: ty.to_string(),
            attrs: attrs.iter().map(|s| s.to_string()).collect(),
            children: vec![],
        });
        if let Some(p) = parent {
            self.nodes[p].children.push(id);
        }
        id
    }
}

trait Render {
    fn expr(&self, b: &mut Builder, parent: usize, e: &Expr);
    fn stmt(&self, b: &mut Builder, parent: usize, s: &Stmt);
}

struct JavaRender<'a>(&'a Style);
struct PythonRender<'a>(&'a Style);

/// Operator names share sub-words with the Python ones so that both
/// languages tokenize an operator to the same attribute tokens.
fn java_op(o: Op) -> &'static str {
    match o {
        Op::Add => "ADD",
        Op::Sub => "SUB",
        Op::Mul => "MULT",
        Op::Mod => "MOD",
        Op::Div => "FLOOR_DIV",
    }
}

fn java_cmp(c: Cmp) -> &'static str {
    match c {
        Cmp::Lt => "LT",
        Cmp::Gt => "GT",
        Cmp::Eq => "EQ",
        Cmp::Ne => "NOT_EQ",
        Cmp::Le => "LT_E",
        Cmp::Ge => "GT_E",
    }
}

fn py_op(o: Op) -> &'static str {
    match o {
        Op::Add => "add",
        Op::Sub => "sub",
        Op::Mul => "mult",
        Op::Mod => "mod",
        Op::Div => "floor_div",
    }
}

fn py_cmp(c: Cmp) -> &'static str {
    match c {
        Cmp::Lt => "lt",
        Cmp::Gt => "gt",
        Cmp::Eq => "eq",
        Cmp::Ne => "not_eq",
        Cmp::Le => "lt_e",
        Cmp::Ge => "gt_e",
    }
}

impl JavaRender<'_> {
    fn name(&self, s: &str) -> String {
        self.0.names.get(s).cloned().unwrap_or_else(|| s.to_string())
    }

    fn simple(&self, b: &mut Builder, parent: usize, s: &str) {
        let n = self.name(s);
        b.add(Some(parent), "SimpleName", &[&n]);
    }

    fn block(&self, b: &mut Builder, parent: usize, body: &[Stmt]) {
        let blk = b.add(Some(parent), "Block", &[]);
        for s in body {
            self.stmt(b, blk, s);
        }
    }

    fn decl(&self, b: &mut Builder, parent: usize, var: &str, init: &Expr) {
        let d = b.add(Some(parent), "VariableDeclarationStatement", &[]);
        b.add(Some(d), "PrimitiveType", &["int"]);
        let f = b.add(Some(d), "VariableDeclarationFragment", &[]);
        self.simple(b, f, var);
        self.expr(b, f, init);
    }
}

impl Render for JavaRender<'_> {
    fn expr(&self, b: &mut Builder, parent: usize, e: &Expr) {
        match e {
            Expr::Var(s) => self.simple(b, parent, s),
            Expr::Num(x) => {
                b.add(Some(parent), "NumberLiteral", &[&x.to_string()]);
            }
            Expr::Bin(o, l, r) => {
                let id = b.add(Some(parent), "InfixExpression", &[java_op(*o)]);
                self.expr(b, id, l);
                self.expr(b, id, r);
            }
            Expr::Cmp(c, l, r) => {
                let id = b.add(Some(parent), "InfixExpression", &[java_cmp(*c)]);
                self.expr(b, id, l);
                self.expr(b, id, r);
            }
            Expr::Index(a, i) => {
                let id = b.add(Some(parent), "ArrayAccess", &[]);
                self.simple(b, id, a);
                self.expr(b, id, i);
            }
            Expr::Len(a) => {
                let id = b.add(Some(parent), "FieldAccess", &["length"]);
                self.simple(b, id, a);
            }
        }
    }

    fn stmt(&self, b: &mut Builder, parent: usize, s: &Stmt) {
        match s {
            Stmt::Decl(x, e) => self.decl(b, parent, x, e),
            Stmt::Assign(x, e) => {
                let es = b.add(Some(parent), "ExpressionStatement", &[]);
                let a = b.add(Some(es), "Assignment", &["ASSIGN"]);
                self.simple(b, a, x);
                self.expr(b, a, e);
            }
            Stmt::Update(x, o, e) => {
                let es = b.add(Some(parent), "ExpressionStatement", &[]);
                if self.0.augmented {
                    let a = b.add(Some(es), "Assignment", &[&format!("{}_ASSIGN", java_op(*o))]);
                    self.simple(b, a, x);
                    self.expr(b, a, e);
                } else {
                    let a = b.add(Some(es), "Assignment", &["ASSIGN"]);
                    self.simple(b, a, x);
                    self.expr(b, a, &Expr::Bin(*o, Box::new(Expr::Var(x)), Box::new(e.clone())));
                }
            }
            Stmt::ForRange(i, bound, body) => {
                let f = b.add(Some(parent), "ForStatement", &[]);
                let init = b.add(Some(f), "VariableDeclarationExpression", &[]);
                b.add(Some(init), "PrimitiveType", &["int"]);
                let frag = b.add(Some(init), "VariableDeclarationFragment", &[]);
                self.simple(b, frag, i);
                b.add(Some(frag), "NumberLiteral", &["0"]);
                let c = b.add(Some(f), "InfixExpression", &["LT"]);
                self.simple(b, c, i);
                self.expr(b, c, bound);
                let u = b.add(Some(f), "PostfixExpression", &["INCREMENT"]);
                self.simple(b, u, i);
                self.block(b, f, body);
            }
            Stmt::ForEach(x, arr, body) => {
                if self.0.indexed_foreach {
                    let mut inner = vec![Stmt::Decl(x, Expr::Index(arr, v("__i")))];
                    inner.extend(body.iter().cloned());
                    self.stmt(b, parent, &Stmt::ForRange("__i", Expr::Len(arr), inner));
                } else {
                    let f = b.add(Some(parent), "EnhancedForStatement", &[]);
                    let d = b.add(Some(f), "SingleVariableDeclaration", &[]);
                    b.add(Some(d), "PrimitiveType", &["int"]);
                    self.simple(b, d, x);
                    self.simple(b, f, arr);
                    self.block(b, f, body);
                }
            }
            Stmt::While(c, body) => {
                let w = b.add(Some(parent), "WhileStatement", &[]);
                self.expr(b, w, c);
                self.block(b, w, body);
            }
            Stmt::If(c, t, e) => {
                let i = b.add(Some(parent), "IfStatement", &[]);
                self.expr(b, i, c);
                self.block(b, i, t);
                if !e.is_empty() {
                    self.block(b, i, e);
                }
            }
            Stmt::Return(e) => {
                let r = b.add(Some(parent), "ReturnStatement", &[]);
                self.expr(b, r, e);
            }
            Stmt::Print(x) => {
                let es = b.add(Some(parent), "ExpressionStatement", &[]);
                let m = b.add(Some(es), "MethodInvocation", &["println"]);
                b.add(Some(m), "QualifiedName", &["System", "out"]);
                self.simple(b, m, x);
            }
        }
    }
}

impl PythonRender<'_> {
    fn name(&self, s: &str) -> String {
        self.0.names.get(s).cloned().unwrap_or_else(|| s.to_string())
    }

    fn ident(&self, b: &mut Builder, parent: usize, s: &str) {
        let n = self.name(s);
        b.add(Some(parent), "identifier", &[&n]);
    }

    fn block(&self, b: &mut Builder, parent: usize, body: &[Stmt]) {
        let blk = b.add(Some(parent), "block", &[]);
        for s in body {
            self.stmt(b, blk, s);
        }
    }

    fn call(&self, b: &mut Builder, parent: usize, func: &str, args: &[&Expr]) {
        let c = b.add(Some(parent), "call", &[]);
        b.add(Some(c), "identifier", &[func]);
        let al = b.add(Some(c), "argument_list", &[]);
        for a in args {
            self.expr(b, al, a);
        }
    }
}

impl Render for PythonRender<'_> {
    fn expr(&self, b: &mut Builder, parent: usize, e: &Expr) {
        match e {
            Expr::Var(s) => self.ident(b, parent, s),
            Expr::Num(x) => {
                b.add(Some(parent), "integer", &[&x.to_string()]);
            }
            Expr::Bin(o, l, r) => {
                let id = b.add(Some(parent), "binary_operator", &[]);
                self.expr(b, id, l);
                b.add(Some(id), py_op(*o), &[py_op(*o)]);
                self.expr(b, id, r);
            }
            Expr::Cmp(c, l, r) => {
                let id = b.add(Some(parent), "comparison_operator", &[]);
                self.expr(b, id, l);
                b.add(Some(id), py_cmp(*c), &[py_cmp(*c)]);
                self.expr(b, id, r);
            }
            Expr::Index(a, i) => {
                let id = b.add(Some(parent), "subscript", &[]);
                self.ident(b, id, a);
                self.expr(b, id, i);
            }
            Expr::Len(a) => self.call(b, parent, "len", &[&Expr::Var(a)]),
        }
    }

    fn stmt(&self, b: &mut Builder, parent: usize, s: &Stmt) {
        match s {
            Stmt::Decl(x, e) | Stmt::Assign(x, e) => {
                let es = b.add(Some(parent), "expression_statement", &[]);
                let a = b.add(Some(es), "assignment", &[]);
                self.ident(b, a, x);
                self.expr(b, a, e);
            }
            Stmt::Update(x, o, e) => {
                let es = b.add(Some(parent), "expression_statement", &[]);
                if self.0.augmented {
                    let a = b.add(Some(es), "augmented_assignment", &[]);
                    self.ident(b, a, x);
                    b.add(Some(a), py_op(*o), &[py_op(*o)]);
                    self.expr(b, a, e);
                } else {
                    let a = b.add(Some(es), "assignment", &[]);
                    self.ident(b, a, x);
                    self.expr(b, a, &Expr::Bin(*o, Box::new(Expr::Var(x)), Box::new(e.clone())));
                }
            }
            Stmt::ForRange(i, bound, body) => {
                let f = b.add(Some(parent), "for_statement", &[]);
                self.ident(b, f, i);
                self.call(b, f, "range", &[bound]);
                self.block(b, f, body);
            }
            Stmt::ForEach(x, arr, body) => {
                let f = b.add(Some(parent), "for_statement", &[]);
                self.ident(b, f, x);
                self.ident(b, f, arr);
                self.block(b, f, body);
            }
            Stmt::While(c, body) => {
                let w = b.add(Some(parent), "while_statement", &[]);
                self.expr(b, w, c);
                self.block(b, w, body);
            }
            Stmt::If(c, t, e) => {
                let i = b.add(Some(parent), "if_statement", &[]);
                self.expr(b, i, c);
                self.block(b, i, t);
                if !e.is_empty() {
                    let el = b.add(Some(i), "else_clause", &[]);
                    self.block(b, el, e);
                }
            }
            Stmt::Return(e) => {
                let r = b.add(Some(parent), "return_statement", &[]);
                self.expr(b, r, e);
            }
            Stmt::Print(x) => {
                let es = b.add(Some(parent), "expression_statement", &[]);
                self.call(b, es, "print", &[&Expr::Var(x)]);
            }
        }
    }
}

fn body_with_noise(p: &Program, style: &Style) -> Vec<Stmt> {
    let mut body = p.body.clone();
    if let Some((at, var)) = style.print {
        body.insert(at.min(body.len().saturating_sub(1)), Stmt::Print(var));
    }
    body
}

fn render_java(p: &Program, style: &Style, source_id: &str) -> ParseTree {
    let r = JavaRender(style);
    let mut b = Builder { nodes: Vec::new() };
    let cu = b.add(None, "CompilationUnit", &[]);
    let class = b.add(Some(cu), "TypeDeclaration", &["Solution"]);
    let m = b.add(Some(class), "MethodDeclaration", &[&style.func]);
    b.add(Some(m), "Modifier", &["public"]);
    b.add(Some(m), "Modifier", &["static"]);
    b.add(Some(m), "PrimitiveType", &["int"]);
    for &(name, array) in &p.params {
        let d = b.add(Some(m), "SingleVariableDeclaration", &[]);
        if array {
            let at = b.add(Some(d), "ArrayType", &[]);
            b.add(Some(at), "PrimitiveType", &["int"]);
        } else {
            b.add(Some(d), "PrimitiveType", &["int"]);
        }
        r.simple(&mut b, d, name);
    }
    r.block(&mut b, m, &body_with_noise(p, style));
    ParseTree { language: JAVA.into(), source_id: source_id.into(), root: cu, nodes: b.nodes }
}

fn render_python(p: &Program, style: &Style, source_id: &str) -> ParseTree {
    let r = PythonRender(style);
    let mut b = Builder { nodes: Vec::new() };
    let module = b.add(None, "module", &[]);
    let f = b.add(Some(module), "function_definition", &[&style.func]);
    let ps = b.add(Some(f), "parameters", &[]);
    for &(name, _) in &p.params {
        r.ident(&mut b, ps, name);
    }
    r.block(&mut b, f, &body_with_noise(p, style));
    ParseTree { language: PYTHON.into(), source_id: source_id.into(), root: module, nodes: b.nodes }
}

/// Field names declared by the pseudo-grammars.
fn declared_fields(lang: &str, ty: &str) -> &'static [&'static str] {
    match (lang, ty) {
        (JAVA, "MethodDeclaration") => &["modifiers", "returnType", "parameters", "body"],
        (JAVA, "TypeDeclaration") => &["bodyDeclarations"],
        (JAVA, "ForStatement") => &["initializers", "expression", "updaters", "body"],
        (JAVA, "EnhancedForStatement") => &["parameter", "expression", "body"],
        (JAVA, "WhileStatement") => &["expression", "body"],
        (JAVA, "IfStatement") => &["expression", "thenStatement", "elseStatement"],
        (JAVA, "ReturnStatement") => &["expression"],
        (JAVA, "Assignment") => &["leftHandSide", "operator", "rightHandSide"],
        (JAVA, "InfixExpression") => &["leftOperand", "operator", "rightOperand"],
        (JAVA, "ArrayAccess") => &["array", "index"],
        (JAVA, "FieldAccess") => &["expression", "name"],
        (JAVA, "MethodInvocation") => &["expression", "name", "arguments"],
        (JAVA, "VariableDeclarationStatement") => &["type", "fragments"],
        (JAVA, "VariableDeclarationFragment") => &["name", "initializer"],
        (JAVA, "SingleVariableDeclaration") => &["type", "name"],
        (JAVA, "Block") => &["statements"],
        (PYTHON, "function_definition") => &["name", "parameters", "body"],
        (PYTHON, "for_statement") => &["left", "right", "body"],
        (PYTHON, "while_statement") => &["condition", "body"],
        (PYTHON, "if_statement") => &["condition", "consequence", "alternative"],
        (PYTHON, "return_statement") => &["value"],
        (PYTHON, "assignment") => &["left", "right"],
        (PYTHON, "augmented_assignment") => &["left", "operator", "right"],
        (PYTHON, "binary_operator") => &["left", "operator", "right"],
        (PYTHON, "comparison_operator") => &["left", "operators", "right"],
        (PYTHON, "subscript") => &["value", "subscript"],
        (PYTHON, "call") => &["function", "arguments"],
        (PYTHON, "block") => &["statements"],
        _ => &[],
    }
}

/// Derives a grammar schema for each language from the generated trees
/// and the declared field tables.
fn derive_schemas(trees: &[ParseTree]) -> BTreeMap<String, GrammarSchema> {
    let mut obs: BTreeMap<(String, String), (BTreeSet<String>, usize, usize)> = BTreeMap::new();
    for t in trees {
        for nd in &t.nodes {
            let e = obs.entry((t.language.clone(), nd.type_name.clone())).or_insert((BTreeSet::new(), usize::MAX, 0));
            e.0.extend(nd.children.iter().map(|&c| t.nodes[c].type_name.clone()));
            e.1 = e.1.min(nd.children.len());
            e.2 = e.2.max(nd.children.len());
        }
    }
    let mut out: BTreeMap<String, GrammarSchema> = BTreeMap::new();
    for ((lang, ty), (children, lo, hi)) in obs {
        let fields: Vec<String> = declared_fields(&lang, &ty).iter().map(|s| s.to_string()).collect();
        let repeatable = matches!(ty.as_str(), "Block" | "block" | "argument_list" | "parameters" | "MethodDeclaration");
        let spec = NodeSpec {
            optional_flags: fields.iter().map(|f| f.starts_with("else") || f == "alternative" || f == "initializer").collect(),
            repeatable_flags: fields.iter().map(|_| repeatable).collect(),
            field_names: fields,
            child_types: children.into_iter().collect(),
            arity_min: lo,
            arity_max: if repeatable { None } else { Some(hi) },
        };
        out.entry(lang.clone())
            .or_insert_with(|| GrammarSchema { language: lang.clone(), node_specs: BTreeMap::new() })
            .node_specs
            .insert(ty, spec);
    }
    out
}

/// One generated snippet.
#[derive(Clone, Debug)]
pub struct Snippet {
    pub entry: ManifestEntry,
    pub tree: ParseTree,
    /// Family index of the snippet's task.
    pub family: usize,
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub snippets: Vec<Snippet>,
    pub schemas: BTreeMap<String, GrammarSchema>,
}

impl SynthCorpus {
    pub fn items(&self) -> Vec<crate::pipeline::CorpusItem> {
        self.snippets.iter().map(|s| (s.entry.clone(), s.tree.clone())).collect()
    }

    pub fn trees(&self) -> Vec<ParseTree> {
        self.snippets.iter().map(|s| s.tree.clone()).collect()
    }

    /// Writes `<corpus_dir>/<task>/<lang>/<snippet>.json` and
    /// `<schema_dir>/<lang>.json`.
    pub fn write(&self, corpus_dir: &Path, schema_dir: &Path) -> Result<(), InterchangeError> {
        for s in &self.snippets {
            let dir = corpus_dir.join(&s.entry.task_id).join(&s.entry.language);
            fs::create_dir_all(&dir).map_err(|e| InterchangeError::Io { path: dir.clone(), source: e })?;
            write_parse_tree(&dir.join(format!("{}.json", s.entry.source_id)), &s.tree)?;
        }
        fs::create_dir_all(schema_dir).map_err(|e| InterchangeError::Io { path: schema_dir.to_path_buf(), source: e })?;
        for (lang, schema) in &self.schemas {
            let p = schema_dir.join(format!("{lang}.json"));
            let text = serde_json::to_string_pretty(schema).expect("schema serializes") + "\n";
            fs::write(&p, text).map_err(|e| InterchangeError::Io { path: p.clone(), source: e })?;
        }
        Ok(())
    }
}

pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let family_size = cfg.family_size.max(1);
    let families = cfg.tasks.div_ceil(family_size);
    let mut kinds: Vec<usize> = (0..families).map(|f| f % KINDS).collect();
    kinds.shuffle(&mut rng);
    let mut specs = Vec::new();
    for (f, &kind) in kinds.iter().enumerate() {
        for s in family_specs(kind, family_size, &mut rng) {
            if specs.len() < cfg.tasks {
                specs.push((f, s));
            }
        }
    }
    let width = cfg.tasks.saturating_sub(1).to_string().len().max(2);
    let mut snippets = Vec::new();
    for (t, &(family, spec)) in specs.iter().enumerate() {
        let prog = build_program(spec);
        let task_id = format!("{}{t:0width$}", cfg.task_prefix);
        for lang in [JAVA, PYTHON] {
            for var in 0..cfg.variants {
                let style = draw_style(&prog, lang, cfg.noise, &mut rng);
                let source_id = format!("v{var}");
                let gid = format!("{task_id}/{lang}/{source_id}");
                let tree = if lang == JAVA { render_java(&prog, &style, &gid) } else { render_python(&prog, &style, &gid) };
                let entry = ManifestEntry {
                    task_id: task_id.clone(),
                    language: lang.to_string(),
                    source_id,
                    path: format!("{gid}.json").into(),
                };
                snippets.push(Snippet { entry, tree, family });
            }
        }
    }
    let trees: Vec<ParseTree> = snippets.iter().map(|s| s.tree.clone()).collect();
    SynthCorpus { snippets, schemas: derive_schemas(&trees) }
}
