//! Model specification language.
//!
//! A specification describes the per-wave template (latents, their indicators
//! and the within-wave structural paths), the number of waves, the
//! autoregressive order, time-invariant covariates and the invariance level.
//! Statements are line oriented; `;` may also separate statements and `#`
//! starts a comment.
//!
//! ```text
//! latent FHS by iadl1 iadl2 iadl3
//! latent DS by cesd1 cesd2 cesd3
//! path FHS -> DS
//! covariate AGE -> FHS DS
//! waves 3
//! ar 2
//! invariance strong except FHS
//! fix theta[iadl1]@1 = 0.2
//! ```
//!
//! Indicator `y` observed at wave `t` is the data column `y.t`; covariates
//! keep their bare names.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;

use crate::error::SpecError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InvarianceLevel {
    Configural,
    Weak,
    Strong,
}

impl InvarianceLevel {
    pub fn name(self) -> &'static str {
        match self {
            InvarianceLevel::Configural => "configural",
            InvarianceLevel::Weak => "weak",
            InvarianceLevel::Strong => "strong",
        }
    }

    fn parse(word: &str) -> Option<Self> {
        match word {
            "configural" => Some(InvarianceLevel::Configural),
            "weak" => Some(InvarianceLevel::Weak),
            "strong" => Some(InvarianceLevel::Strong),
            _ => None,
        }
    }
}

impl fmt::Display for InvarianceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Invariance level plus latents exempt from the constraints that level adds.
///
/// At `weak` the exemptions release loadings; at `strong` they release
/// intercepts (loadings stay equal).
#[derive(Debug, Clone, PartialEq)]
pub struct Invariance {
    pub level: InvarianceLevel,
    pub exempt: Vec<usize>,
}

/// How each latent's scale is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Identification {
    /// First indicator's loading fixed to 1.
    Marker,
    /// Wave-1 disturbance variance fixed to 1, all loadings free.
    Variance,
}

/// Whether latent intercepts at waves 2..T are estimated under strong invariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentMeans {
    Fixed,
    Free,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    /// Indices into [`ModelSpec::latents`].
    pub targets: Vec<usize>,
}

/// A reference to one template parameter. Indicator indices are positions in
/// the flattened indicator list (see [`ModelSpec::indicator_list`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamRef {
    Intercept {
        indicator: usize,
    },
    Loading {
        indicator: usize,
    },
    Path {
        source: usize,
        target: usize,
    },
    Autoregressive {
        latent: usize,
        lag: usize,
    },
    CovariateEffect {
        covariate: usize,
        latent: usize,
    },
    Disturbance {
        latent: usize,
    },
    CovariateCov {
        a: usize,
        b: usize,
    },
    Residual {
        indicator: usize,
    },
    LatentMean {
        latent: usize,
    },
    CovariateMean {
        covariate: usize,
    },
    /// Unit loading tying a covariate column to its latent; never user-fixable.
    CovariateLoading {
        covariate: usize,
    },
}

impl ParamRef {
    /// Covariate-block parameters carry no wave.
    pub fn is_wave_free(&self) -> bool {
        matches!(
            self,
            ParamRef::CovariateCov { .. } | ParamRef::CovariateMean { .. } | ParamRef::CovariateLoading { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveSel {
    All,
    At(usize),
}

impl WaveSel {
    pub fn covers(&self, wave: usize) -> bool {
        match self {
            WaveSel::All => true,
            WaveSel::At(w) => *w == wave,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedValue {
    pub param: ParamRef,
    pub wave: WaveSel,
    pub value: f64,
}

/// Source positions of declarations. Never part of equality.
#[derive(Debug, Clone, Default)]
pub struct Spans {
    pub latents: Vec<(usize, usize)>,
    pub edges: Vec<(usize, usize)>,
}

impl PartialEq for Spans {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub latents: Vec<String>,
    /// Per latent, its indicators in declaration order.
    pub indicators: Vec<Vec<String>>,
    /// Within-wave directed edges `(source, target)` over latent indices.
    pub structural_edges: Vec<(usize, usize)>,
    pub ar_order: usize,
    pub waves: usize,
    pub covariates: Vec<Covariate>,
    pub invariance: Invariance,
    pub identification: Identification,
    pub latent_means: LatentMeans,
    pub fixed_values: Vec<FixedValue>,
    pub spans: Spans,
}

/// A structural problem found by [`validate_template`].
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub position: Option<(usize, usize)>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.position {
            Some((line, col)) => write!(f, "{line}:{col}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl ModelSpec {
    pub fn latent_count(&self) -> usize {
        self.latents.len()
    }

    /// Number of indicators per wave.
    pub fn indicator_count(&self) -> usize {
        self.indicators.iter().map(Vec::len).sum()
    }

    /// Flattened `(owner latent, name)` list; positions are indicator indices.
    pub fn indicator_list(&self) -> Vec<(usize, &str)> {
        self.indicators
            .iter()
            .enumerate()
            .flat_map(|(l, inds)| inds.iter().map(move |n| (l, n.as_str())))
            .collect()
    }

    pub fn latent_index(&self, name: &str) -> Option<usize> {
        self.latents.iter().position(|l| l == name)
    }

    pub fn indicator_index(&self, name: &str) -> Option<usize> {
        self.indicator_list().iter().position(|(_, n)| *n == name)
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    /// Observed column names in model order: indicators wave by wave, then covariates.
    pub fn observed_names(&self) -> Vec<String> {
        let inds = self.indicator_list();
        let mut names = Vec::with_capacity(inds.len() * self.waves + self.covariates.len());
        for t in 1..=self.waves {
            names.extend(inds.iter().map(|(_, n)| format!("{n}.{t}")));
        }
        names.extend(self.covariates.iter().map(|c| c.name.clone()));
        names
    }

    /// Latents ordered so every structural edge points forward; ties keep
    /// declaration order. Returns the latents on a cycle when none exists.
    pub fn topological_order(&self) -> Result<Vec<usize>, Vec<usize>> {
        let q = self.latents.len();
        let mut indegree = vec![0usize; q];
        for &(_, dst) in &self.structural_edges {
            indegree[dst] += 1;
        }
        let mut ready: BTreeSet<usize> = (0..q).filter(|&l| indegree[l] == 0).collect();
        let mut order = Vec::with_capacity(q);
        while let Some(&l) = ready.iter().next() {
            ready.remove(&l);
            order.push(l);
            for &(src, dst) in &self.structural_edges {
                if src == l {
                    indegree[dst] -= 1;
                    if indegree[dst] == 0 {
                        ready.insert(dst);
                    }
                }
            }
        }
        if order.len() == q {
            Ok(order)
        } else {
            Err(self.find_cycle())
        }
    }

    fn find_cycle(&self) -> Vec<usize> {
        let q = self.latents.len();
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; q];
        let mut stack = Vec::new();
        fn visit(spec: &ModelSpec, l: usize, state: &mut [u8], stack: &mut Vec<usize>) -> Option<Vec<usize>> {
            state[l] = 1;
            stack.push(l);
            for &(src, dst) in &spec.structural_edges {
                if src != l {
                    continue;
                }
                if state[dst] == 1 {
                    let start = stack.iter().position(|&x| x == dst).unwrap();
                    let mut cycle = stack[start..].to_vec();
                    cycle.push(dst);
                    return Some(cycle);
                }
                if state[dst] == 0 {
                    if let Some(c) = visit(spec, dst, state, stack) {
                        return Some(c);
                    }
                }
            }
            stack.pop();
            state[l] = 2;
            None
        }
        for l in 0..q {
            if state[l] == 0 {
                if let Some(c) = visit(self, l, &mut state, &mut stack) {
                    return c;
                }
            }
        }
        Vec::new()
    }

    /// True when some user fix pins `param` at every wave.
    pub fn fixed_at_all_waves(&self, param: ParamRef) -> bool {
        if self
            .fixed_values
            .iter()
            .any(|f| f.param == param && f.wave == WaveSel::All)
        {
            return true;
        }
        (1..=self.waves).all(|t| {
            self.fixed_values
                .iter()
                .any(|f| f.param == param && f.wave == WaveSel::At(t))
        })
    }

    /// Parameter in `fix` syntax, without a wave suffix.
    pub fn param_text(&self, p: &ParamRef) -> String {
        let inds = self.indicator_list();
        match *p {
            ParamRef::Intercept { indicator } => format!("mu[{}]", inds[indicator].1),
            ParamRef::Loading { indicator } => {
                let (l, n) = inds[indicator];
                format!("lambda[{},{}]", self.latents[l], n)
            }
            ParamRef::Path { source, target } => {
                format!("beta[{},{}]", self.latents[source], self.latents[target])
            }
            ParamRef::Autoregressive { latent, lag } => {
                format!("pi[{},{}]", self.latents[latent], lag)
            }
            ParamRef::CovariateEffect { covariate, latent } => {
                format!("c[{},{}]", self.covariates[covariate].name, self.latents[latent])
            }
            ParamRef::Disturbance { latent } => format!("psi[{}]", self.latents[latent]),
            ParamRef::CovariateCov { a, b } => {
                if a == b {
                    format!("psi[{}]", self.covariates[a].name)
                } else {
                    format!("psi[{},{}]", self.covariates[a].name, self.covariates[b].name)
                }
            }
            ParamRef::Residual { indicator } => format!("theta[{}]", inds[indicator].1),
            ParamRef::LatentMean { latent } => format!("alpha[{}]", self.latents[latent]),
            ParamRef::CovariateMean { covariate } => {
                format!("mu[{}]", self.covariates[covariate].name)
            }
            ParamRef::CovariateLoading { covariate } => {
                format!("lambda[{}]", self.covariates[covariate].name)
            }
        }
    }
}

/// Canonical source text; parsing it yields an equal [`ModelSpec`].
impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, inds) in self.latents.iter().zip(&self.indicators) {
            write!(f, "latent {name}")?;
            if !inds.is_empty() {
                write!(f, " by {}", inds.join(" "))?;
            }
            writeln!(f)?;
        }
        for &(src, dst) in &self.structural_edges {
            writeln!(f, "path {} -> {}", self.latents[src], self.latents[dst])?;
        }
        for cov in &self.covariates {
            write!(f, "covariate {} ->", cov.name)?;
            for &t in &cov.targets {
                write!(f, " {}", self.latents[t])?;
            }
            writeln!(f)?;
        }
        writeln!(f, "waves {}", self.waves)?;
        if self.ar_order > 0 {
            writeln!(f, "ar {}", self.ar_order)?;
        }
        write!(f, "invariance {}", self.invariance.level)?;
        if !self.invariance.exempt.is_empty() {
            write!(f, " except")?;
            for &l in &self.invariance.exempt {
                write!(f, " {}", self.latents[l])?;
            }
        }
        writeln!(f)?;
        if self.identification == Identification::Variance {
            writeln!(f, "identify variance")?;
        }
        if self.latent_means == LatentMeans::Free {
            writeln!(f, "means free")?;
        }
        for fix in &self.fixed_values {
            write!(f, "fix {}", self.param_text(&fix.param))?;
            if let WaveSel::At(t) = fix.wave {
                write!(f, "@{t}")?;
            }
            writeln!(f, " = {:?}", fix.value)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Lexing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Arrow,
    At,
    Eq,
    LBrack,
    RBrack,
    Comma,
    Star,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Number(v) => format!("number {v}"),
            Tok::Arrow => "`->`".into(),
            Tok::At => "`@`".into(),
            Tok::Eq => "`=`".into(),
            Tok::LBrack => "`[`".into(),
            Tok::RBrack => "`]`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Star => "`*`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

/// Statements as token runs, split on newlines and `;`.
fn lex(text: &str) -> Result<Vec<Vec<Token>>, SpecError> {
    let mut statements = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("");
        let chars: Vec<(usize, char)> = content.char_indices().collect();
        let mut current = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let (byte, c) = chars[i];
            let col = content[..byte].chars().count() + 1;
            let push = |cur: &mut Vec<Token>, tok| cur.push(Token { tok, line, col });
            match c {
                c if c.is_whitespace() => i += 1,
                ';' => {
                    if !current.is_empty() {
                        statements.push(std::mem::take(&mut current));
                    }
                    i += 1;
                }
                '@' => {
                    push(&mut current, Tok::At);
                    i += 1;
                }
                '=' => {
                    push(&mut current, Tok::Eq);
                    i += 1;
                }
                '[' => {
                    push(&mut current, Tok::LBrack);
                    i += 1;
                }
                ']' => {
                    push(&mut current, Tok::RBrack);
                    i += 1;
                }
                ',' => {
                    push(&mut current, Tok::Comma);
                    i += 1;
                }
                '*' => {
                    push(&mut current, Tok::Star);
                    i += 1;
                }
                '-' if chars.get(i + 1).map(|x| x.1) == Some('>') => {
                    push(&mut current, Tok::Arrow);
                    i += 2;
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let start = byte;
                    while i < chars.len() && (chars[i].1.is_ascii_alphanumeric() || chars[i].1 == '_') {
                        i += 1;
                    }
                    let end = chars.get(i).map_or(content.len(), |x| x.0);
                    push(&mut current, Tok::Ident(content[start..end].to_string()));
                }
                c if c.is_ascii_digit() || c == '.' || c == '-' || c == '+' => {
                    let start = byte;
                    i += 1;
                    while i < chars.len() {
                        let d = chars[i].1;
                        let prev = chars[i - 1].1;
                        if d.is_ascii_digit()
                            || d == '.'
                            || d == 'e'
                            || d == 'E'
                            || ((d == '-' || d == '+') && (prev == 'e' || prev == 'E'))
                        {
                            i += 1;
                        } else {
                            break;
                        }
                    }
                    let end = chars.get(i).map_or(content.len(), |x| x.0);
                    let lexeme = &content[start..end];
                    let value: f64 = lexeme
                        .parse()
                        .map_err(|_| SpecError::new(line, col, format!("malformed number `{lexeme}`")))?;
                    push(&mut current, Tok::Number(value));
                }
                other => return Err(SpecError::new(line, col, format!("unexpected character `{other}`"))),
            }
        }
        if !current.is_empty() {
            statements.push(current);
        }
    }
    Ok(statements)
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone)]
struct Name {
    text: String,
    line: usize,
    col: usize,
}

#[derive(Debug)]
enum Stmt {
    Latent {
        name: Name,
        indicators: Vec<Name>,
    },
    Path {
        source: Name,
        targets: Vec<Name>,
    },
    Covariate {
        name: Name,
        targets: Vec<Name>,
    },
    Waves {
        value: usize,
        at: (usize, usize),
    },
    Ar {
        value: usize,
        at: (usize, usize),
    },
    Invariance {
        level: InvarianceLevel,
        exempt: Vec<Name>,
        at: (usize, usize),
    },
    Identify {
        ident: Identification,
        at: (usize, usize),
    },
    Means {
        means: LatentMeans,
        at: (usize, usize),
    },
    Fix {
        kind: Name,
        args: Vec<Name>,
        wave: Option<(WaveSel, (usize, usize))>,
        value: f64,
    },
}

const RESERVED: &[&str] = &["by", "except"];

struct Cursor<'a> {
    toks: &'a [Token],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(toks: &'a [Token]) -> Self {
        Cursor { toks, pos: 0 }
    }

    fn peek(&self) -> Option<&'a Token> {
        self.toks.get(self.pos)
    }

    fn end_pos(&self) -> (usize, usize) {
        let last = self.toks.last().expect("statements are non-empty");
        (last.line, last.col + 1)
    }

    fn err_here(&self, expected: &str) -> SpecError {
        match self.peek() {
            Some(t) => SpecError::new(
                t.line,
                t.col,
                format!("expected {expected}, found {}", t.tok.describe()),
            ),
            None => {
                let (l, c) = self.end_pos();
                SpecError::new(l, c, format!("expected {expected}, found end of statement"))
            }
        }
    }

    fn name(&mut self, what: &str) -> Result<Name, SpecError> {
        match self.peek() {
            Some(Token {
                tok: Tok::Ident(s),
                line,
                col,
            }) if !RESERVED.contains(&s.as_str()) => {
                self.pos += 1;
                Ok(Name {
                    text: s.clone(),
                    line: *line,
                    col: *col,
                })
            }
            _ => Err(self.err_here(what)),
        }
    }

    fn keyword(&mut self, word: &str) -> Result<(), SpecError> {
        match self.peek() {
            Some(Token { tok: Tok::Ident(s), .. }) if s == word => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err_here(&format!("`{word}`"))),
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek().map(|t| &t.tok) == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), SpecError> {
        if self.eat(&tok) {
            Ok(())
        } else {
            Err(self.err_here(&tok.describe()))
        }
    }

    fn number(&mut self) -> Result<(f64, (usize, usize)), SpecError> {
        match self.peek() {
            Some(Token {
                tok: Tok::Number(v),
                line,
                col,
            }) => {
                self.pos += 1;
                Ok((*v, (*line, *col)))
            }
            _ => Err(self.err_here("a number")),
        }
    }

    fn count(&mut self) -> Result<(usize, (usize, usize)), SpecError> {
        let (v, at) = self.number()?;
        if v < 0.0 || v.fract() != 0.0 || v > 1e6 {
            return Err(SpecError::new(
                at.0,
                at.1,
                format!("expected a whole number, found {v}"),
            ));
        }
        Ok((v as usize, at))
    }

    fn names(&mut self) -> Result<Vec<Name>, SpecError> {
        let mut out = Vec::new();
        while self.peek().is_some() {
            out.push(self.name("a name")?);
        }
        Ok(out)
    }

    fn finish(&self) -> Result<(), SpecError> {
        if self.peek().is_some() {
            Err(self.err_here("end of statement"))
        } else {
            Ok(())
        }
    }
}

fn parse_statement(toks: &[Token]) -> Result<Stmt, SpecError> {
    let mut cur = Cursor::new(toks);
    let head = &toks[0];
    let at = (head.line, head.col);
    let word = match &head.tok {
        Tok::Ident(w) => w.as_str(),
        other => {
            return Err(SpecError::new(
                head.line,
                head.col,
                format!("expected a statement keyword, found {}", other.describe()),
            ))
        }
    };
    cur.pos = 1;
    let stmt = match word {
        "latent" => {
            let name = cur.name("a latent name")?;
            let indicators = if cur.peek().is_some() {
                cur.keyword("by")?;
                cur.names()?
            } else {
                Vec::new()
            };
            Stmt::Latent { name, indicators }
        }
        "path" => {
            let source = cur.name("a source latent")?;
            cur.expect(Tok::Arrow)?;
            let targets = cur.names()?;
            if targets.is_empty() {
                return Err(cur.err_here("a target latent"));
            }
            Stmt::Path { source, targets }
        }
        "covariate" => {
            let name = cur.name("a covariate name")?;
            cur.expect(Tok::Arrow)?;
            let targets = cur.names()?;
            if targets.is_empty() {
                return Err(cur.err_here("a target latent"));
            }
            Stmt::Covariate { name, targets }
        }
        "waves" => {
            let (value, at) = cur.count()?;
            Stmt::Waves { value, at }
        }
        "ar" => {
            let (value, at) = cur.count()?;
            Stmt::Ar { value, at }
        }
        "invariance" => {
            let level_name = cur.name("an invariance level")?;
            let level = InvarianceLevel::parse(&level_name.text).ok_or_else(|| {
                SpecError::new(
                    level_name.line,
                    level_name.col,
                    format!(
                        "unknown invariance level `{}` (configural, weak or strong)",
                        level_name.text
                    ),
                )
            })?;
            let exempt = if cur.peek().is_some() {
                cur.keyword("except")?;
                let names = cur.names()?;
                if names.is_empty() {
                    return Err(cur.err_here("a latent name"));
                }
                names
            } else {
                Vec::new()
            };
            Stmt::Invariance { level, exempt, at }
        }
        "identify" => {
            let w = cur.name("`marker` or `variance`")?;
            let ident = match w.text.as_str() {
                "marker" => Identification::Marker,
                "variance" => Identification::Variance,
                other => {
                    return Err(SpecError::new(
                        w.line,
                        w.col,
                        format!("unknown identification `{other}` (marker or variance)"),
                    ))
                }
            };
            Stmt::Identify { ident, at }
        }
        "means" => {
            let w = cur.name("`fixed` or `free`")?;
            let means = match w.text.as_str() {
                "fixed" => LatentMeans::Fixed,
                "free" => LatentMeans::Free,
                other => {
                    return Err(SpecError::new(
                        w.line,
                        w.col,
                        format!("unknown latent-mean mode `{other}` (fixed or free)"),
                    ))
                }
            };
            Stmt::Means { means, at }
        }
        "fix" => {
            let kind = cur.name("a parameter kind")?;
            cur.expect(Tok::LBrack)?;
            let mut args = vec![cur.name("a name")?];
            while cur.eat(&Tok::Comma) {
                match cur.peek() {
                    Some(Token {
                        tok: Tok::Number(v),
                        line,
                        col,
                    }) => {
                        cur.pos += 1;
                        args.push(Name {
                            text: format!("{v}"),
                            line: *line,
                            col: *col,
                        });
                    }
                    _ => args.push(cur.name("a name")?),
                }
            }
            cur.expect(Tok::RBrack)?;
            let wave = if cur.eat(&Tok::At) {
                if let Some(t) = cur.peek().filter(|t| t.tok == Tok::Star) {
                    cur.pos += 1;
                    Some((WaveSel::All, (t.line, t.col)))
                } else {
                    let (w, at) = cur.count()?;
                    Some((WaveSel::At(w), at))
                }
            } else {
                None
            };
            cur.expect(Tok::Eq)?;
            let (value, vat) = cur.number()?;
            if !value.is_finite() {
                return Err(SpecError::new(vat.0, vat.1, "fixed value must be finite"));
            }
            Stmt::Fix {
                kind,
                args,
                wave,
                value,
            }
        }
        other => {
            return Err(SpecError::new(
                head.line,
                head.col,
                format!("unknown statement `{other}`"),
            ))
        }
    };
    cur.finish()?;
    Ok(stmt)
}

fn located(name: &Name, message: impl Into<String>) -> SpecError {
    SpecError::new(name.line, name.col, message)
}

/// Parse specification text into a [`ModelSpec`].
///
/// Unspecified invariance defaults to configural and an unspecified
/// autoregressive order to 1 (0 for a single wave).
pub fn parse_model_spec(text: &str) -> Result<ModelSpec, SpecError> {
    let statements = lex(text)?
        .iter()
        .map(|s| parse_statement(s))
        .collect::<Result<Vec<_>, _>>()?;

    // Declarations first so references may precede them.
    let mut latents: Vec<String> = Vec::new();
    let mut indicators: Vec<Vec<String>> = Vec::new();
    let mut latent_pos = Vec::new();
    let mut covariate_names: Vec<Name> = Vec::new();
    let mut declared: HashMap<String, &'static str> = HashMap::new();

    let mut declare = |name: &Name, kind: &'static str| -> Result<(), SpecError> {
        if let Some(prev) = declared.insert(name.text.clone(), kind) {
            return Err(located(
                name,
                format!("duplicate declaration of `{}` (already a {prev})", name.text),
            ));
        }
        Ok(())
    };

    for stmt in &statements {
        match stmt {
            Stmt::Latent { name, indicators: inds } => {
                declare(name, "latent")?;
                for ind in inds {
                    declare(ind, "indicator")?;
                }
                latents.push(name.text.clone());
                indicators.push(inds.iter().map(|n| n.text.clone()).collect());
                latent_pos.push((name.line, name.col));
            }
            Stmt::Covariate { name, .. } => {
                declare(name, "covariate")?;
                covariate_names.push(name.clone());
            }
            _ => {}
        }
    }

    let latent_of = |name: &Name| -> Result<usize, SpecError> {
        latents
            .iter()
            .position(|l| *l == name.text)
            .ok_or_else(|| located(name, format!("unknown latent `{}`", name.text)))
    };

    let mut spec = ModelSpec {
        latents: latents.clone(),
        indicators,
        structural_edges: Vec::new(),
        ar_order: 1,
        waves: 1,
        covariates: Vec::new(),
        invariance: Invariance {
            level: InvarianceLevel::Configural,
            exempt: Vec::new(),
        },
        identification: Identification::Marker,
        latent_means: LatentMeans::Fixed,
        fixed_values: Vec::new(),
        spans: Spans {
            latents: latent_pos,
            edges: Vec::new(),
        },
    };

    let mut waves: Option<(usize, (usize, usize))> = None;
    let mut ar: Option<(usize, (usize, usize))> = None;
    let mut seen_invariance = false;
    let mut seen_identify = false;
    let mut seen_means = false;
    let mut pending_fixes = Vec::new();

    for stmt in &statements {
        match stmt {
            Stmt::Latent { .. } => {}
            Stmt::Path { source, targets } => {
                let src = latent_of(source)?;
                for target in targets {
                    let dst = latent_of(target)?;
                    if src == dst {
                        return Err(located(target, format!("path from `{}` to itself", target.text)));
                    }
                    if spec.structural_edges.contains(&(src, dst)) {
                        return Err(located(
                            target,
                            format!("duplicate path `{} -> {}`", source.text, target.text),
                        ));
                    }
                    spec.structural_edges.push((src, dst));
                    spec.spans.edges.push((target.line, target.col));
                }
            }
            Stmt::Covariate { name, targets } => {
                let mut idx = Vec::new();
                for t in targets {
                    let l = latent_of(t)?;
                    if idx.contains(&l) {
                        return Err(located(t, format!("duplicate covariate target `{}`", t.text)));
                    }
                    idx.push(l);
                }
                spec.covariates.push(Covariate {
                    name: name.text.clone(),
                    targets: idx,
                });
            }
            Stmt::Waves { value, at } => {
                if waves.is_some() {
                    return Err(SpecError::new(at.0, at.1, "duplicate `waves` statement"));
                }
                if *value == 0 {
                    return Err(SpecError::new(at.0, at.1, "waves must be at least 1"));
                }
                waves = Some((*value, *at));
            }
            Stmt::Ar { value, at } => {
                if ar.is_some() {
                    return Err(SpecError::new(at.0, at.1, "duplicate `ar` statement"));
                }
                if *value == 0 {
                    return Err(SpecError::new(at.0, at.1, "ar order must be at least 1"));
                }
                ar = Some((*value, *at));
            }
            Stmt::Invariance { level, exempt, at } => {
                if seen_invariance {
                    return Err(SpecError::new(at.0, at.1, "duplicate `invariance` statement"));
                }
                seen_invariance = true;
                if *level == InvarianceLevel::Configural && !exempt.is_empty() {
                    return Err(SpecError::new(
                        at.0,
                        at.1,
                        "configural invariance has no constraints to exempt",
                    ));
                }
                let mut idx = Vec::new();
                for e in exempt {
                    let l = latent_of(e)?;
                    if idx.contains(&l) {
                        return Err(located(e, format!("duplicate exemption `{}`", e.text)));
                    }
                    idx.push(l);
                }
                spec.invariance = Invariance {
                    level: *level,
                    exempt: idx,
                };
            }
            Stmt::Identify { ident, at } => {
                if seen_identify {
                    return Err(SpecError::new(at.0, at.1, "duplicate `identify` statement"));
                }
                seen_identify = true;
                spec.identification = *ident;
            }
            Stmt::Means { means, at } => {
                if seen_means {
                    return Err(SpecError::new(at.0, at.1, "duplicate `means` statement"));
                }
                seen_means = true;
                spec.latent_means = *means;
            }
            Stmt::Fix {
                kind,
                args,
                wave,
                value,
            } => pending_fixes.push((kind, args, wave, *value)),
        }
    }

    let (t, _) = waves.ok_or_else(|| SpecError::new(1, 1, "missing `waves` statement"))?;
    spec.waves = t;
    spec.ar_order = match ar {
        Some((k, at)) => {
            if k >= t {
                return Err(SpecError::new(
                    at.0,
                    at.1,
                    format!("ar order {k} must be less than the number of waves {t}"),
                ));
            }
            k
        }
        None => 1.min(t - 1),
    };

    if let Err(cycle) = spec.topological_order() {
        let names: Vec<&str> = cycle.iter().map(|&l| spec.latents[l].as_str()).collect();
        let (src, dst) = (cycle[0], cycle[1]);
        let edge = spec.structural_edges.iter().position(|&e| e == (src, dst)).unwrap_or(0);
        let (line, col) = spec.spans.edges.get(edge).copied().unwrap_or((1, 1));
        return Err(SpecError::new(
            line,
            col,
            format!("structural paths form a cycle: {}", names.join(" -> ")),
        ));
    }

    for (kind, args, wave, value) in pending_fixes {
        let param = resolve_param(&spec, kind, args)?;
        let sel = match wave {
            None => WaveSel::All,
            Some((sel, at)) => {
                if param.is_wave_free() && *sel != WaveSel::All {
                    return Err(SpecError::new(
                        at.0,
                        at.1,
                        format!("`{}` carries no wave index", kind.text),
                    ));
                }
                if let WaveSel::At(w) = sel {
                    if *w == 0 || *w > spec.waves {
                        return Err(SpecError::new(
                            at.0,
                            at.1,
                            format!("wave {w} outside 1..={}", spec.waves),
                        ));
                    }
                    if let ParamRef::Autoregressive { lag, .. } = param {
                        if *w <= lag {
                            return Err(SpecError::new(
                                at.0,
                                at.1,
                                format!("no lag-{lag} coefficient enters wave {w}"),
                            ));
                        }
                    }
                }
                *sel
            }
        };
        spec.fixed_values.push(FixedValue {
            param,
            wave: sel,
            value,
        });
    }

    Ok(spec)
}

fn resolve_param(spec: &ModelSpec, kind: &Name, args: &[Name]) -> Result<ParamRef, SpecError> {
    let arity = |n: usize| -> Result<(), SpecError> {
        if args.len() != n {
            Err(located(
                kind,
                format!("`{}` takes {n} argument(s), found {}", kind.text, args.len()),
            ))
        } else {
            Ok(())
        }
    };
    let latent = |n: &Name| {
        spec.latent_index(&n.text)
            .ok_or_else(|| located(n, format!("unknown latent `{}`", n.text)))
    };
    let indicator = |n: &Name| {
        spec.indicator_index(&n.text)
            .ok_or_else(|| located(n, format!("unknown indicator `{}`", n.text)))
    };
    let covariate = |n: &Name| {
        spec.covariate_index(&n.text)
            .ok_or_else(|| located(n, format!("unknown covariate `{}`", n.text)))
    };
    match kind.text.as_str() {
        "mu" => {
            arity(1)?;
            if let Some(c) = spec.covariate_index(&args[0].text) {
                Ok(ParamRef::CovariateMean { covariate: c })
            } else {
                Ok(ParamRef::Intercept {
                    indicator: indicator(&args[0])?,
                })
            }
        }
        "lambda" => {
            let ind = match args.len() {
                1 => indicator(&args[0])?,
                2 => {
                    let l = latent(&args[0])?;
                    let i = indicator(&args[1])?;
                    if spec.indicator_list()[i].0 != l {
                        return Err(located(
                            &args[1],
                            format!("`{}` is not an indicator of `{}`", args[1].text, args[0].text),
                        ));
                    }
                    i
                }
                _ => {
                    arity(2)?;
                    unreachable!()
                }
            };
            Ok(ParamRef::Loading { indicator: ind })
        }
        "theta" => {
            arity(1)?;
            Ok(ParamRef::Residual {
                indicator: indicator(&args[0])?,
            })
        }
        "beta" => {
            arity(2)?;
            let (s, t) = (latent(&args[0])?, latent(&args[1])?);
            if !spec.structural_edges.contains(&(s, t)) {
                return Err(located(
                    &args[0],
                    format!("no path `{} -> {}` declared", args[0].text, args[1].text),
                ));
            }
            Ok(ParamRef::Path { source: s, target: t })
        }
        "pi" => {
            arity(2)?;
            let l = latent(&args[0])?;
            let lag: usize = args[1]
                .text
                .parse()
                .ok()
                .filter(|&k| k >= 1 && k <= spec.ar_order)
                .ok_or_else(|| located(&args[1], format!("lag must be an integer in 1..={}", spec.ar_order)))?;
            Ok(ParamRef::Autoregressive { latent: l, lag })
        }
        "c" => {
            arity(2)?;
            let c = covariate(&args[0])?;
            let l = latent(&args[1])?;
            if !spec.covariates[c].targets.contains(&l) {
                return Err(located(
                    &args[1],
                    format!("covariate `{}` does not affect `{}`", args[0].text, args[1].text),
                ));
            }
            Ok(ParamRef::CovariateEffect {
                covariate: c,
                latent: l,
            })
        }
        "psi" => match args.len() {
            1 => {
                if let Some(c) = spec.covariate_index(&args[0].text) {
                    Ok(ParamRef::CovariateCov { a: c, b: c })
                } else {
                    Ok(ParamRef::Disturbance {
                        latent: latent(&args[0])?,
                    })
                }
            }
            2 => {
                let (a, b) = (covariate(&args[0])?, covariate(&args[1])?);
                Ok(ParamRef::CovariateCov {
                    a: a.max(b),
                    b: a.min(b),
                })
            }
            _ => {
                arity(2)?;
                unreachable!()
            }
        },
        "alpha" => {
            arity(1)?;
            Ok(ParamRef::LatentMean {
                latent: latent(&args[0])?,
            })
        }
        other => Err(located(
            kind,
            format!("unknown parameter kind `{other}` (mu, lambda, theta, beta, pi, c, psi, alpha)"),
        )),
    }
}

/// Structural checks on a parsed template. An empty list means the template
/// is usable: the within-wave paths are acyclic, every latent has an
/// indicator, and every single-indicator latent has both its loading and its
/// residual variance pinned.
pub fn validate_template(spec: &ModelSpec) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let pos = |l: usize| spec.spans.latents.get(l).copied();

    if let Err(cycle) = spec.topological_order() {
        let names: Vec<&str> = cycle.iter().map(|&l| spec.latents[l].as_str()).collect();
        out.push(Diagnostic {
            position: cycle.first().and_then(|&l| pos(l)),
            message: format!("structural paths form a cycle: {}", names.join(" -> ")),
        });
    }
    if spec.waves == 0 {
        out.push(Diagnostic {
            position: None,
            message: "waves must be at least 1".into(),
        });
    } else if spec.ar_order >= spec.waves && spec.ar_order > 0 {
        out.push(Diagnostic {
            position: None,
            message: format!(
                "ar order {} must be less than the number of waves {}",
                spec.ar_order, spec.waves
            ),
        });
    }

    let inds = spec.indicator_list();
    for (l, name) in spec.latents.iter().enumerate() {
        match spec.indicators[l].len() {
            0 => out.push(Diagnostic {
                position: pos(l),
                message: format!("latent `{name}` has no indicators"),
            }),
            1 => {
                let i = inds.iter().position(|(o, _)| *o == l).unwrap();
                let ind = &spec.indicators[l][0];
                let loading_fixed = spec.identification == Identification::Marker
                    || spec.fixed_at_all_waves(ParamRef::Loading { indicator: i });
                if !loading_fixed {
                    out.push(Diagnostic {
                        position: pos(l),
                        message: format!(
                            "single-indicator latent `{name}` is not identified: fix the loading of `{ind}`"
                        ),
                    });
                }
                if !spec.fixed_at_all_waves(ParamRef::Residual { indicator: i }) {
                    out.push(Diagnostic {
                        position: pos(l),
                        message: format!(
                            "single-indicator latent `{name}` is not identified: fix the residual variance of `{ind}`"
                        ),
                    });
                }
            }
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_spec() {
        let spec = parse_model_spec("latent F by y1 y2 y3; waves 2; ar 1").unwrap();
        assert_eq!(spec.latent_count(), 1);
        assert_eq!(spec.indicator_count(), 3);
        assert_eq!(spec.waves, 2);
        assert_eq!(spec.ar_order, 1);
        assert!(spec.structural_edges.is_empty());
        assert_eq!(spec.invariance.level, InvarianceLevel::Configural);
        assert!(validate_template(&spec).is_empty());
    }

    #[test]
    fn defaults() {
        let spec = parse_model_spec("latent F by a b\nwaves 3").unwrap();
        assert_eq!(spec.ar_order, 1);
        let single = parse_model_spec("latent F by a b\nwaves 1").unwrap();
        assert_eq!(single.ar_order, 0);
    }

    #[test]
    fn cycle_names_both_latents() {
        let err = parse_model_spec("latent FHS by a b\nlatent DS by c d\npath FHS -> DS\npath DS -> FHS\nwaves 2")
            .unwrap_err();
        assert!(err.message.contains("cycle"), "{err}");
        assert!(err.message.contains("FHS") && err.message.contains("DS"), "{err}");
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_model_spec("latent F by a b\nwaves 2\npath F => G").unwrap_err();
        assert_eq!((err.line, err.col), (3, 9));
        let err = parse_model_spec("latent F by a b\nwaves 2\npath F G").unwrap_err();
        assert_eq!((err.line, err.col), (3, 8));
        assert!(err.message.contains("expected `->`"), "{err}");
    }

    #[test]
    fn unknown_and_duplicate_names() {
        let err = parse_model_spec("latent F by a\npath F -> G\nwaves 2").unwrap_err();
        assert!(err.message.contains("unknown latent `G`"), "{err}");
        assert_eq!((err.line, err.col), (2, 11));

        let err = parse_model_spec("latent F by a b\nlatent G by b c\nwaves 2").unwrap_err();
        assert!(err.message.contains("duplicate"), "{err}");
        assert_eq!((err.line, err.col), (2, 13));

        let err = parse_model_spec("latent F by a\nlatent F by b\nwaves 2").unwrap_err();
        assert!(err.message.contains("duplicate declaration of `F`"));
    }

    #[test]
    fn ar_order_must_be_below_waves() {
        let err = parse_model_spec("latent F by a b\nwaves 2\nar 2").unwrap_err();
        assert!(err.message.contains("less than"), "{err}");
        assert_eq!(err.line, 3);
    }

    #[test]
    fn exemptions_must_name_latents() {
        let err = parse_model_spec("latent F by a b\nwaves 2\ninvariance strong except a").unwrap_err();
        assert!(err.message.contains("unknown latent `a`"));
    }

    #[test]
    fn fix_statements_resolve() {
        let spec = parse_model_spec(
            "latent F by a b\nlatent G by c d\npath F -> G\ncovariate X -> F\nwaves 3\nar 2\n\
             fix lambda[F,b]@2 = 0.5\nfix theta[a] = 0\nfix pi[G,2]@3 = 0\nfix psi[X] = 1\nfix mu[X] = 0\nfix beta[F,G]@* = -1e-1",
        )
        .unwrap();
        assert_eq!(spec.fixed_values.len(), 6);
        assert_eq!(
            spec.fixed_values[0],
            FixedValue {
                param: ParamRef::Loading { indicator: 1 },
                wave: WaveSel::At(2),
                value: 0.5
            }
        );
        assert_eq!(spec.fixed_values[3].param, ParamRef::CovariateCov { a: 0, b: 0 });
        assert_eq!(spec.fixed_values[5].value, -0.1);

        assert!(parse_model_spec("latent F by a b\nwaves 3\nar 2\nfix pi[F,2]@2 = 0").is_err());
        assert!(parse_model_spec("latent F by a b\nwaves 3\nfix lambda[F,b]@4 = 1").is_err());
        assert!(parse_model_spec("latent F by a b\nwaves 3\nfix beta[F,F] = 1").is_err());
    }

    #[test]
    fn single_indicator_identification() {
        let free = parse_model_spec("latent F by a\nwaves 1\nidentify variance").unwrap();
        let diags = validate_template(&free);
        assert!(diags.iter().any(|d| d.message.contains("fix the loading")));
        assert!(diags.iter().any(|d| d.message.contains("residual variance")));
        assert_eq!(diags[0].position, Some((1, 8)));

        let ok = parse_model_spec("latent F by a\nwaves 2\nfix theta[a] = 0").unwrap();
        assert!(validate_template(&ok).is_empty());

        let per_wave = parse_model_spec("latent F by a\nwaves 2\nfix theta[a]@1 = 0\nfix theta[a]@2 = 0").unwrap();
        assert!(validate_template(&per_wave).is_empty());
    }

    #[test]
    fn empty_latent_is_diagnosed() {
        let spec = parse_model_spec("latent F by a b\nlatent G\nwaves 1").unwrap();
        let diags = validate_template(&spec);
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.contains("no indicators"));
    }

    #[test]
    fn topological_order_respects_edges() {
        let spec = parse_model_spec(
            "latent A by a1 a2\nlatent B by b1 b2\nlatent C by c1 c2\npath C -> A\npath B -> C\nwaves 1",
        )
        .unwrap();
        assert_eq!(spec.topological_order().unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn comments_and_observed_names() {
        let spec =
            parse_model_spec("# header\nlatent F by a b # trailing\ncovariate AGE -> F\nwaves 2 ; ar 1").unwrap();
        assert_eq!(spec.observed_names(), vec!["a.1", "b.1", "a.2", "b.2", "AGE"]);
    }

    #[test]
    fn pretty_print_round_trip() {
        let text = "latent F by a b\nlatent G by c\npath F -> G\ncovariate X -> F G\nwaves 3\nar 2\n\
                    invariance strong except G\nidentify variance\nmeans free\nfix theta[c] = 0\nfix lambda[G,c] = 1\nfix psi[X] = 2.5";
        let spec = parse_model_spec(text).unwrap();
        let printed = spec.to_string();
        let again = parse_model_spec(&printed).unwrap();
        assert_eq!(spec, again);
        assert_eq!(printed, again.to_string());
    }
}
