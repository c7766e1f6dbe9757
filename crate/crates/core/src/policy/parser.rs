//! Hand-written recursive-descent parser for the rule DSL.
//!
//! Grammar (tokens case-insensitive, `#` starts a comment):
//!
//! ```text
//! policy    := directive* rule*
//! directive := "THRESHOLD" NUMBER
//!            | "DEFAULT" "CACHESIZE" NUMBER
//!            | "DEFAULT" "CACHEVALIDITY" NUMBER
//! rule      := "WHEN" IDENT "IS" ADJ ("OR" ADJ)*
//!              ["IF" GUARD]
//!              "THEN" "UTILITY" "OF" ACTION "IS" ADJ
//! ADJ       := "'low'" | "'medium'" | "'high'"
//! ```
//!
//! Property names match the schema up to case and underscores, so
//! `REQUESTDISPERSION` resolves to `request_dispersion`. Guards are a closed
//! set; `CACHEHANDLER.ISEMPTY` is accepted as an alias for `CACHE_ABSENT`.

use crate::context::ContextSchema;
use crate::error::{Error, Result};

use super::{Action, AdaptationPolicy, Adjective, Guard, Rule, Variant};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Quoted(String),
    Number(f64),
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

const PATH: &str = "<policy>";

fn tokenize(text: &str) -> Result<Vec<Spanned>> {
    let mut out = Vec::new();
    for (line_idx, line) in text.lines().enumerate() {
        let line_no = line_idx + 1;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            if c == '#' {
                break;
            } else if c.is_whitespace() {
                i += 1;
            } else if c == '\'' {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && chars[j] != '\'' {
                    j += 1;
                }
                if j == chars.len() {
                    return Err(Error::parse(PATH, line_no, col, "unterminated quote"));
                }
                out.push(Spanned {
                    tok: Tok::Quoted(chars[start..j].iter().collect()),
                    line: line_no,
                    col,
                });
                i = j + 1;
            } else if c.is_ascii_digit() {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                let lit: String = chars[start..i].iter().collect();
                let n: f64 = lit
                    .parse()
                    .map_err(|_| Error::parse(PATH, line_no, col, format!("bad number `{lit}`")))?;
                out.push(Spanned {
                    tok: Tok::Number(n),
                    line: line_no,
                    col,
                });
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '.')
                {
                    i += 1;
                }
                out.push(Spanned {
                    tok: Tok::Ident(chars[start..i].iter().collect()),
                    line: line_no,
                    col,
                });
            } else {
                return Err(Error::parse(
                    PATH,
                    line_no,
                    col,
                    format!("unexpected character `{c}`"),
                ));
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Spanned>,
    pos: usize,
    schema: &'a ContextSchema,
}

fn normalize(name: &str) -> String {
    name.chars()
        .filter(|c| *c != '_' && *c != '.')
        .collect::<String>()
        .to_ascii_lowercase()
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Spanned> {
        self.tokens.get(self.pos)
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Spanned { tok: Tok::Ident(s), .. }) if s.eq_ignore_ascii_case(kw))
    }

    fn err_here(&self, msg: impl Into<String>) -> Error {
        match self.peek() {
            Some(s) => Error::parse(PATH, s.line, s.col, msg),
            None => {
                let (line, col) = self
                    .tokens
                    .last()
                    .map(|s| (s.line, s.col))
                    .unwrap_or((1, 1));
                Error::parse(PATH, line, col, msg)
            }
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        if self.at_keyword(kw) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err_here(format!("expected {kw}")))
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<(String, usize, usize)> {
        match self.peek().cloned() {
            Some(Spanned { tok: Tok::Ident(s), line, col }) => {
                self.pos += 1;
                Ok((s, line, col))
            }
            _ => Err(self.err_here(format!("expected {what}"))),
        }
    }

    fn expect_number(&mut self, what: &str) -> Result<f64> {
        match self.peek().cloned() {
            Some(Spanned { tok: Tok::Number(n), .. }) => {
                self.pos += 1;
                Ok(n)
            }
            _ => Err(self.err_here(format!("expected {what}"))),
        }
    }

    fn expect_adjective(&mut self) -> Result<Adjective> {
        match self.peek().cloned() {
            Some(Spanned { tok: Tok::Quoted(s), line, col }) => {
                self.pos += 1;
                match s.to_ascii_lowercase().as_str() {
                    "low" => Ok(Adjective::Low),
                    "medium" => Ok(Adjective::Medium),
                    "high" => Ok(Adjective::High),
                    other => Err(Error::parse(
                        PATH,
                        line,
                        col,
                        format!("unknown adjective `{other}` (expected low, medium or high)"),
                    )),
                }
            }
            Some(Spanned { tok: Tok::Ident(_), .. }) => {
                Err(self.err_here("adjective must be quoted, e.g. 'LOW'"))
            }
            _ => Err(self.err_here("expected a quoted adjective")),
        }
    }

    fn directive(&mut self, policy: &mut AdaptationPolicy, rules_seen: bool) -> Result<()> {
        if rules_seen {
            return Err(self.err_here("directives must precede the first rule"));
        }
        if self.at_keyword("THRESHOLD") {
            self.pos += 1;
            let v = self.expect_number("a threshold value")?;
            if !(v > 0.0 && v < 1.0) {
                return Err(self.err_here(format!("threshold {v} must lie in (0, 1)")));
            }
            policy.utility_threshold = v;
        } else {
            self.expect_keyword("DEFAULT")?;
            let (name, line, col) = self.expect_ident("CACHESIZE or CACHEVALIDITY")?;
            let v = self.expect_number("a value")?;
            if v.fract() != 0.0 || v < 0.0 {
                return Err(Error::parse(PATH, line, col, "default must be a non-negative integer"));
            }
            let v = v as u32;
            if name.eq_ignore_ascii_case("CACHESIZE") {
                if !(Variant::MIN_CACHE_SIZE..=Variant::MAX_CACHE_SIZE).contains(&v) {
                    return Err(Error::parse(
                        PATH,
                        line,
                        col,
                        format!(
                            "default cache size {v} outside [{}, {}]",
                            Variant::MIN_CACHE_SIZE,
                            Variant::MAX_CACHE_SIZE
                        ),
                    ));
                }
                policy.cache_default_size = v;
            } else if name.eq_ignore_ascii_case("CACHEVALIDITY") {
                if v < 1 {
                    return Err(Error::parse(PATH, line, col, "default cache validity must be >= 1"));
                }
                policy.cache_default_validity = v;
            } else {
                return Err(Error::parse(
                    PATH,
                    line,
                    col,
                    format!("unknown default `{name}` (expected CACHESIZE or CACHEVALIDITY)"),
                ));
            }
        }
        Ok(())
    }

    fn rule(&mut self) -> Result<Rule> {
        self.expect_keyword("WHEN")?;
        let (prop_name, line, col) = self.expect_ident("a property name")?;
        let property = self
            .schema
            .properties()
            .iter()
            .position(|p| normalize(p.name()) == normalize(&prop_name))
            .ok_or_else(|| {
                Error::parse(PATH, line, col, format!("unknown property `{prop_name}`"))
            })?;
        self.expect_keyword("IS")?;
        let mut when = vec![self.expect_adjective()?];
        while self.at_keyword("OR") {
            self.pos += 1;
            when.push(self.expect_adjective()?);
        }
        let guard = if self.at_keyword("IF") {
            self.pos += 1;
            let (g, gline, gcol) = self.expect_ident("a guard")?;
            Some(match normalize(&g).as_str() {
                "cachepresent" | "cachehandlerexists" => Guard::CachePresent,
                "cacheabsent" | "cachehandlerisempty" => Guard::CacheAbsent,
                "serversatmax" => Guard::ServersAtMax,
                "serversatmin" => Guard::ServersAtMin,
                _ => {
                    return Err(Error::parse(
                        PATH,
                        gline,
                        gcol,
                        format!("unknown guard `{g}`"),
                    ))
                }
            })
        } else {
            None
        };
        self.expect_keyword("THEN")?;
        self.expect_keyword("UTILITY")?;
        self.expect_keyword("OF")?;
        let (action_name, aline, acol) = self.expect_ident("an action")?;
        let action = match action_name.to_ascii_uppercase().as_str() {
            "ADDCACHE" => Action::AddCache,
            "REMOVECACHE" => Action::RemoveCache,
            "ADDSERVER" => Action::AddServer,
            "REMOVESERVER" => Action::RemoveServer,
            "GROWCACHE" => Action::GrowCache,
            "SHRINKCACHE" => Action::ShrinkCache,
            _ => {
                return Err(Error::parse(
                    PATH,
                    aline,
                    acol,
                    format!("unknown action `{action_name}`"),
                ))
            }
        };
        self.expect_keyword("IS")?;
        let utility = self.expect_adjective()?;
        Ok(Rule {
            property,
            property_name: self.schema.property(property).name().to_string(),
            when,
            guard,
            action,
            utility,
        })
    }
}

/// Parse a policy text against a schema. Empty input yields an empty,
/// no-op policy.
pub fn parse_policy(text: &str, schema: &ContextSchema) -> Result<AdaptationPolicy> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        schema,
    };
    let mut policy = AdaptationPolicy::empty();
    let mut rules_seen = false;
    while parser.peek().is_some() {
        if parser.at_keyword("THRESHOLD") || parser.at_keyword("DEFAULT") {
            parser.directive(&mut policy, rules_seen)?;
        } else if parser.at_keyword("WHEN") {
            rules_seen = true;
            let rule = parser.rule()?;
            policy.rules.push(rule);
        } else {
            return Err(parser.err_here("expected WHEN, THRESHOLD or DEFAULT"));
        }
    }
    Ok(policy)
}
