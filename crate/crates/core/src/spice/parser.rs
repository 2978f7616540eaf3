use std::collections::{BTreeMap, BTreeSet};

use super::lexer::{items, logical_cards, tokenize, Card, Item};
use super::value::parse_value;
use super::{Device, DeviceKind, Model, NetlistIR, ParseError, SubcktDef, Terminal, GROUND};

const DEVICE_PREFIXES: &str = "mqdrclviefghx";

/// One `.subckt` body (or the top level) before references are resolved.
#[derive(Default)]
struct RawScope {
    devices: Vec<(usize, Vec<Item>)>,
    models: BTreeMap<String, Model>,
    subckts: BTreeMap<String, (Vec<String>, RawScope)>,
    params: BTreeMap<String, String>,
    directives: Vec<String>,
}

/// Parses a SPICE deck. The first line is a title when it is a `*` comment
/// or does not look like a card; `.end` stops parsing.
pub fn parse_netlist(text: &str) -> Result<NetlistIR, ParseError> {
    let (first, cards) = logical_cards(text)?;
    let mut title = String::new();
    let mut skip_first = false;
    if let Some((line, raw)) = &first {
        if let Some(rest) = raw.strip_prefix('*') {
            title = rest.trim().to_string();
        } else if !looks_like_card(raw) {
            title = raw.clone();
            skip_first = cards.first().is_some_and(|c| c.line == *line);
        }
    }
    let cards = if skip_first { &cards[1..] } else { &cards[..] };
    let root = collect(cards)?;
    let mut ir = resolve(&root, &[])?;
    ir.title = title;
    Ok(ir)
}

fn looks_like_card(line: &str) -> bool {
    let lower = line.trim().to_ascii_lowercase();
    let first = lower.split_whitespace().next().unwrap_or("");
    match first.chars().next() {
        Some('.') => true,
        // `R1 ...` is a card, `Common source amplifier` is a title
        Some(c) if DEVICE_PREFIXES.contains(c) => first.chars().any(|c| c.is_ascii_digit()),
        _ => false,
    }
}

fn collect(cards: &[Card]) -> Result<RawScope, ParseError> {
    let mut stack: Vec<(usize, String, Vec<String>, RawScope)> = Vec::new();
    let mut top = RawScope::default();
    let mut in_control: Option<(usize, Vec<String>)> = None;

    for card in cards {
        let lower = card.text.to_ascii_lowercase();
        let keyword = lower.split_whitespace().next().unwrap_or("");

        if let Some((_, lines)) = in_control.as_mut() {
            lines.push(lower.clone());
            if keyword == ".endc" {
                let (_, lines) = in_control.take().expect("inside control block");
                let scope = stack.last_mut().map_or(&mut top, |s| &mut s.3);
                scope.directives.push(lines.join("\n"));
            }
            continue;
        }

        let scope = stack.last_mut().map_or(&mut top, |s| &mut s.3);
        if keyword.starts_with('.') {
            match keyword {
                ".end" => break,
                ".control" => in_control = Some((card.line, vec![lower.clone()])),
                ".subckt" => {
                    let toks = tokenize(&card.text, card.line)?;
                    let its = items(&toks, card.line, false)?;
                    let words: Vec<String> = its
                        .iter()
                        .filter_map(|i| match i {
                            Item::Word(w) if !w.ends_with(':') => Some(w.clone()),
                            _ => None,
                        })
                        .collect();
                    let Some(name) = words.get(1).cloned() else {
                        return Err(ParseError::Lex { line: card.line, message: ".subckt without a name".into() });
                    };
                    let ports = words[2..].iter().map(|p| canonical_net(p)).collect();
                    let mut body = RawScope::default();
                    for it in its {
                        if let Item::Param(k, v) = it {
                            body.params.insert(k, v);
                        }
                    }
                    stack.push((card.line, name, ports, body));
                }
                ".ends" => {
                    let Some((_, name, ports, body)) = stack.pop() else {
                        return Err(ParseError::UnexpectedEnds { line: card.line });
                    };
                    let parent = stack.last_mut().map_or(&mut top, |s| &mut s.3);
                    parent.subckts.insert(name, (ports, body));
                }
                ".model" => {
                    let toks = tokenize(&card.text, card.line)?;
                    let its = items(&toks, card.line, false)?;
                    let words: Vec<&String> = its
                        .iter()
                        .filter_map(|i| match i {
                            Item::Word(w) => Some(w),
                            _ => None,
                        })
                        .collect();
                    if words.len() < 3 {
                        return Err(ParseError::Lex { line: card.line, message: ".model needs a name and a type".into() });
                    }
                    let mut params = BTreeMap::new();
                    for it in &its {
                        if let Item::Param(k, v) = it {
                            // non-numeric model parameters are not modelled
                            if let Ok(x) = parse_value(v) {
                                params.insert(k.clone(), x);
                            }
                        }
                    }
                    scope.models.insert(words[1].clone(), Model { family: words[2].clone(), params });
                }
                ".param" => {
                    let toks = tokenize(&card.text, card.line)?;
                    for it in items(&toks, card.line, false)? {
                        if let Item::Param(k, v) = it {
                            scope.params.insert(k, v);
                        }
                    }
                }
                _ => scope.directives.push(lower.clone()),
            }
            continue;
        }

        let toks = tokenize(&card.text, card.line)?;
        let its = items(&toks, card.line, true)?;
        match its.first() {
            Some(Item::Word(name)) if name.starts_with(|c: char| DEVICE_PREFIXES.contains(c)) => {
                scope.devices.push((card.line, its));
            }
            _ => return Err(ParseError::UnknownCardPrefix { line: card.line, card: card.text.clone() }),
        }
    }

    if let Some((line, name, _, _)) = stack.into_iter().next_back() {
        return Err(ParseError::UnterminatedSubckt { line, name });
    }
    if let Some((line, _)) = in_control {
        return Err(ParseError::Lex { line, message: ".control without .endc".into() });
    }
    Ok(top)
}

fn canonical_net(name: &str) -> String {
    let n = name.to_ascii_lowercase();
    if n == "gnd" {
        GROUND.to_string()
    } else {
        n
    }
}

/// Lookup chain from the innermost scope outwards.
struct Ctx<'a> {
    scopes: Vec<&'a RawScope>,
}

impl Ctx<'_> {
    fn model(&self, name: &str) -> Option<&Model> {
        self.scopes.iter().find_map(|s| s.models.get(name))
    }

    fn subckt_ports(&self, name: &str) -> Option<&Vec<String>> {
        self.scopes.iter().find_map(|s| s.subckts.get(name).map(|(p, _)| p))
    }

    fn value(&self, token: &str, line: usize) -> Result<f64, ParseError> {
        self.value_depth(token, line, 0)
    }

    fn value_depth(&self, token: &str, line: usize, depth: usize) -> Result<f64, ParseError> {
        let bad = || ParseError::BadNumber { line, token: token.to_string() };
        let inner = token.trim_matches(|c| c == '{' || c == '}' || c == '\'').trim();
        if let Ok(v) = parse_value(inner) {
            return Ok(v);
        }
        if depth > 16 {
            return Err(bad());
        }
        match self.scopes.iter().find_map(|s| s.params.get(inner)) {
            Some(v) => self.value_depth(v, line, depth + 1).map_err(|_| bad()),
            None => Err(bad()),
        }
    }

    fn is_number(&self, token: &str, line: usize) -> bool {
        self.value(token, line).is_ok()
    }
}

fn resolve(scope: &RawScope, parents: &[&RawScope]) -> Result<NetlistIR, ParseError> {
    let mut chain = vec![scope];
    chain.extend_from_slice(parents);
    let ctx = Ctx { scopes: chain.clone() };

    let mut ir = NetlistIR { models: scope.models.clone(), directives: scope.directives.clone(), ..Default::default() };
    for (name, (ports, body)) in &scope.subckts {
        let mut body_ir = resolve(body, &chain)?;
        body_ir.title = String::new();
        ir.subckts.insert(name.clone(), SubcktDef { ports: ports.clone(), body: body_ir });
    }

    let mut seen = BTreeSet::new();
    for (line, its) in &scope.devices {
        let dev = build_device(*line, its, &ctx)?;
        if !seen.insert(dev.name.clone()) {
            return Err(ParseError::DuplicateDeviceName { line: *line, name: dev.name });
        }
        for t in &dev.terminals {
            ir.nets.insert(t.net.clone());
        }
        ir.devices.push(dev);
    }
    Ok(ir)
}

fn too_few(line: usize, name: &str, expected: usize, found: usize) -> ParseError {
    ParseError::TooFewTerminals { line, device: name.to_string(), expected, found }
}

fn build_device(line: usize, its: &[Item], ctx: &Ctx<'_>) -> Result<Device, ParseError> {
    let Some(Item::Word(name)) = its.first() else {
        return Err(ParseError::UnknownCardPrefix { line, card: String::new() });
    };
    let name = name.clone();
    let prefix = name.chars().next().expect("non-empty word");
    let positional: Vec<&str> = its[1..]
        .iter()
        .filter_map(|i| match i {
            Item::Word(w) if !w.ends_with(':') => Some(w.as_str()),
            _ => None,
        })
        .collect();
    let mut params = BTreeMap::new();
    for it in &its[1..] {
        if let Item::Param(k, v) = it {
            params.insert(k.clone(), ctx.value(v, line)?);
        }
    }
    let terms = |ports: &[&str], nets: &[&str]| -> Vec<Terminal> {
        ports.iter().zip(nets).map(|(p, n)| Terminal { port: p.to_string(), net: canonical_net(n) }).collect()
    };
    let fixed_ports = |kind: DeviceKind| kind.port_names().expect("fixed-arity kind");

    let mut model_ref = None;
    let mut control = None;
    let kind;
    let terminals;
    match prefix {
        'm' => {
            if positional.len() < 5 {
                return Err(too_few(line, &name, 4, positional.len().saturating_sub(1)));
            }
            let model = positional[4].to_string();
            kind = match ctx.model(&model).map(|m| m.family.as_str()) {
                Some("pmos") => DeviceKind::Pmos,
                Some("nmos") => DeviceKind::Nmos,
                _ if model.contains("pmos") || model.starts_with('p') => DeviceKind::Pmos,
                _ => DeviceKind::Nmos,
            };
            terminals = terms(fixed_ports(kind), &positional[..4]);
            model_ref = Some(model);
        }
        'q' => {
            if positional.len() < 4 {
                return Err(too_few(line, &name, 3, positional.len().saturating_sub(1)));
            }
            // optional substrate node before the model name
            let model_at = if positional.len() >= 5 && ctx.model(positional[3]).is_none() && ctx.model(positional[4]).is_some() {
                4
            } else {
                3
            };
            let model = positional[model_at].to_string();
            kind = match ctx.model(&model).map(|m| m.family.as_str()) {
                Some("pnp") => DeviceKind::Pnp,
                Some("npn") => DeviceKind::Npn,
                _ if model.starts_with('p') => DeviceKind::Pnp,
                _ => DeviceKind::Npn,
            };
            terminals = terms(fixed_ports(kind), &positional[..3]);
            model_ref = Some(model);
        }
        'd' => {
            if positional.len() < 3 {
                return Err(too_few(line, &name, 2, positional.len().saturating_sub(1)));
            }
            kind = DeviceKind::Diode;
            terminals = terms(fixed_ports(kind), &positional[..2]);
            model_ref = Some(positional[2].to_string());
        }
        'r' | 'c' | 'l' => {
            kind = match prefix {
                'r' => DeviceKind::Resistor,
                'c' => DeviceKind::Capacitor,
                _ => DeviceKind::Inductor,
            };
            if positional.len() < 2 {
                return Err(too_few(line, &name, 2, positional.len()));
            }
            terminals = terms(fixed_ports(kind), &positional[..2]);
            let mut rest = positional[2..].iter();
            if let Some(tok) = rest.next() {
                let numeric_start = tok.starts_with(|c: char| c.is_ascii_digit() || "+-.{'".contains(c));
                if numeric_start || ctx.is_number(tok, line) {
                    params.insert("value".into(), ctx.value(tok, line)?);
                } else {
                    model_ref = Some(tok.to_string());
                    if let Some(v) = rest.next() {
                        params.insert("value".into(), ctx.value(v, line)?);
                    }
                }
            }
            let key = prefix.to_string();
            if let Some(v) = params.remove(&key) {
                params.insert("value".into(), v);
            }
        }
        'v' | 'i' => {
            kind = if prefix == 'v' { DeviceKind::Vsource } else { DeviceKind::Isource };
            if positional.len() < 2 {
                return Err(too_few(line, &name, 2, positional.len()));
            }
            terminals = terms(fixed_ports(kind), &positional[..2]);
            let rest = &positional[2..];
            let mut i = 0;
            while i < rest.len() {
                match rest[i] {
                    "dc" if i + 1 < rest.len() => {
                        params.insert("value".into(), ctx.value(rest[i + 1], line)?);
                        i += 2;
                    }
                    "ac" => {
                        let mag = match rest.get(i + 1) {
                            Some(t) if ctx.is_number(t, line) => {
                                i += 1;
                                ctx.value(t, line)?
                            }
                            _ => 1.0,
                        };
                        params.insert("ac".into(), mag);
                        i += 1;
                        // optional phase
                        if rest.get(i).is_some_and(|t| ctx.is_number(t, line)) {
                            i += 1;
                        }
                    }
                    tok if ctx.is_number(tok, line) && !params.contains_key("value") => {
                        params.insert("value".into(), ctx.value(tok, line)?);
                        i += 1;
                    }
                    _ => i += 1,
                }
            }
        }
        'e' | 'g' => {
            kind = if prefix == 'e' { DeviceKind::Vcvs } else { DeviceKind::Vccs };
            if positional.len() < 4 {
                return Err(too_few(line, &name, 4, positional.len()));
            }
            terminals = terms(fixed_ports(kind), &positional[..4]);
            if let Some(tok) = positional.get(4).filter(|t| ctx.is_number(t, line)) {
                params.insert("value".into(), ctx.value(tok, line)?);
            }
        }
        'f' | 'h' => {
            kind = if prefix == 'f' { DeviceKind::Cccs } else { DeviceKind::Ccvs };
            if positional.len() < 3 {
                return Err(too_few(line, &name, 2, positional.len().saturating_sub(1)));
            }
            terminals = terms(fixed_ports(kind), &positional[..2]);
            control = Some(positional[2].to_string());
            if let Some(tok) = positional.get(3).filter(|t| ctx.is_number(t, line)) {
                params.insert("value".into(), ctx.value(tok, line)?);
            }
        }
        'x' => {
            if positional.len() < 2 {
                return Err(too_few(line, &name, 1, 0));
            }
            kind = DeviceKind::Subckt;
            let (nets, sub) = positional.split_at(positional.len() - 1);
            let sub = sub[0].to_string();
            let names: Vec<String> = match ctx.subckt_ports(&sub) {
                Some(ports) if ports.len() == nets.len() => ports.clone(),
                _ => (1..=nets.len()).map(|i| format!("p{i}")).collect(),
            };
            terminals =
                names.into_iter().zip(nets).map(|(p, n)| Terminal { port: p, net: canonical_net(n) }).collect();
            model_ref = Some(sub);
        }
        _ => return Err(ParseError::UnknownCardPrefix { line, card: name }),
    }

    Ok(Device { name, kind, terminals, params, model_ref, control })
}
